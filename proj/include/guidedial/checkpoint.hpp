#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "guidedial/corpus.hpp"
#include "guidedial/trainer.hpp"

namespace guidedial {

struct NamedTensor {
  std::string name;
  Matrix<float> value;
};

/// `<stem>.bin` holds little-endian float32 data back to back; `<stem>.json` lists
/// each tensor's name, shape, dtype and byte offset.
void write_tensors(const std::filesystem::path& dir, const std::string& stem, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(const std::filesystem::path& dir, const std::string& stem);

struct Checkpoint {
  std::unique_ptr<DialogueModel<float>> model;
  Vocabulary vocab;
  KeywordInventory inventory;
  /// Free-form run settings (objective flags, encode limits, m) saved alongside.
  nlohmann::json settings;
  std::optional<OptimizerState<float>> optimizer;
  std::optional<TrainState> state;
};

/// Writes into a sibling temporary directory and renames it over `dir`.
void save_checkpoint(const std::filesystem::path& dir, const DialogueModel<float>& model, const Vocabulary& vocab,
                     const KeywordInventory& inventory, const nlohmann::json& settings,
                     const OptimizerState<float>* optimizer = nullptr, const TrainState* state = nullptr);

/// Throws SchemaError if a tensor is missing or has the wrong shape, and
/// std::runtime_error naming the path on I/O failures.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace guidedial
