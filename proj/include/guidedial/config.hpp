#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "guidedial/generator.hpp"
#include "guidedial/model.hpp"
#include "guidedial/trainer.hpp"

namespace guidedial {

/// Everything a run needs, read from an INI file with sections
/// [run] [data] [model] [optimizer] [bridging] [scenario] [ablation] [generation].
struct RunConfig {
  std::filesystem::path data_dir;
  int min_count = 1;
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 1;

  ModelConfig model;  // vocab_size is filled from the data at train time
  OptimizerConfig optimizer;
  InferenceOptions inference;
  int bridge_switch_epoch = -1;

  /// Throws ValidationError whose message starts with the offending field path.
  void validate() const;

  EncodeLimits limits() const { return {model.max_src_len, model.max_tgt_len}; }
  ObjectiveOptions objective() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

/// Parses INI text. Relative paths are resolved against `base_dir`.
/// Syntax errors raise ParseError with the line; unknown keys and bad values
/// raise ValidationError naming "section.key".
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});

/// Reads and validates a config file; relative paths resolve against its directory.
RunConfig load_run_config(const std::filesystem::path& file);

}  // namespace guidedial
