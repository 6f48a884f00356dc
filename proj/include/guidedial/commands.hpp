#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "guidedial/config.hpp"
#include "guidedial/metrics.hpp"
#include "guidedial/synth.hpp"

namespace guidedial {

/// Command-line overrides layered over the inference settings of a config or checkpoint.
struct InferenceOverrides {
  std::optional<SelectionMode> mode;
  std::optional<int> m;
  std::optional<double> delta;
  std::optional<double> lambda;
  bool no_csm = false;
  bool no_ikb = false;
  bool drop_knowledge = false;
  bool drop_profile = false;

  void apply(InferenceOptions& options) const;
};

struct TrainCommand {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  InferenceOverrides overrides;
  /// Continue from <out>/checkpoint/last when it exists.
  bool resume = false;
};

struct TrainOutcome {
  std::filesystem::path output_dir;
  FitResult<float> fit;
};

/// Writes <out>/checkpoint/{best,last}, <out>/train_log.jsonl (one line per step),
/// <out>/epochs.jsonl and <out>/run_config.json. Progress lines go to `progress`.
TrainOutcome cmd_train(const TrainCommand& command, std::ostream& progress);

struct EvalCommand {
  std::filesystem::path checkpoint;
  std::string split = "test_id";
  /// Defaults to the data directory recorded in the checkpoint.
  std::optional<std::filesystem::path> data_dir;
  InferenceOverrides overrides;
  std::optional<std::filesystem::path> out;          // JSON report
  std::optional<std::filesystem::path> predictions;  // JSONL, one line per sample
};

/// Prints the table header and row to `table`. Throws ValidationError for an
/// unknown split and when test_ood shares targets with train.
EvalReport cmd_evaluate(const EvalCommand& command, std::ostream& table);

struct GenerateCommand {
  std::filesystem::path checkpoint;
  std::string split = "test_id";
  std::optional<std::filesystem::path> data_dir;
  InferenceOverrides overrides;
  long first = 0;
  long count = 1;
};

/// One JSON line per sample: index, target, generated, reference, achieved.
void cmd_generate(const GenerateCommand& command, std::ostream& out);

struct InspectCommand {
  std::filesystem::path checkpoint;
  std::string split = "test_id";
  std::optional<std::filesystem::path> data_dir;
  InferenceOverrides overrides;
  long index = 0;
  int top_k = 10;
};

/// Top-k scenario bias tokens, the keyword distribution, the selection and the
/// decoding trace for one sample. Throws std::out_of_range for a bad index.
nlohmann::json cmd_inspect(const InspectCommand& command);

/// Writes the four split files into `out`.
void cmd_synth(const SynthOptions& options, const std::filesystem::path& out);

}  // namespace guidedial
