#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "guidedial/bridging.hpp"
#include "guidedial/scenario.hpp"

namespace guidedial {

/// Switches and knobs shared by generation and evaluation.
struct InferenceOptions {
  bool use_csm = true;
  bool use_ikb = true;
  bool drop_knowledge = false;
  bool drop_profile = false;
  SelectionMode mode = SelectionMode::hard;
  int m = 4;
  double delta = 0.2;
  double lambda = 1.0;
  int max_decode_len = 100;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

/// Encoder memory the decoder cross-attends to: optional bridge rows, then the context.
template <typename T>
struct DecoderMemory {
  Matrix<T> rows;
  std::vector<std::uint8_t> mask;
};

/// Everything computed once per sample before decoding starts.
template <typename T>
struct GenerationContext {
  InferenceOptions options;
  EncoderState<T> context;
  PooledScenario pooled;
  std::optional<ScenarioBias> bias;  // set when use_csm
  std::optional<KeywordDistribution> keywords;  // set when use_ikb
  std::optional<BridgeSelection> selection;
  Eigen::MatrixXd bridge;  // 2 x d, empty without IKB
  DecoderMemory<T> memory;
  /// lambda * bias logits as added to the decoder output; empty without CSM.
  Vector<T> logit_bias;
};

/// Prepends the bridge rows (when non-empty) to the context states. With
/// `mask_bridge` the bridge rows are present but excluded from attention.
template <typename T>
DecoderMemory<T> build_memory(const EncoderState<T>& context, const Eigen::MatrixXd& bridge, bool mask_bridge = false);

template <typename T>
GenerationContext<T> prepare_context(const DialogueModel<T>& model, const TrainingExample& example,
                                     const InferenceOptions& options);

struct StepTrace {
  int token = 0;
  std::vector<std::pair<int, double>> top_logits;
  std::vector<std::pair<int, double>> top_bias;
};

struct GenerationResult {
  std::vector<int> tokens;  // without the end marker
  bool stopped = false;     // true when the end marker was produced before the length cap
  std::vector<StepTrace> trace;
};

/// Greedy decoding with the scenario bias added to every step's logits.
template <typename T>
GenerationResult generate(const DialogueModel<T>& model, const GenerationContext<T>& ctx, bool record_trace = false);

/// Per-token negative log-likelihood of `reference_ids` (ending in the end marker)
/// under the same biased logits generation uses.
template <typename T>
std::vector<double> score_reference(const DialogueModel<T>& model, const GenerationContext<T>& ctx,
                                    const std::vector<int>& reference_ids);

/// One JSON object per decoding step, tokens rendered through `vocab`.
nlohmann::json trace_json(const GenerationResult& result, const Vocabulary& vocab);

}  // namespace guidedial
