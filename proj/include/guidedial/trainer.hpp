#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "guidedial/bridging.hpp"
#include "guidedial/scenario.hpp"

namespace guidedial {

/// Where the bridge keywords come from during training.
enum class BridgeSource { teacher, model };

struct ObjectiveOptions {
  bool use_csm = true;
  bool use_ikb = true;
  bool drop_knowledge = false;
  bool drop_profile = false;
  double lambda = 1.0;
  BridgeSource bridge = BridgeSource::teacher;
  int m = 4;  // hard selection size when bridge == model
};

template <typename T>
struct ObjectiveTerms {
  typename Tape<T>::Var total;
  typename Tape<T>::Var lm;
  typename Tape<T>::Var cls;  // invalid without IKB
};

/// Full forward pass for one example: scenario bias on the decoder logits, keyword
/// heads with their BCE loss, bridge rows prepended to the decoder memory.
template <typename T>
ObjectiveTerms<T> build_objective(Tape<T>& tape, const DialogueModel<T>& model, const TrainingExample& example,
                                  const ObjectiveOptions& options, const Dropout<T>& dropout = {});

/// Mean binary cross-entropy over all type and topic labels (probabilities clamped
/// to [1e-7, 1 - 1e-7]). `targets` is laid out [types | topics].
double loss_cls(const KeywordDistribution& dist, const std::vector<float>& targets);

/// Mean token negative log-likelihood; step_logits[i] scores targets[i]. Pad targets are skipped.
double loss_lm(const std::vector<Eigen::VectorXd>& step_logits, const std::vector<int>& targets);

struct OptimizerConfig {
  double learning_rate = 3e-5;
  int batch_size = 8;
  int epochs = 50;
  /// Linear warmup length; negative means warmup_fraction of the total step count.
  long warmup_steps = -1;
  double warmup_fraction = 0.05;
  double clip_norm = 1.0;  // <= 0 disables clipping
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& j);
};

/// Learning rate for 1-based `step`: linear warmup, then constant.
double learning_rate_at(const OptimizerConfig& config, long step, long total_steps);

template <typename T>
struct OptimizerState {
  long step = 0;
  std::vector<Matrix<T>> first;
  std::vector<Matrix<T>> second;

  void init(const ParamStore<T>& params);
};

template <typename T>
using Gradients = std::vector<Matrix<T>>;

template <typename T>
double global_norm(const Gradients<T>& grads);

/// Rescales to `max_norm` when the global norm exceeds it; returns the norm before clipping.
template <typename T>
double clip_gradients(Gradients<T>& grads, double max_norm);

/// Decoupled AdamW. Weight decay applies to matrices with more than one row only
/// (biases, norms and other row vectors are not decayed).
template <typename T>
void adamw_update(ParamStore<T>& params, OptimizerState<T>& state, const Gradients<T>& grads, double lr,
                  const OptimizerConfig& config);

struct TrainState {
  long step = 0;
  int epoch = 0;  // epochs completed
  double lr = 0.0;
  double loss_lm = 0.0;
  double loss_cls = 0.0;
  double loss_total = 0.0;
  double grad_norm = 0.0;
  double best_dev = std::numeric_limits<double>::infinity();

  nlohmann::json to_json() const;
  static TrainState from_json(const nlohmann::json& j);
  /// One training-log line: step, lr, losses and gradient norm.
  nlohmann::json log_record() const;
};

/// Gradient of the batch-mean objective. Throws NumericError naming the sample on a non-finite loss.
template <typename T>
Gradients<T> batch_gradients(const DialogueModel<T>& model, const std::vector<const TrainingExample*>& batch,
                             const ObjectiveOptions& options, const Dropout<T>& dropout, TrainState& losses);

/// One optimizer update on `batch`; returns the updated state.
template <typename T>
TrainState train_step(DialogueModel<T>& model, OptimizerState<T>& optimizer, const std::vector<const TrainingExample*>& batch,
                      TrainState state, const ObjectiveOptions& objective, const OptimizerConfig& config,
                      long total_steps, std::mt19937_64* dropout_rng = nullptr);

/// Mean objective terms over `examples` without dropout or updates.
template <typename T>
TrainState evaluate_loss(const DialogueModel<T>& model, const std::vector<TrainingExample>& examples,
                         const ObjectiveOptions& options);

struct EpochSummary {
  int epoch = 0;
  long step = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  bool improved = false;
};

template <typename T>
struct FitOptions {
  ObjectiveOptions objective;
  /// First epoch (0-based) that trains on the model's own hard selections; negative means never.
  int bridge_switch_epoch = -1;
  /// Resume from these instead of starting fresh.
  std::optional<OptimizerState<T>> resume_optimizer;
  std::optional<TrainState> resume_state;
  std::ostream* log = nullptr;  // JSONL, one line per step
  /// Called with "best" when the dev loss improves and "last" after every epoch.
  std::function<void(std::string_view, const OptimizerState<T>&, const TrainState&)> checkpoint;
  std::function<void(const EpochSummary&)> on_epoch;
};

template <typename T>
struct FitResult {
  TrainState state;
  std::vector<EpochSummary> epochs;
};

/// Epoch loop with per-epoch shuffling (seeded by config.seed and the epoch index).
template <typename T>
FitResult<T> fit(DialogueModel<T>& model, const std::vector<TrainingExample>& train,
                 const std::vector<TrainingExample>& dev, const OptimizerConfig& config, const FitOptions<T>& options);

struct GradCheckEntry {
  std::string param;
  ParamGroup group = ParamGroup::backbone;
  int row = 0;
  int col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::vector<ParamGroup> groups_covered() const;
};

/// Compares tape gradients of the objective against central differences at
/// `per_group` random coordinates of each parameter group. Coordinates are drawn
/// among those whose analytic gradient magnitude is at least `min_grad`.
GradCheckReport grad_check(DialogueModel<double>& model, const TrainingExample& example,
                           const ObjectiveOptions& options, int per_group, double eps = 1e-5,
                           std::uint64_t seed = 1, double min_grad = 1e-7);

}  // namespace guidedial
