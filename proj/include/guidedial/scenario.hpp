#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "guidedial/backbone.hpp"

namespace guidedial {

enum class ScenarioSource { knowledge, profile };

/// Pooled knowledge and profile summaries; zero vectors when ablated.
struct PooledScenario {
  Eigen::VectorXd knowledge;
  Eigen::VectorXd profile;
};

/// Vocabulary-length scenario bias: raw logits and their softmax.
struct ScenarioBias {
  Eigen::VectorXd logits;
  Eigen::VectorXd normalized;

  /// Top `k` entries of `normalized` as (token id, probability), highest first, ties by id.
  std::vector<std::pair<int, double>> top(int k) const;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Masked mean over rows followed by hidden -> tanh -> out, with the parameters of `which`.
template <typename T>
typename Tape<T>::Var pool_on_tape(Tape<T>& tape, const DialogueModel<T>& model, const EncodedSequence<T>& enc,
                                   ScenarioSource which);

/// (f_k + f_u) * B^T as a 1 x vocab row.
template <typename T>
typename Tape<T>::Var scenario_logits_on_tape(Tape<T>& tape, const DialogueModel<T>& model,
                                              typename Tape<T>::Var pooled_sum);

/// Throws ValidationError when every row of `enc` is masked.
template <typename T>
Eigen::VectorXd pool_scenario(const DialogueModel<T>& model, const EncoderState<T>& enc, ScenarioSource which);

/// logits = B (f_k + f_u), normalized = softmax(logits). Throws NumericError on non-finite input.
ScenarioBias scenario_bias(const PooledScenario& pooled, const Eigen::MatrixXd& bias_matrix);

PooledScenario ablate(PooledScenario pooled, bool drop_knowledge, bool drop_profile);

template <typename T>
Eigen::MatrixXd bias_matrix(const DialogueModel<T>& model) {
  return model.params().value(model.scenario().bias_matrix).template cast<double>();
}

}  // namespace guidedial
