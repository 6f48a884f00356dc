#include "guidedial/scenario.hpp"

#include <algorithm>
#include <numeric>

#include "guidedial/errors.hpp"

namespace guidedial {

std::vector<std::pair<int, double>> ScenarioBias::top(int k) const {
  std::vector<int> order(static_cast<size_t>(normalized.size()));
  std::iota(order.begin(), order.end(), 0);
  k = std::clamp(k, 0, static_cast<int>(order.size()));
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    return normalized[a] != normalized[b] ? normalized[a] > normalized[b] : a < b;
  });
  std::vector<std::pair<int, double>> out;
  for (int i = 0; i < k; ++i) out.emplace_back(order[i], normalized[order[i]]);
  return out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  if (logits.size() == 0) return logits;
  Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

template <typename T>
typename Tape<T>::Var pool_on_tape(Tape<T>& tape, const DialogueModel<T>& model, const EncodedSequence<T>& enc,
                                   ScenarioSource which) {
  const PoolingSlots& s = which == ScenarioSource::knowledge ? model.scenario().knowledge : model.scenario().profile;
  auto mean = tape.masked_mean_rows(enc.hidden, enc.mask);
  return linear(tape, model, s.out, tape.tanh(linear(tape, model, s.hidden, mean)));
}

template <typename T>
typename Tape<T>::Var scenario_logits_on_tape(Tape<T>& tape, const DialogueModel<T>& model,
                                              typename Tape<T>::Var pooled_sum) {
  return tape.matmul_nt(pooled_sum, model.param(tape, model.scenario().bias_matrix));
}

template <typename T>
Eigen::VectorXd pool_scenario(const DialogueModel<T>& model, const EncoderState<T>& enc, ScenarioSource which) {
  if (enc.valid_rows() == 0) throw ValidationError("pool_scenario: encoder state is fully masked");
  Tape<T> tape(false);
  EncodedSequence<T> seq{tape.constant(enc.hidden), enc.mask};
  auto pooled = pool_on_tape(tape, model, seq, which);
  return tape.value(pooled).row(0).transpose().template cast<double>();
}

ScenarioBias scenario_bias(const PooledScenario& pooled, const Eigen::MatrixXd& bias_matrix) {
  if (pooled.knowledge.size() != bias_matrix.cols() || pooled.profile.size() != bias_matrix.cols()) {
    throw ValidationError("scenario_bias: pooled width does not match the bias matrix");
  }
  if (!pooled.knowledge.allFinite() || !pooled.profile.allFinite()) {
    throw NumericError("scenario_bias: pooled vectors contain non-finite values");
  }
  ScenarioBias b;
  b.logits = bias_matrix * (pooled.knowledge + pooled.profile);
  b.normalized = softmax(b.logits);
  return b;
}

PooledScenario ablate(PooledScenario pooled, bool drop_knowledge, bool drop_profile) {
  if (drop_knowledge) pooled.knowledge.setZero();
  if (drop_profile) pooled.profile.setZero();
  return pooled;
}

template typename Tape<float>::Var pool_on_tape(Tape<float>&, const DialogueModel<float>&,
                                                const EncodedSequence<float>&, ScenarioSource);
template typename Tape<double>::Var pool_on_tape(Tape<double>&, const DialogueModel<double>&,
                                                 const EncodedSequence<double>&, ScenarioSource);
template typename Tape<float>::Var scenario_logits_on_tape(Tape<float>&, const DialogueModel<float>&,
                                                           typename Tape<float>::Var);
template typename Tape<double>::Var scenario_logits_on_tape(Tape<double>&, const DialogueModel<double>&,
                                                            typename Tape<double>::Var);
template Eigen::VectorXd pool_scenario(const DialogueModel<float>&, const EncoderState<float>&, ScenarioSource);
template Eigen::VectorXd pool_scenario(const DialogueModel<double>&, const EncoderState<double>&, ScenarioSource);

}  // namespace guidedial
