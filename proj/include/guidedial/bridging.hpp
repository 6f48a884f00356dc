#pragma once

#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "guidedial/backbone.hpp"
#include "guidedial/corpus.hpp"

namespace guidedial {

struct KeywordDistribution {
  Eigen::VectorXd type_probs;
  Eigen::VectorXd topic_probs;
};

enum class SelectionMode { hard, soft };

std::string_view to_string(SelectionMode m);
/// Accepts "hard" or "soft"; throws ValidationError otherwise.
SelectionMode parse_selection_mode(std::string_view s);

struct Pick {
  int id = 0;
  double weight = 1.0;
  friend bool operator==(const Pick&, const Pick&) = default;
};

/// Keywords fed to the bridge. Picks are ordered by descending weight, then ascending id.
struct BridgeSelection {
  SelectionMode mode = SelectionMode::hard;
  std::vector<Pick> type_picks;
  std::vector<Pick> topic_picks;
  /// Set when soft selection found nothing above delta and fell back to the argmax.
  bool type_fallback = false;
  bool topic_fallback = false;
};

/// Fused representation: masked mean of the context plus pooled knowledge/profile,
/// each projected and gated before a final affine map. Returns 1 x d.
template <typename T>
typename Tape<T>::Var fuse_on_tape(Tape<T>& tape, const DialogueModel<T>& model, const EncodedSequence<T>& context,
                                   typename Tape<T>::Var knowledge, typename Tape<T>::Var profile);

template <typename T>
struct KeywordProbVars {
  typename Tape<T>::Var types;   // 1 x num_types
  typename Tape<T>::Var topics;  // 1 x num_topics
};

template <typename T>
KeywordProbVars<T> predict_on_tape(Tape<T>& tape, const DialogueModel<T>& model, typename Tape<T>::Var fused);

/// Two rows: max-pooled (weighted) type embeddings, then topic embeddings.
template <typename T>
typename Tape<T>::Var bridge_on_tape(Tape<T>& tape, const DialogueModel<T>& model, const BridgeSelection& selection);

template <typename T>
Eigen::VectorXd fuse(const DialogueModel<T>& model, const EncoderState<T>& context, const Eigen::VectorXd& knowledge,
                     const Eigen::VectorXd& profile);

template <typename T>
KeywordDistribution predict_keywords(const DialogueModel<T>& model, const Eigen::VectorXd& fused);

/// Top-m of each head. Ties go to the lower id. Throws ValidationError unless
/// 1 <= m <= min(num_types, num_topics).
BridgeSelection select_hard(const KeywordDistribution& dist, int m);

/// Every entry with probability >= delta, weighted by its probability; an empty
/// side falls back to its argmax. Throws ValidationError unless 0 <= delta <= 1.
BridgeSelection select_soft(const KeywordDistribution& dist, double delta);

/// Gold positives of the multi-hot target, each with weight 1.
BridgeSelection teacher_selection(const TrainingExample& example);

/// Pure form of bridge_on_tape over explicit embedding tables; returns 2 x d.
Eigen::MatrixXd bridge_state(const BridgeSelection& selection, const Eigen::MatrixXd& type_embedding,
                             const Eigen::MatrixXd& topic_embedding);

template <typename T>
Eigen::MatrixXd bridge_state(const DialogueModel<T>& model, const BridgeSelection& selection) {
  const auto& p = model.params();
  return bridge_state(selection, p.value(model.bridging().type_embedding).template cast<double>(),
                      p.value(model.bridging().topic_embedding).template cast<double>());
}

/// Per-keyword probabilities and picked flags, keyed by name.
nlohmann::json prediction_json(const KeywordDistribution& dist, const BridgeSelection& selection,
                               const KeywordInventory& inventory);

}  // namespace guidedial
