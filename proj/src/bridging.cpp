#include "guidedial/bridging.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "guidedial/errors.hpp"

namespace guidedial {

std::string_view to_string(SelectionMode m) { return m == SelectionMode::hard ? "hard" : "soft"; }

SelectionMode parse_selection_mode(std::string_view s) {
  if (s == "hard") return SelectionMode::hard;
  if (s == "soft") return SelectionMode::soft;
  throw ValidationError("mode must be 'hard' or 'soft', got '" + std::string(s) + "'");
}

template <typename T>
typename Tape<T>::Var fuse_on_tape(Tape<T>& tape, const DialogueModel<T>& model, const EncodedSequence<T>& context,
                                   typename Tape<T>::Var knowledge, typename Tape<T>::Var profile) {
  const FusionSlots& f = model.bridging().fusion;
  auto gated = [&](const LinearSlots& proj, const LinearSlots& gate, typename Tape<T>::Var v) {
    return tape.mul(tape.sigmoid(linear(tape, model, gate, v)), linear(tape, model, proj, v));
  };
  auto ctx = tape.masked_mean_rows(context.hidden, context.mask);
  auto z = gated(f.proj_context, f.gate_context, ctx);
  z = tape.add(z, gated(f.proj_knowledge, f.gate_knowledge, knowledge));
  z = tape.add(z, gated(f.proj_profile, f.gate_profile, profile));
  return linear(tape, model, f.out, z);
}

template <typename T>
KeywordProbVars<T> predict_on_tape(Tape<T>& tape, const DialogueModel<T>& model, typename Tape<T>::Var fused) {
  const auto& b = model.bridging();
  return {tape.sigmoid(linear(tape, model, b.type_head, fused)),
          tape.sigmoid(linear(tape, model, b.topic_head, fused))};
}

namespace {

template <typename T>
typename Tape<T>::Var pool_picks(Tape<T>& tape, typename Tape<T>::Var table, const std::vector<Pick>& picks) {
  if (picks.empty()) throw ValidationError("bridge: empty keyword selection");
  std::vector<int> ids;
  std::vector<T> weights;
  bool unit = true;
  for (const auto& p : picks) {
    ids.push_back(p.id);
    weights.push_back(static_cast<T>(p.weight));
    unit = unit && p.weight == 1.0;
  }
  auto rows = tape.gather_rows(table, ids);
  if (!unit) rows = tape.scale_rows(rows, weights);
  return tape.max_rows(rows);
}

Eigen::RowVectorXd pool_picks(const Eigen::MatrixXd& table, const std::vector<Pick>& picks) {
  if (picks.empty()) throw ValidationError("bridge: empty keyword selection");
  Eigen::RowVectorXd out = picks[0].weight * table.row(picks[0].id);
  for (size_t i = 1; i < picks.size(); ++i) out = out.cwiseMax(picks[i].weight * table.row(picks[i].id));
  return out;
}

void order_picks(std::vector<Pick>& picks) {
  std::stable_sort(picks.begin(), picks.end(), [](const Pick& a, const Pick& b) {
    return a.weight != b.weight ? a.weight > b.weight : a.id < b.id;
  });
}

std::vector<int> ranked(const Eigen::VectorXd& probs) {
  std::vector<int> order(static_cast<size_t>(probs.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  return order;
}

std::vector<Pick> top_m(const Eigen::VectorXd& probs, int m) {
  auto order = ranked(probs);
  std::vector<Pick> picks;
  for (int i = 0; i < m; ++i) picks.push_back({order[static_cast<size_t>(i)], 1.0});
  order_picks(picks);
  return picks;
}

std::vector<Pick> above(const Eigen::VectorXd& probs, double delta, bool& fallback) {
  std::vector<Pick> picks;
  for (int j = 0; j < probs.size(); ++j) {
    if (probs[j] >= delta) picks.push_back({j, probs[j]});
  }
  fallback = picks.empty();
  if (fallback) {
    int best = ranked(probs).front();
    picks.push_back({best, probs[best]});
  }
  order_picks(picks);
  return picks;
}

void check_distribution(const KeywordDistribution& dist) {
  if (dist.type_probs.size() == 0 || dist.topic_probs.size() == 0) {
    throw ValidationError("keyword distribution is empty");
  }
  if (!dist.type_probs.allFinite() || !dist.topic_probs.allFinite()) {
    throw NumericError("keyword distribution contains non-finite values");
  }
}

}  // namespace

template <typename T>
typename Tape<T>::Var bridge_on_tape(Tape<T>& tape, const DialogueModel<T>& model, const BridgeSelection& selection) {
  auto types = pool_picks(tape, model.param(tape, model.bridging().type_embedding), selection.type_picks);
  auto topics = pool_picks(tape, model.param(tape, model.bridging().topic_embedding), selection.topic_picks);
  return tape.concat_rows({types, topics});
}

template <typename T>
Eigen::VectorXd fuse(const DialogueModel<T>& model, const EncoderState<T>& context, const Eigen::VectorXd& knowledge,
                     const Eigen::VectorXd& profile) {
  if (context.valid_rows() == 0) throw ValidationError("fuse: context encoding is fully masked");
  Tape<T> tape(false);
  EncodedSequence<T> seq{tape.constant(context.hidden), context.mask};
  auto k = tape.constant(knowledge.transpose().template cast<T>());
  auto u = tape.constant(profile.transpose().template cast<T>());
  auto out = fuse_on_tape(tape, model, seq, k, u);
  return tape.value(out).row(0).transpose().template cast<double>();
}

template <typename T>
KeywordDistribution predict_keywords(const DialogueModel<T>& model, const Eigen::VectorXd& fused) {
  Tape<T> tape(false);
  auto probs = predict_on_tape(tape, model, tape.constant(fused.transpose().template cast<T>()));
  return {tape.value(probs.types).row(0).transpose().template cast<double>(),
          tape.value(probs.topics).row(0).transpose().template cast<double>()};
}

BridgeSelection select_hard(const KeywordDistribution& dist, int m) {
  check_distribution(dist);
  int limit = static_cast<int>(std::min(dist.type_probs.size(), dist.topic_probs.size()));
  if (m < 1 || m > limit) {
    throw ValidationError("m must be in [1, " + std::to_string(limit) + "], got " + std::to_string(m));
  }
  BridgeSelection s;
  s.mode = SelectionMode::hard;
  s.type_picks = top_m(dist.type_probs, m);
  s.topic_picks = top_m(dist.topic_probs, m);
  return s;
}

BridgeSelection select_soft(const KeywordDistribution& dist, double delta) {
  if (!(delta >= 0.0 && delta <= 1.0)) {
    throw ValidationError("delta must be in [0, 1], got " + std::to_string(delta));
  }
  check_distribution(dist);
  BridgeSelection s;
  s.mode = SelectionMode::soft;
  s.type_picks = above(dist.type_probs, delta, s.type_fallback);
  s.topic_picks = above(dist.topic_probs, delta, s.topic_fallback);
  return s;
}

BridgeSelection teacher_selection(const TrainingExample& example) {
  BridgeSelection s;
  for (int j = 0; j < example.num_types; ++j) {
    if (example.keyword_targets[static_cast<size_t>(j)] > 0.5f) s.type_picks.push_back({j, 1.0});
  }
  for (int j = 0; j < example.num_topics; ++j) {
    if (example.keyword_targets[static_cast<size_t>(example.num_types + j)] > 0.5f) s.topic_picks.push_back({j, 1.0});
  }
  if (s.type_picks.empty() || s.topic_picks.empty()) {
    throw ValidationError("teacher_selection: example has no positive keyword labels");
  }
  return s;
}

Eigen::MatrixXd bridge_state(const BridgeSelection& selection, const Eigen::MatrixXd& type_embedding,
                             const Eigen::MatrixXd& topic_embedding) {
  Eigen::MatrixXd out(2, type_embedding.cols());
  out.row(0) = pool_picks(type_embedding, selection.type_picks);
  out.row(1) = pool_picks(topic_embedding, selection.topic_picks);
  return out;
}

nlohmann::json prediction_json(const KeywordDistribution& dist, const BridgeSelection& selection,
                               const KeywordInventory& inventory) {
  auto side = [](const Eigen::VectorXd& probs, const std::vector<Pick>& picks, const std::vector<std::string>& names) {
    std::vector<bool> picked(static_cast<size_t>(probs.size()), false);
    for (const auto& p : picks) picked[static_cast<size_t>(p.id)] = true;
    nlohmann::json arr = nlohmann::json::array();
    for (int j : ranked(probs)) {
      arr.push_back(nlohmann::json{
          {"name", names[static_cast<size_t>(j)]}, {"prob", probs[j]}, {"picked", static_cast<bool>(picked[j])}});
    }
    return arr;
  };
  return {{"type", side(dist.type_probs, selection.type_picks, inventory.types())},
          {"topic", side(dist.topic_probs, selection.topic_picks, inventory.topics())}};
}

#define GUIDEDIAL_INSTANTIATE(T)                                                                                 \
  template typename Tape<T>::Var fuse_on_tape(Tape<T>&, const DialogueModel<T>&, const EncodedSequence<T>&,     \
                                              typename Tape<T>::Var, typename Tape<T>::Var);                    \
  template KeywordProbVars<T> predict_on_tape(Tape<T>&, const DialogueModel<T>&, typename Tape<T>::Var);         \
  template typename Tape<T>::Var bridge_on_tape(Tape<T>&, const DialogueModel<T>&, const BridgeSelection&);      \
  template Eigen::VectorXd fuse(const DialogueModel<T>&, const EncoderState<T>&, const Eigen::VectorXd&,         \
                                const Eigen::VectorXd&);                                                         \
  template KeywordDistribution predict_keywords(const DialogueModel<T>&, const Eigen::VectorXd&);

GUIDEDIAL_INSTANTIATE(float)
GUIDEDIAL_INSTANTIATE(double)
#undef GUIDEDIAL_INSTANTIATE

}  // namespace guidedial
