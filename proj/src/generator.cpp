#include "guidedial/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "guidedial/errors.hpp"

namespace guidedial {

void InferenceOptions::validate() const {
  if (m < 1) throw ValidationError("m must be >= 1, got " + std::to_string(m));
  if (!(delta >= 0.0 && delta <= 1.0)) throw ValidationError("delta must be in [0, 1], got " + std::to_string(delta));
  if (!std::isfinite(lambda)) throw ValidationError("lambda must be finite");
  if (max_decode_len < 1) throw ValidationError("max_decode_len must be >= 1");
}

template <typename T>
DecoderMemory<T> build_memory(const EncoderState<T>& context, const Eigen::MatrixXd& bridge, bool mask_bridge) {
  DecoderMemory<T> mem;
  if (bridge.size() == 0) {
    mem.rows = context.hidden;
    mem.mask = context.mask;
    return mem;
  }
  if (bridge.cols() != context.hidden.cols()) throw ValidationError("build_memory: bridge width mismatch");
  mem.rows.resize(bridge.rows() + context.hidden.rows(), context.hidden.cols());
  mem.rows.topRows(bridge.rows()) = bridge.cast<T>();
  mem.rows.bottomRows(context.hidden.rows()) = context.hidden;
  mem.mask.assign(static_cast<size_t>(bridge.rows()), mask_bridge ? 0 : 1);
  mem.mask.insert(mem.mask.end(), context.mask.begin(), context.mask.end());
  return mem;
}

template <typename T>
GenerationContext<T> prepare_context(const DialogueModel<T>& model, const TrainingExample& example,
                                     const InferenceOptions& options) {
  options.validate();
  GenerationContext<T> ctx;
  ctx.options = options;
  ctx.context = encode(model, example.context_ids);
  const int d = model.config().d;
  ctx.pooled.knowledge = Eigen::VectorXd::Zero(d);
  ctx.pooled.profile = Eigen::VectorXd::Zero(d);
  if (options.use_csm) {
    if (!options.drop_knowledge) {
      ctx.pooled.knowledge = pool_scenario(model, encode(model, example.knowledge_ids), ScenarioSource::knowledge);
    }
    if (!options.drop_profile) {
      ctx.pooled.profile = pool_scenario(model, encode(model, example.profile_ids), ScenarioSource::profile);
    }
    ctx.bias = scenario_bias(ctx.pooled, bias_matrix(model));
    ctx.logit_bias = (options.lambda * ctx.bias->logits).template cast<T>();
  }
  if (options.use_ikb) {
    Eigen::VectorXd fused = fuse(model, ctx.context, ctx.pooled.knowledge, ctx.pooled.profile);
    ctx.keywords = predict_keywords(model, fused);
    ctx.selection = options.mode == SelectionMode::hard ? select_hard(*ctx.keywords, options.m)
                                                        : select_soft(*ctx.keywords, options.delta);
    ctx.bridge = bridge_state(model, *ctx.selection);
  }
  ctx.memory = build_memory(ctx.context, ctx.bridge);
  return ctx;
}

namespace {

template <typename T>
std::vector<std::pair<int, double>> top_entries(const Vector<T>& v, int k) {
  std::vector<int> order(static_cast<size_t>(v.size()));
  std::iota(order.begin(), order.end(), 0);
  k = std::min<int>(k, static_cast<int>(order.size()));
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](int a, int b) { return v[a] != v[b] ? v[a] > v[b] : a < b; });
  std::vector<std::pair<int, double>> out;
  for (int i = 0; i < k; ++i) out.emplace_back(order[i], static_cast<double>(v[order[i]]));
  return out;
}

}  // namespace

template <typename T>
GenerationResult generate(const DialogueModel<T>& model, const GenerationContext<T>& ctx, bool record_trace) {
  const int cap = std::min(ctx.options.max_decode_len, model.config().max_tgt_len);
  const Vector<T>* bias = ctx.logit_bias.size() > 0 ? &ctx.logit_bias : nullptr;
  GenerationResult result;
  auto [logits, state] = decode_step(model, {Vocabulary::kBos}, ctx.memory.rows, ctx.memory.mask, bias);
  while (true) {
    Eigen::Index best;
    logits.maxCoeff(&best);
    if (record_trace) {
      StepTrace step;
      step.token = static_cast<int>(best);
      step.top_logits = top_entries(logits, 5);
      for (const auto& [id, _] : step.top_logits) step.top_bias.emplace_back(id, bias ? double((*bias)[id]) : 0.0);
      result.trace.push_back(std::move(step));
    }
    if (best == Vocabulary::kEos) {
      result.stopped = true;
      break;
    }
    result.tokens.push_back(static_cast<int>(best));
    if (static_cast<int>(result.tokens.size()) >= cap) break;
    logits = decode_next(model, state, static_cast<int>(best), ctx.memory.rows, ctx.memory.mask, bias);
  }
  return result;
}

template <typename T>
std::vector<double> score_reference(const DialogueModel<T>& model, const GenerationContext<T>& ctx,
                                    const std::vector<int>& reference_ids) {
  if (reference_ids.empty()) throw ValidationError("score_reference: empty reference");
  std::vector<int> inputs{Vocabulary::kBos};
  inputs.insert(inputs.end(), reference_ids.begin(), reference_ids.end() - 1);
  Tape<T> tape(false);
  auto hidden = decode_on_tape(tape, model, inputs, tape.constant(ctx.memory.rows), ctx.memory.mask,
                               static_cast<DecoderCache<T>*>(nullptr));
  Matrix<T> logits = tape.value(output_logits(tape, model, hidden));
  std::vector<double> nll;
  for (long r = 0; r < logits.rows(); ++r) {
    Eigen::VectorXd z = logits.row(r).transpose().template cast<double>();
    if (ctx.logit_bias.size() > 0) z += ctx.logit_bias.template cast<double>();
    double mx = z.maxCoeff();
    double lse = mx + std::log((z.array() - mx).exp().sum());
    nll.push_back(lse - z[reference_ids[static_cast<size_t>(r)]]);
  }
  return nll;
}

nlohmann::json trace_json(const GenerationResult& result, const Vocabulary& vocab) {
  nlohmann::json steps = nlohmann::json::array();
  for (size_t i = 0; i < result.trace.size(); ++i) {
    const auto& s = result.trace[i];
    nlohmann::json top = nlohmann::json::array();
    for (size_t k = 0; k < s.top_logits.size(); ++k) {
      top.push_back(nlohmann::json{{"token", vocab.token(s.top_logits[k].first)},
                                   {"logit", s.top_logits[k].second},
                                   {"bias", s.top_bias[k].second}});
    }
    steps.push_back(nlohmann::json{{"step", i}, {"token", vocab.token(s.token)}, {"top", std::move(top)}});
  }
  return steps;
}

#define GUIDEDIAL_INSTANTIATE(T)                                                                               \
  template DecoderMemory<T> build_memory(const EncoderState<T>&, const Eigen::MatrixXd&, bool);                \
  template GenerationContext<T> prepare_context(const DialogueModel<T>&, const TrainingExample&,              \
                                                const InferenceOptions&);                                     \
  template GenerationResult generate(const DialogueModel<T>&, const GenerationContext<T>&, bool);             \
  template std::vector<double> score_reference(const DialogueModel<T>&, const GenerationContext<T>&,          \
                                               const std::vector<int>&);

GUIDEDIAL_INSTANTIATE(float)
GUIDEDIAL_INSTANTIATE(double)
#undef GUIDEDIAL_INSTANTIATE

}  // namespace guidedial
