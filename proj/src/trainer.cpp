#include "guidedial/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "guidedial/errors.hpp"

namespace guidedial {

template <typename T>
ObjectiveTerms<T> build_objective(Tape<T>& tape, const DialogueModel<T>& model, const TrainingExample& example,
                                  const ObjectiveOptions& options, const Dropout<T>& dropout) {
  using Var = typename Tape<T>::Var;
  const int d = model.config().d;
  if (example.reference_ids.empty()) throw ValidationError("objective: empty reference");

  EncodedSequence<T> ctx = encode_on_tape(tape, model, example.context_ids, dropout);
  Var fk = tape.zeros(1, d);
  Var fu = tape.zeros(1, d);
  if (options.use_csm) {
    if (!options.drop_knowledge) {
      fk = pool_on_tape(tape, model, encode_on_tape(tape, model, example.knowledge_ids, dropout),
                        ScenarioSource::knowledge);
    }
    if (!options.drop_profile) {
      fu = pool_on_tape(tape, model, encode_on_tape(tape, model, example.profile_ids, dropout), ScenarioSource::profile);
    }
  }

  ObjectiveTerms<T> terms;
  Var memory = ctx.hidden;
  std::vector<std::uint8_t> memory_mask = ctx.mask;
  if (options.use_ikb) {
    Var fused = fuse_on_tape(tape, model, ctx, fk, fu);
    KeywordProbVars<T> probs = predict_on_tape(tape, model, fused);
    terms.cls = tape.binary_cross_entropy(tape.concat_cols({probs.types, probs.topics}), example.keyword_targets);
    BridgeSelection selection;
    if (options.bridge == BridgeSource::teacher) {
      selection = teacher_selection(example);
    } else {
      KeywordDistribution dist{tape.value(probs.types).row(0).transpose().template cast<double>(),
                               tape.value(probs.topics).row(0).transpose().template cast<double>()};
      selection = select_hard(dist, options.m);
    }
    memory = tape.concat_rows({bridge_on_tape(tape, model, selection), ctx.hidden});
    memory_mask.insert(memory_mask.begin(), 2, 1);
  }

  std::vector<int> inputs{Vocabulary::kBos};
  inputs.insert(inputs.end(), example.reference_ids.begin(), example.reference_ids.end() - 1);
  std::vector<int> targets = example.reference_ids;
  for (auto& t : targets) {
    if (t == Vocabulary::kPad) t = -1;
  }
  Var hidden = decode_on_tape(tape, model, inputs, memory, memory_mask, static_cast<DecoderCache<T>*>(nullptr), dropout);
  Var logits = output_logits(tape, model, hidden);
  if (options.use_csm) {
    Var s = scenario_logits_on_tape(tape, model, tape.add(fk, fu));
    if (options.lambda != 1.0) s = tape.scale(s, static_cast<T>(options.lambda));
    logits = tape.add_row(logits, s);
  }
  terms.lm = tape.cross_entropy(logits, targets);
  terms.total = options.use_ikb ? tape.add(terms.lm, terms.cls) : terms.lm;
  return terms;
}

double loss_cls(const KeywordDistribution& dist, const std::vector<float>& targets) {
  const long n = dist.type_probs.size() + dist.topic_probs.size();
  if (static_cast<long>(targets.size()) != n) throw ValidationError("loss_cls: target length mismatch");
  double total = 0.0;
  for (long j = 0; j < n; ++j) {
    double p = j < dist.type_probs.size() ? dist.type_probs[j] : dist.topic_probs[j - dist.type_probs.size()];
    p = std::clamp(p, 1e-7, 1.0 - 1e-7);
    double y = targets[static_cast<size_t>(j)];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return total / static_cast<double>(n);
}

double loss_lm(const std::vector<Eigen::VectorXd>& step_logits, const std::vector<int>& targets) {
  if (step_logits.size() != targets.size()) throw ValidationError("loss_lm: length mismatch");
  double total = 0.0;
  int count = 0;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == Vocabulary::kPad) continue;
    const auto& z = step_logits[i];
    double mx = z.maxCoeff();
    total += mx + std::log((z.array() - mx).exp().sum()) - z[targets[i]];
    ++count;
  }
  return count ? total / count : 0.0;
}

// ---------------------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("optimizer.lr must be > 0");
  if (batch_size < 1) throw ValidationError("optimizer.batch_size must be >= 1");
  if (epochs < 0) throw ValidationError("optimizer.epochs must be >= 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ValidationError("optimizer.warmup_fraction must be in [0, 1]");
  }
  if (weight_decay < 0.0) throw ValidationError("optimizer.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("optimizer betas must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ValidationError("optimizer.epsilon must be > 0");
}

nlohmann::json OptimizerConfig::to_json() const {
  return {{"lr", learning_rate},   {"batch_size", batch_size},     {"epochs", epochs},
          {"warmup_steps", warmup_steps}, {"warmup_fraction", warmup_fraction}, {"clip_norm", clip_norm},
          {"weight_decay", weight_decay}, {"beta1", beta1}, {"beta2", beta2}, {"epsilon", epsilon}, {"seed", seed}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  c.learning_rate = j.value("lr", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.seed = j.value("seed", c.seed);
  return c;
}

double learning_rate_at(const OptimizerConfig& config, long step, long total_steps) {
  long warm = config.warmup_steps >= 0
                  ? config.warmup_steps
                  : static_cast<long>(std::ceil(config.warmup_fraction * static_cast<double>(total_steps)));
  if (warm > 0 && step < warm) return config.learning_rate * static_cast<double>(step) / static_cast<double>(warm);
  return config.learning_rate;
}

template <typename T>
void OptimizerState<T>::init(const ParamStore<T>& params) {
  step = 0;
  first.clear();
  second.clear();
  for (int i = 0; i < params.size(); ++i) {
    first.push_back(Matrix<T>::Zero(params.value(i).rows(), params.value(i).cols()));
    second.push_back(Matrix<T>::Zero(params.value(i).rows(), params.value(i).cols()));
  }
}

template <typename T>
double global_norm(const Gradients<T>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

template <typename T>
double clip_gradients(Gradients<T>& grads, double max_norm) {
  double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    T s = static_cast<T>(max_norm / norm);
    for (auto& g : grads) g *= s;
  }
  return norm;
}

template <typename T>
void adamw_update(ParamStore<T>& params, OptimizerState<T>& state, const Gradients<T>& grads, double lr,
                  const OptimizerConfig& config) {
  if (static_cast<int>(state.first.size()) != params.size()) state.init(params);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  for (int i = 0; i < params.size(); ++i) {
    auto& p = params.value(i);
    const auto& g = grads[static_cast<size_t>(i)];
    auto& m = state.first[static_cast<size_t>(i)];
    auto& v = state.second[static_cast<size_t>(i)];
    if (config.weight_decay > 0.0 && p.rows() > 1) p *= static_cast<T>(1.0 - lr * config.weight_decay);
    m = b1 * m + (T(1) - b1) * g;
    v.array() = b2 * v.array() + (T(1) - b2) * g.array().square();
    p.array() -= static_cast<T>(lr / bc1) * m.array() /
                 ((v.array() / static_cast<T>(bc2)).sqrt() + static_cast<T>(config.epsilon));
  }
}

nlohmann::json TrainState::to_json() const {
  nlohmann::json j = log_record();
  j["epoch"] = epoch;
  j["best_dev"] = std::isfinite(best_dev) ? nlohmann::json(best_dev) : nlohmann::json(nullptr);
  return j;
}

TrainState TrainState::from_json(const nlohmann::json& j) {
  TrainState s;
  s.step = j.at("step").get<long>();
  s.epoch = j.at("epoch").get<int>();
  s.lr = j.value("lr", 0.0);
  s.loss_lm = j.value("loss_lm", 0.0);
  s.loss_cls = j.value("loss_cls", 0.0);
  s.loss_total = j.value("loss_total", 0.0);
  s.grad_norm = j.value("grad_norm", 0.0);
  if (j.contains("best_dev") && !j["best_dev"].is_null()) s.best_dev = j["best_dev"].get<double>();
  return s;
}

nlohmann::json TrainState::log_record() const {
  return {{"step", step},         {"lr", lr},           {"loss_lm", loss_lm},
          {"loss_cls", loss_cls}, {"loss_total", loss_total}, {"grad_norm", grad_norm}};
}

template <typename T>
Gradients<T> batch_gradients(const DialogueModel<T>& model, const std::vector<const TrainingExample*>& batch,
                             const ObjectiveOptions& options, const Dropout<T>& dropout, TrainState& losses) {
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  const auto& params = model.params();
  Gradients<T> grads;
  for (int i = 0; i < params.size(); ++i) grads.push_back(Matrix<T>::Zero(params.value(i).rows(), params.value(i).cols()));
  const T inv = T(1) / static_cast<T>(batch.size());
  losses.loss_lm = losses.loss_cls = losses.loss_total = 0.0;
  for (size_t b = 0; b < batch.size(); ++b) {
    Tape<T> tape;
    ObjectiveTerms<T> terms = build_objective(tape, model, *batch[b], options, dropout);
    double lm = static_cast<double>(tape.value(terms.lm)(0, 0));
    double cls = terms.cls.valid() ? static_cast<double>(tape.value(terms.cls)(0, 0)) : 0.0;
    if (!std::isfinite(lm) || !std::isfinite(cls)) {
      throw NumericError("non-finite loss at batch item " + std::to_string(b) + " (loss_lm=" + std::to_string(lm) +
                         ", loss_cls=" + std::to_string(cls) + ")");
    }
    losses.loss_lm += lm / static_cast<double>(batch.size());
    losses.loss_cls += cls / static_cast<double>(batch.size());
    tape.backward(terms.total);
    tape.for_each_parameter_grad([&](int slot, const Matrix<T>& g) { grads[static_cast<size_t>(slot)] += inv * g; });
  }
  losses.loss_total = losses.loss_lm + losses.loss_cls;
  return grads;
}

template <typename T>
TrainState train_step(DialogueModel<T>& model, OptimizerState<T>& optimizer, const std::vector<const TrainingExample*>& batch,
                      TrainState state, const ObjectiveOptions& objective, const OptimizerConfig& config,
                      long total_steps, std::mt19937_64* dropout_rng) {
  Dropout<T> dropout{static_cast<T>(model.config().dropout), dropout_rng};
  Gradients<T> grads = batch_gradients(model, batch, objective, dropout, state);
  state.grad_norm = clip_gradients(grads, config.clip_norm);
  if (!std::isfinite(state.grad_norm)) {
    throw NumericError("non-finite gradient norm at step " + std::to_string(state.step + 1));
  }
  state.step += 1;
  state.lr = learning_rate_at(config, state.step, total_steps);
  adamw_update(model.params(), optimizer, grads, state.lr, config);
  return state;
}

template <typename T>
TrainState evaluate_loss(const DialogueModel<T>& model, const std::vector<TrainingExample>& examples,
                         const ObjectiveOptions& options) {
  TrainState out;
  if (examples.empty()) return out;
  for (const auto& ex : examples) {
    Tape<T> tape(false);
    ObjectiveTerms<T> terms = build_objective(tape, model, ex, options);
    out.loss_lm += static_cast<double>(tape.value(terms.lm)(0, 0));
    if (terms.cls.valid()) out.loss_cls += static_cast<double>(tape.value(terms.cls)(0, 0));
  }
  out.loss_lm /= static_cast<double>(examples.size());
  out.loss_cls /= static_cast<double>(examples.size());
  out.loss_total = out.loss_lm + out.loss_cls;
  return out;
}

template <typename T>
FitResult<T> fit(DialogueModel<T>& model, const std::vector<TrainingExample>& train,
                 const std::vector<TrainingExample>& dev, const OptimizerConfig& config, const FitOptions<T>& options) {
  config.validate();
  if (train.empty()) throw ValidationError("fit: training split is empty");
  const long per_epoch = (static_cast<long>(train.size()) + config.batch_size - 1) / config.batch_size;
  const long total_steps = per_epoch * config.epochs;

  OptimizerState<T> optimizer;
  if (options.resume_optimizer) {
    optimizer = *options.resume_optimizer;
  } else {
    optimizer.init(model.params());
  }
  FitResult<T> result;
  result.state = options.resume_state.value_or(TrainState{});
  TrainState& state = result.state;
  std::mt19937_64 dropout_rng(config.seed * 0x9E3779B97F4A7C15ULL + 1);

  auto objective_for = [&](int epoch) {
    ObjectiveOptions o = options.objective;
    if (options.bridge_switch_epoch >= 0 && epoch >= options.bridge_switch_epoch) o.bridge = BridgeSource::model;
    return o;
  };

  if (config.epochs == 0) {
    state.best_dev = evaluate_loss(model, dev.empty() ? train : dev, objective_for(0)).loss_total;
    if (options.checkpoint) {
      options.checkpoint("best", optimizer, state);
      options.checkpoint("last", optimizer, state);
    }
    return result;
  }

  for (int epoch = state.epoch; epoch < config.epochs; ++epoch) {
    ObjectiveOptions objective = objective_for(epoch);
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 shuffle_rng(config.seed + 1000003ULL * static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    for (long b = 0; b < per_epoch; ++b) {
      std::vector<const TrainingExample*> batch;
      for (long i = b * config.batch_size; i < std::min<long>((b + 1) * config.batch_size, static_cast<long>(train.size())); ++i) {
        batch.push_back(&train[order[static_cast<size_t>(i)]]);
      }
      state = train_step(model, optimizer, batch, state, objective, config, total_steps, &dropout_rng);
      epoch_loss += state.loss_total / static_cast<double>(per_epoch);
      if (options.log) *options.log << state.log_record().dump() << '\n';
    }
    state.epoch = epoch + 1;

    EpochSummary summary;
    summary.epoch = epoch;
    summary.step = state.step;
    summary.train_loss = epoch_loss;
    summary.dev_loss = dev.empty() ? epoch_loss : evaluate_loss(model, dev, objective).loss_total;
    summary.improved = summary.dev_loss < state.best_dev;
    if (summary.improved) state.best_dev = summary.dev_loss;
    if (options.log) options.log->flush();
    if (options.checkpoint) {
      if (summary.improved) options.checkpoint("best", optimizer, state);
      options.checkpoint("last", optimizer, state);
    }
    result.epochs.push_back(summary);
    if (options.on_epoch) options.on_epoch(summary);
  }
  return result;
}

// ---------------------------------------------------------------------------

std::vector<ParamGroup> GradCheckReport::groups_covered() const {
  std::set<int> seen;
  for (const auto& e : entries) seen.insert(static_cast<int>(e.group));
  std::vector<ParamGroup> out;
  for (int g : seen) out.push_back(static_cast<ParamGroup>(g));
  return out;
}

GradCheckReport grad_check(DialogueModel<double>& model, const TrainingExample& example,
                           const ObjectiveOptions& options, int per_group, double eps, std::uint64_t seed,
                           double min_grad) {
  auto& params = model.params();
  std::vector<Matrix<double>> grads(static_cast<size_t>(params.size()));
  {
    Tape<double> tape;
    auto terms = build_objective(tape, model, example, options);
    tape.backward(terms.total);
    tape.for_each_parameter_grad([&](int slot, const Matrix<double>& g) { grads[static_cast<size_t>(slot)] = g; });
  }
  auto loss_value = [&] {
    Tape<double> tape(false);
    return tape.value(build_objective(tape, model, example, options).total)(0, 0);
  };

  struct Coord {
    int slot;
    long index;
  };
  std::vector<std::vector<Coord>> by_group(static_cast<size_t>(ParamGroup::fusion) + 1);
  for (int slot = 0; slot < params.size(); ++slot) {
    const auto& g = grads[static_cast<size_t>(slot)];
    if (g.size() == 0) continue;
    auto group = static_cast<size_t>(param_group(params.name(slot)));
    for (long i = 0; i < g.size(); ++i) {
      if (std::abs(g.data()[i]) >= min_grad) by_group[group].push_back({slot, i});
    }
  }

  std::mt19937_64 rng(seed);
  GradCheckReport report;
  for (size_t group = 0; group < by_group.size(); ++group) {
    auto& coords = by_group[group];
    std::shuffle(coords.begin(), coords.end(), rng);
    const size_t take = std::min(coords.size(), static_cast<size_t>(per_group));
    for (size_t k = 0; k < take; ++k) {
      const auto [slot, index] = coords[k];
      double& w = params.value(slot).data()[index];
      const double orig = w;
      w = orig + eps;
      const double up = loss_value();
      w = orig - eps;
      const double down = loss_value();
      w = orig;

      GradCheckEntry e;
      e.param = params.name(slot);
      e.group = static_cast<ParamGroup>(group);
      e.row = static_cast<int>(index / params.value(slot).cols());
      e.col = static_cast<int>(index % params.value(slot).cols());
      e.analytic = grads[static_cast<size_t>(slot)].data()[index];
      e.numeric = (up - down) / (2.0 * eps);
      e.rel_error = std::abs(e.analytic - e.numeric) / std::max(std::abs(e.analytic), std::abs(e.numeric));
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

#define GUIDEDIAL_INSTANTIATE(T)                                                                                   \
  template ObjectiveTerms<T> build_objective(Tape<T>&, const DialogueModel<T>&, const TrainingExample&,            \
                                             const ObjectiveOptions&, const Dropout<T>&);                          \
  template struct OptimizerState<T>;                                                                               \
  template double global_norm(const Gradients<T>&);                                                                \
  template double clip_gradients(Gradients<T>&, double);                                                           \
  template void adamw_update(ParamStore<T>&, OptimizerState<T>&, const Gradients<T>&, double,                      \
                             const OptimizerConfig&);                                                              \
  template Gradients<T> batch_gradients(const DialogueModel<T>&, const std::vector<const TrainingExample*>&,       \
                                        const ObjectiveOptions&, const Dropout<T>&, TrainState&);                   \
  template TrainState train_step(DialogueModel<T>&, OptimizerState<T>&, const std::vector<const TrainingExample*>&, \
                                 TrainState, const ObjectiveOptions&, const OptimizerConfig&, long,                \
                                 std::mt19937_64*);                                                                \
  template TrainState evaluate_loss(const DialogueModel<T>&, const std::vector<TrainingExample>&,                  \
                                    const ObjectiveOptions&);                                                      \
  template FitResult<T> fit(DialogueModel<T>&, const std::vector<TrainingExample>&,                                \
                            const std::vector<TrainingExample>&, const OptimizerConfig&, const FitOptions<T>&);

GUIDEDIAL_INSTANTIATE(float)
GUIDEDIAL_INSTANTIATE(double)
#undef GUIDEDIAL_INSTANTIATE

}  // namespace guidedial
