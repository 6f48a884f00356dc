#include "guidedial/model.hpp"

#include <cmath>
#include <random>

#include "guidedial/errors.hpp"

namespace guidedial {

void ModelConfig::validate() const {
  auto positive = [](long v, const char* name) {
    if (v <= 0) throw ValidationError(std::string("model config: ") + name + " must be positive");
  };
  positive(d, "d");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(ffn_width, "ffn_width");
  positive(vocab_size, "vocab_size");
  positive(max_src_len, "max_src_len");
  positive(max_tgt_len, "max_tgt_len");
  if (d % n_heads != 0) {
    throw ValidationError("model config: d=" + std::to_string(d) + " is not divisible by n_heads=" +
                          std::to_string(n_heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("model config: dropout must be in [0, 1)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d", d},
          {"n_layers", n_layers},
          {"n_heads", n_heads},
          {"ffn_width", ffn_width},
          {"vocab_size", vocab_size},
          {"max_src_len", max_src_len},
          {"max_tgt_len", max_tgt_len},
          {"dropout", dropout},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d = j.value("d", c.d);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_width = j.value("ffn_width", c.ffn_width);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_src_len = j.value("max_src_len", c.max_src_len);
  c.max_tgt_len = j.value("max_tgt_len", c.max_tgt_len);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
  return c;
}

template <typename T>
int ParamStore<T>::add(std::string name, int rows, int cols) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
  int slot = size();
  index_.emplace(name, slot);
  names_.push_back(std::move(name));
  values_.push_back(Matrix<T>::Zero(rows, cols));
  return slot;
}

template <typename T>
std::optional<int> ParamStore<T>::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

template <typename T>
long ParamStore<T>::scalar_count() const {
  long n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::backbone: return "backbone";
    case ParamGroup::scenario_bias: return "scenario_bias";
    case ParamGroup::pool_knowledge: return "pool_knowledge";
    case ParamGroup::pool_profile: return "pool_profile";
    case ParamGroup::type_embedding: return "type_embedding";
    case ParamGroup::topic_embedding: return "topic_embedding";
    case ParamGroup::type_head: return "type_head";
    case ParamGroup::topic_head: return "topic_head";
    case ParamGroup::fusion: return "fusion";
  }
  return "?";
}

ParamGroup param_group(std::string_view n) {
  auto starts = [&](std::string_view p) { return n.substr(0, p.size()) == p; };
  if (starts("scenario.bias")) return ParamGroup::scenario_bias;
  if (starts("scenario.knowledge")) return ParamGroup::pool_knowledge;
  if (starts("scenario.profile")) return ParamGroup::pool_profile;
  if (starts("bridge.type_embedding")) return ParamGroup::type_embedding;
  if (starts("bridge.topic_embedding")) return ParamGroup::topic_embedding;
  if (starts("bridge.type_head")) return ParamGroup::type_head;
  if (starts("bridge.topic_head")) return ParamGroup::topic_head;
  if (starts("bridge.fusion")) return ParamGroup::fusion;
  return ParamGroup::backbone;
}

bool is_bridging_group(ParamGroup g) {
  switch (g) {
    case ParamGroup::type_embedding:
    case ParamGroup::topic_embedding:
    case ParamGroup::type_head:
    case ParamGroup::topic_head:
    case ParamGroup::fusion:
      return true;
    default:
      return false;
  }
}

namespace {

enum class Init { zeros, ones, xavier, normal };

template <typename T>
struct Builder {
  ParamStore<T>& store;
  std::vector<std::pair<Init, double>>& rules;

  int add(const std::string& name, int rows, int cols, Init init, double stddev = 0.0) {
    rules.emplace_back(init, stddev);
    return store.add(name, rows, cols);
  }
  LinearSlots linear(const std::string& name, int in, int out, bool bias = true, Init init = Init::xavier) {
    LinearSlots s;
    s.weight = add(name + ".weight", in, out, init);
    if (bias) s.bias = add(name + ".bias", 1, out, Init::zeros);
    return s;
  }
  NormSlots norm(const std::string& name, int d) {
    return NormSlots{add(name + ".gamma", 1, d, Init::ones), add(name + ".beta", 1, d, Init::zeros)};
  }
  AttentionSlots attention(const std::string& name, int d) {
    return AttentionSlots{linear(name + ".q", d, d), linear(name + ".k", d, d), linear(name + ".v", d, d),
                          linear(name + ".o", d, d)};
  }
};

}  // namespace

template <typename T>
DialogueModel<T>::DialogueModel(const ModelConfig& config, int num_types, int num_topics)
    : config_(config), num_types_(num_types), num_topics_(num_topics) {
  config_.validate();
  if (num_types < 1 || num_topics < 1) throw ValidationError("model needs at least one keyword-type and topic");
  const int d = config_.d;
  const int f = config_.ffn_width;
  const int v = config_.vocab_size;
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<std::pair<Init, double>> rules;
  Builder<T> b{params_, rules};

  backbone_.token_embedding = b.add("backbone.token_embedding", v, d, Init::normal, emb_std);
  backbone_.encoder_positions = b.add("backbone.encoder_positions", config_.max_src_len, d, Init::normal, 0.02);
  backbone_.decoder_positions = b.add("backbone.decoder_positions", config_.max_tgt_len, d, Init::normal, 0.02);
  backbone_.output_bias = b.add("backbone.output_bias", 1, v, Init::zeros);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "backbone.encoder." + std::to_string(l);
    EncoderLayerSlots s;
    s.ln_attn = b.norm(p + ".ln_attn", d);
    s.attn = b.attention(p + ".attn", d);
    s.ln_ffn = b.norm(p + ".ln_ffn", d);
    s.ffn_in = b.linear(p + ".ffn_in", d, f);
    s.ffn_out = b.linear(p + ".ffn_out", f, d);
    backbone_.encoder.push_back(s);
  }
  backbone_.encoder_norm = b.norm("backbone.encoder_norm", d);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "backbone.decoder." + std::to_string(l);
    DecoderLayerSlots s;
    s.ln_self = b.norm(p + ".ln_self", d);
    s.self_attn = b.attention(p + ".self_attn", d);
    s.ln_cross = b.norm(p + ".ln_cross", d);
    s.cross_attn = b.attention(p + ".cross_attn", d);
    s.ln_ffn = b.norm(p + ".ln_ffn", d);
    s.ffn_in = b.linear(p + ".ffn_in", d, f);
    s.ffn_out = b.linear(p + ".ffn_out", f, d);
    backbone_.decoder.push_back(s);
  }
  backbone_.decoder_norm = b.norm("backbone.decoder_norm", d);

  scenario_.bias_matrix = b.add("scenario.bias_matrix", v, d, Init::normal, 0.02);
  scenario_.knowledge = PoolingSlots{b.linear("scenario.knowledge.hidden", d, d), b.linear("scenario.knowledge.out", d, d)};
  scenario_.profile = PoolingSlots{b.linear("scenario.profile.hidden", d, d), b.linear("scenario.profile.out", d, d)};

  bridging_.type_embedding = b.add("bridge.type_embedding", num_types, d, Init::normal, 1.0);
  bridging_.topic_embedding = b.add("bridge.topic_embedding", num_topics, d, Init::normal, 1.0);
  bridging_.type_head = b.linear("bridge.type_head", d, num_types);
  bridging_.topic_head = b.linear("bridge.topic_head", d, num_topics);
  FusionSlots& fu = bridging_.fusion;
  fu.proj_context = b.linear("bridge.fusion.proj_context", d, d, false);
  fu.proj_knowledge = b.linear("bridge.fusion.proj_knowledge", d, d, false);
  fu.proj_profile = b.linear("bridge.fusion.proj_profile", d, d, false);
  fu.gate_context = b.linear("bridge.fusion.gate_context", d, d, true, Init::zeros);
  fu.gate_knowledge = b.linear("bridge.fusion.gate_knowledge", d, d, true, Init::zeros);
  fu.gate_profile = b.linear("bridge.fusion.gate_profile", d, d, true, Init::zeros);
  fu.out = b.linear("bridge.fusion.out", d, d);

  // Draw in slot order so initialization depends only on the config.
  std::mt19937_64 rng(config_.seed);
  for (int slot = 0; slot < params_.size(); ++slot) {
    Matrix<T>& m = params_.value(slot);
    const auto [init, stddev] = rules[static_cast<size_t>(slot)];
    switch (init) {
      case Init::zeros: m.setZero(); break;
      case Init::ones: m.setOnes(); break;
      case Init::xavier:
      case Init::normal: {
        double s = init == Init::xavier ? std::sqrt(2.0 / static_cast<double>(m.rows() + m.cols())) : stddev;
        std::normal_distribution<double> dist(0.0, s);
        for (long i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
        break;
      }
    }
  }
}

template <typename T>
long DialogueModel<T>::parameter_count(ParamGroup g) const {
  long n = 0;
  for (int i = 0; i < params_.size(); ++i) {
    if (param_group(params_.name(i)) == g) n += params_.value(i).size();
  }
  return n;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class DialogueModel<float>;
template class DialogueModel<double>;

}  // namespace guidedial
