#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "guidedial/tape.hpp"

namespace guidedial {

/// Shape of the encoder-decoder backbone.
struct ModelConfig {
  int d = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_width = 256;
  int vocab_size = 0;
  int max_src_len = 256;
  int max_tgt_len = 64;
  double dropout = 0.0;
  std::uint64_t seed = 1;

  /// Throws ValidationError on an inconsistent shape.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named, ordered parameter matrices. Slots are stable indices into the store.
template <typename T>
class ParamStore {
 public:
  int add(std::string name, int rows, int cols);

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int slot) const { return names_[static_cast<size_t>(slot)]; }
  Matrix<T>& value(int slot) { return values_[static_cast<size_t>(slot)]; }
  const Matrix<T>& value(int slot) const { return values_[static_cast<size_t>(slot)]; }
  std::optional<int> find(std::string_view name) const;
  long scalar_count() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (int i = 0; i < size(); ++i) {
      int slot = out.add(name(i), static_cast<int>(value(i).rows()), static_cast<int>(value(i).cols()));
      out.value(slot) = value(i).template cast<U>();
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<T>> values_;
  std::unordered_map<std::string, int> index_;
};

struct LinearSlots {
  int weight = -1;  // in x out
  int bias = -1;    // 1 x out; -1 when the map has no bias
};

struct NormSlots {
  int gamma = -1;
  int beta = -1;
};

struct AttentionSlots {
  LinearSlots q, k, v, o;
};

struct EncoderLayerSlots {
  NormSlots ln_attn;
  AttentionSlots attn;
  NormSlots ln_ffn;
  LinearSlots ffn_in, ffn_out;
};

struct DecoderLayerSlots {
  NormSlots ln_self;
  AttentionSlots self_attn;
  NormSlots ln_cross;
  AttentionSlots cross_attn;
  NormSlots ln_ffn;
  LinearSlots ffn_in, ffn_out;
};

struct BackboneSlots {
  int token_embedding = -1;  // vocab x d, tied with the output projection
  int encoder_positions = -1;
  int decoder_positions = -1;
  int output_bias = -1;
  std::vector<EncoderLayerSlots> encoder;
  NormSlots encoder_norm;
  std::vector<DecoderLayerSlots> decoder;
  NormSlots decoder_norm;
};

/// Average-pool + two-layer perceptron over an encoder state.
struct PoolingSlots {
  LinearSlots hidden, out;
};

struct ScenarioSlots {
  int bias_matrix = -1;  // vocab x d
  PoolingSlots knowledge;
  PoolingSlots profile;
};

struct FusionSlots {
  LinearSlots proj_context, proj_knowledge, proj_profile;  // bias-free
  LinearSlots gate_context, gate_knowledge, gate_profile;
  LinearSlots out;
};

struct BridgingSlots {
  int type_embedding = -1;   // num_types x d
  int topic_embedding = -1;  // num_topics x d
  LinearSlots type_head;
  LinearSlots topic_head;
  FusionSlots fusion;
};

/// Parameter groups addressed by ablation and gradient-check code.
enum class ParamGroup { backbone, scenario_bias, pool_knowledge, pool_profile, type_embedding, topic_embedding,
                        type_head, topic_head, fusion };

std::string_view to_string(ParamGroup g);
ParamGroup param_group(std::string_view param_name);
bool is_bridging_group(ParamGroup g);

/// Backbone plus scenario and bridging parameters, initialized from config.seed.
template <typename T>
class DialogueModel {
 public:
  DialogueModel(const ModelConfig& config, int num_types, int num_topics);

  const ModelConfig& config() const { return config_; }
  int num_types() const { return num_types_; }
  int num_topics() const { return num_topics_; }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const BackboneSlots& backbone() const { return backbone_; }
  const ScenarioSlots& scenario() const { return scenario_; }
  const BridgingSlots& bridging() const { return bridging_; }

  long parameter_count() const { return params_.scalar_count(); }
  long parameter_count(ParamGroup g) const;

  typename Tape<T>::Var param(Tape<T>& tape, int slot) const { return tape.parameter(slot, params_.value(slot)); }

  template <typename U>
  DialogueModel<U> cast() const {
    DialogueModel<U> out(config_, num_types_, num_topics_);
    for (int i = 0; i < params_.size(); ++i) out.params().value(i) = params_.value(i).template cast<U>();
    return out;
  }

 private:
  ModelConfig config_;
  int num_types_;
  int num_topics_;
  ParamStore<T> params_;
  BackboneSlots backbone_;
  ScenarioSlots scenario_;
  BridgingSlots bridging_;
};

/// x * W + b over the rows of x.
template <typename T>
typename Tape<T>::Var linear(Tape<T>& tape, const DialogueModel<T>& model, const LinearSlots& s,
                             typename Tape<T>::Var x) {
  auto y = tape.matmul(x, model.param(tape, s.weight));
  if (s.bias >= 0) y = tape.add_row(y, model.param(tape, s.bias));
  return y;
}

template <typename T>
typename Tape<T>::Var layer_norm(Tape<T>& tape, const DialogueModel<T>& model, const NormSlots& s,
                                 typename Tape<T>::Var x) {
  return tape.layer_norm(x, model.param(tape, s.gamma), model.param(tape, s.beta));
}

}  // namespace guidedial
