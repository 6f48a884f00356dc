#include "guidedial/backbone.hpp"

#include <cmath>
#include <numeric>

#include "guidedial/corpus.hpp"
#include "guidedial/errors.hpp"

namespace guidedial {

namespace {

template <typename T>
using Var = typename Tape<T>::Var;

template <typename T>
Var<T> multi_head(Tape<T>& tape, int heads, Var<T> q, Var<T> k, Var<T> v, const AttentionMask& mask) {
  const int d = tape.cols(q);
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Var<T>> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var<T> qh = heads == 1 ? q : tape.slice_cols(q, h * dh, dh);
    Var<T> kh = heads == 1 ? k : tape.slice_cols(k, h * dh, dh);
    Var<T> vh = heads == 1 ? v : tape.slice_cols(v, h * dh, dh);
    Var<T> scores = tape.scale(tape.matmul_nt(qh, kh), scale);
    outs.push_back(tape.matmul(tape.masked_softmax_rows(scores, mask), vh));
  }
  return heads == 1 ? outs.front() : tape.concat_cols(outs);
}

template <typename T>
Var<T> feed_forward(Tape<T>& tape, const DialogueModel<T>& model, const LinearSlots& in, const LinearSlots& out,
                    Var<T> x) {
  return linear(tape, model, out, tape.gelu(linear(tape, model, in, x)));
}

std::vector<int> iota(int start, int n) {
  std::vector<int> v(static_cast<size_t>(n));
  std::iota(v.begin(), v.end(), start);
  return v;
}

template <typename T>
void check_finite(const Vector<T>* bias) {
  if (bias && !bias->allFinite()) throw NumericError("logit bias contains non-finite entries");
}

}  // namespace

template <typename T>
EncodedSequence<T> encode_on_tape(Tape<T>& tape, const DialogueModel<T>& model, const std::vector<int>& ids,
                                  const Dropout<T>& dropout) {
  const ModelConfig& cfg = model.config();
  const BackboneSlots& bb = model.backbone();
  const int n = static_cast<int>(ids.size());
  if (n == 0) throw ValidationError("encode: empty input");
  if (n > cfg.max_src_len) {
    throw ValidationError("encode: input length " + std::to_string(n) + " exceeds max_src_len " +
                          std::to_string(cfg.max_src_len));
  }

  EncodedSequence<T> out;
  out.mask.resize(ids.size());
  std::vector<T> keep(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    out.mask[i] = ids[i] != Vocabulary::kPad;
    keep[i] = out.mask[i] ? T(1) : T(0);
  }
  const AttentionMask attn_mask = AttentionMask::from_key_mask(n, out.mask);

  Var<T> x = tape.add(tape.gather_rows(model.param(tape, bb.token_embedding), ids),
                      tape.gather_rows(model.param(tape, bb.encoder_positions), iota(0, n)));
  x = dropout.apply(tape, x);
  for (const auto& layer : bb.encoder) {
    Var<T> h = layer_norm(tape, model, layer.ln_attn, x);
    Var<T> q = linear(tape, model, layer.attn.q, h);
    Var<T> k = linear(tape, model, layer.attn.k, h);
    Var<T> v = linear(tape, model, layer.attn.v, h);
    Var<T> a = linear(tape, model, layer.attn.o, multi_head(tape, cfg.n_heads, q, k, v, attn_mask));
    x = tape.add(x, dropout.apply(tape, a));
    Var<T> f = feed_forward(tape, model, layer.ffn_in, layer.ffn_out, layer_norm(tape, model, layer.ln_ffn, x));
    x = tape.add(x, dropout.apply(tape, f));
  }
  x = layer_norm(tape, model, bb.encoder_norm, x);
  out.hidden = tape.scale_rows(x, keep);
  return out;
}

template <typename T>
Var<T> decode_on_tape(Tape<T>& tape, const DialogueModel<T>& model, const std::vector<int>& inputs, Var<T> memory,
                      const std::vector<std::uint8_t>& memory_mask, DecoderCache<T>* cache,
                      const Dropout<T>& dropout) {
  const ModelConfig& cfg = model.config();
  const BackboneSlots& bb = model.backbone();
  const int n = static_cast<int>(inputs.size());
  const int offset = cache ? cache->length : 0;
  if (n == 0) throw ValidationError("decode: empty input");
  if (offset + n > cfg.max_tgt_len) throw ValidationError("decode: position exceeds max_tgt_len");
  if (static_cast<int>(memory_mask.size()) != tape.rows(memory)) {
    throw ValidationError("decode: memory mask length does not match memory rows");
  }
  if (tape.rows(memory) < 1) throw ValidationError("decode: memory must have at least one row");
  if (tape.cols(memory) != cfg.d) throw ValidationError("decode: memory width does not match d");
  if (cache && cache->layers.empty()) cache->layers.resize(bb.decoder.size());

  const AttentionMask self_mask = AttentionMask::causal(n, offset);
  const AttentionMask cross_mask = AttentionMask::from_key_mask(n, memory_mask);

  Var<T> x = tape.add(tape.gather_rows(model.param(tape, bb.token_embedding), inputs),
                      tape.gather_rows(model.param(tape, bb.decoder_positions), iota(offset, n)));
  x = dropout.apply(tape, x);
  for (size_t l = 0; l < bb.decoder.size(); ++l) {
    const DecoderLayerSlots& layer = bb.decoder[l];
    LayerCache<T>* lc = cache ? &cache->layers[l] : nullptr;

    Var<T> h = layer_norm(tape, model, layer.ln_self, x);
    Var<T> q = linear(tape, model, layer.self_attn.q, h);
    Var<T> k = linear(tape, model, layer.self_attn.k, h);
    Var<T> v = linear(tape, model, layer.self_attn.v, h);
    if (lc && lc->self_keys.rows() > 0) {
      k = tape.concat_rows({tape.constant(lc->self_keys), k});
      v = tape.concat_rows({tape.constant(lc->self_values), v});
    }
    if (lc) {
      lc->self_keys = tape.value(k);
      lc->self_values = tape.value(v);
    }
    Var<T> a = linear(tape, model, layer.self_attn.o, multi_head(tape, cfg.n_heads, q, k, v, self_mask));
    x = tape.add(x, dropout.apply(tape, a));

    h = layer_norm(tape, model, layer.ln_cross, x);
    q = linear(tape, model, layer.cross_attn.q, h);
    Var<T> mk, mv;
    if (lc && cache->has_memory) {
      mk = tape.constant(lc->cross_keys);
      mv = tape.constant(lc->cross_values);
    } else {
      mk = linear(tape, model, layer.cross_attn.k, memory);
      mv = linear(tape, model, layer.cross_attn.v, memory);
      if (lc) {
        lc->cross_keys = tape.value(mk);
        lc->cross_values = tape.value(mv);
      }
    }
    a = linear(tape, model, layer.cross_attn.o, multi_head(tape, cfg.n_heads, q, mk, mv, cross_mask));
    x = tape.add(x, dropout.apply(tape, a));

    Var<T> f = feed_forward(tape, model, layer.ffn_in, layer.ffn_out, layer_norm(tape, model, layer.ln_ffn, x));
    x = tape.add(x, dropout.apply(tape, f));
  }
  if (cache) {
    cache->length += n;
    cache->has_memory = true;
  }
  return layer_norm(tape, model, bb.decoder_norm, x);
}

template <typename T>
Var<T> output_logits(Tape<T>& tape, const DialogueModel<T>& model, Var<T> hidden) {
  const BackboneSlots& bb = model.backbone();
  return tape.add_row(tape.matmul_nt(hidden, model.param(tape, bb.token_embedding)),
                      model.param(tape, bb.output_bias));
}

template <typename T>
int EncoderState<T>::valid_rows() const {
  int n = 0;
  for (auto m : mask) n += m != 0;
  return n;
}

template <typename T>
EncoderState<T> encode(const DialogueModel<T>& model, const std::vector<int>& ids) {
  Tape<T> tape(false);
  auto enc = encode_on_tape(tape, model, ids);
  return EncoderState<T>{tape.value(enc.hidden), std::move(enc.mask)};
}

namespace {

template <typename T>
Vector<T> last_logits(Tape<T>& tape, const DialogueModel<T>& model, Var<T> hidden, DecoderStepState<T>& state,
                      const Vector<T>* logit_bias) {
  Var<T> last = tape.slice_rows(hidden, tape.rows(hidden) - 1, 1);
  state.last_hidden = tape.value(last).row(0).transpose();
  Vector<T> logits = tape.value(output_logits(tape, model, last)).row(0).transpose();
  if (logit_bias) logits += *logit_bias;
  return logits;
}

}  // namespace

template <typename T>
std::pair<Vector<T>, DecoderStepState<T>> decode_step(const DialogueModel<T>& model, const std::vector<int>& prefix,
                                                      const Matrix<T>& memory,
                                                      const std::vector<std::uint8_t>& memory_mask,
                                                      const Vector<T>* logit_bias) {
  if (prefix.empty() || prefix.front() != Vocabulary::kBos) {
    throw ValidationError("decode_step: prefix must start with the begin token");
  }
  check_finite(logit_bias);
  DecoderStepState<T> state;
  Tape<T> tape(false);
  Var<T> mem = tape.constant(memory);
  Var<T> hidden = decode_on_tape(tape, model, prefix, mem, memory_mask, &state.cache);
  Vector<T> logits = last_logits(tape, model, hidden, state, logit_bias);
  return {std::move(logits), std::move(state)};
}

template <typename T>
Vector<T> decode_next(const DialogueModel<T>& model, DecoderStepState<T>& state, int token, const Matrix<T>& memory,
                      const std::vector<std::uint8_t>& memory_mask, const Vector<T>* logit_bias) {
  check_finite(logit_bias);
  Tape<T> tape(false);
  // Once cross-attention projections are cached the memory itself is not read.
  Var<T> mem = state.cache.has_memory ? tape.zeros(static_cast<int>(memory.rows()), static_cast<int>(memory.cols()))
                                      : tape.constant(memory);
  Var<T> hidden = decode_on_tape(tape, model, {token}, mem, memory_mask, &state.cache);
  return last_logits(tape, model, hidden, state, logit_bias);
}

template <typename T>
std::vector<int> greedy_decode_backbone(const DialogueModel<T>& model, const std::vector<int>& context_ids,
                                        int max_len) {
  EncoderState<T> enc = encode(model, context_ids);
  max_len = std::min(max_len, model.config().max_tgt_len);
  std::vector<int> out;
  auto [logits, state] = decode_step(model, {Vocabulary::kBos}, enc.hidden, enc.mask, static_cast<const Vector<T>*>(nullptr));
  while (true) {
    Eigen::Index best;
    logits.maxCoeff(&best);
    if (best == Vocabulary::kEos) break;
    out.push_back(static_cast<int>(best));
    if (static_cast<int>(out.size()) >= max_len) break;
    logits = decode_next(model, state, static_cast<int>(best), enc.hidden, enc.mask, static_cast<const Vector<T>*>(nullptr));
  }
  return out;
}

#define GUIDEDIAL_INSTANTIATE(T)                                                                                     \
  template EncodedSequence<T> encode_on_tape(Tape<T>&, const DialogueModel<T>&, const std::vector<int>&,           \
                                             const Dropout<T>&);                                                   \
  template Var<T> decode_on_tape(Tape<T>&, const DialogueModel<T>&, const std::vector<int>&, Var<T>,               \
                                 const std::vector<std::uint8_t>&, DecoderCache<T>*, const Dropout<T>&);           \
  template Var<T> output_logits(Tape<T>&, const DialogueModel<T>&, Var<T>);                                        \
  template struct EncoderState<T>;                                                                                  \
  template EncoderState<T> encode(const DialogueModel<T>&, const std::vector<int>&);                               \
  template std::pair<Vector<T>, DecoderStepState<T>> decode_step(const DialogueModel<T>&, const std::vector<int>&, \
                                                                 const Matrix<T>&,                                 \
                                                                 const std::vector<std::uint8_t>&,                 \
                                                                 const Vector<T>*);                                \
  template Vector<T> decode_next(const DialogueModel<T>&, DecoderStepState<T>&, int, const Matrix<T>&,            \
                                 const std::vector<std::uint8_t>&, const Vector<T>*);                              \
  template std::vector<int> greedy_decode_backbone(const DialogueModel<T>&, const std::vector<int>&, int);

GUIDEDIAL_INSTANTIATE(float)
GUIDEDIAL_INSTANTIATE(double)

#undef GUIDEDIAL_INSTANTIATE

}  // namespace guidedial
