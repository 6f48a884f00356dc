#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "guidedial/model.hpp"

namespace guidedial {

/// Training-time dropout; p = 0 (the default) is eval mode.
template <typename T>
struct Dropout {
  T p = T(0);
  std::mt19937_64* rng = nullptr;

  typename Tape<T>::Var apply(Tape<T>& tape, typename Tape<T>::Var x) const {
    return (p > T(0) && rng) ? tape.dropout(x, p, *rng) : x;
  }
};

template <typename T>
struct EncodedSequence {
  typename Tape<T>::Var hidden;  // length x d, masked rows zeroed
  std::vector<std::uint8_t> mask;
};

/// Per-layer key/value memo for incremental decoding.
template <typename T>
struct LayerCache {
  Matrix<T> self_keys, self_values;
  Matrix<T> cross_keys, cross_values;
};

template <typename T>
struct DecoderCache {
  std::vector<LayerCache<T>> layers;
  int length = 0;
  bool has_memory = false;
};

/// Runs the encoder over `ids`; pad ids are masked out.
template <typename T>
EncodedSequence<T> encode_on_tape(Tape<T>& tape, const DialogueModel<T>& model, const std::vector<int>& ids,
                                  const Dropout<T>& dropout = {});

/// Decoder hidden states (after the final norm) for `inputs`, which occupy positions
/// cache->length onward (0 without a cache). With a cache, self-attention keys and
/// values are appended to it and cross-attention projections of `memory` are reused.
template <typename T>
typename Tape<T>::Var decode_on_tape(Tape<T>& tape, const DialogueModel<T>& model, const std::vector<int>& inputs,
                                     typename Tape<T>::Var memory, const std::vector<std::uint8_t>& memory_mask,
                                     DecoderCache<T>* cache, const Dropout<T>& dropout = {});

/// hidden * E^T + output bias, with E the tied token embedding.
template <typename T>
typename Tape<T>::Var output_logits(Tape<T>& tape, const DialogueModel<T>& model, typename Tape<T>::Var hidden);

// ---------------------------------------------------------------------------
// Value-level API used at inference time.

template <typename T>
struct EncoderState {
  Matrix<T> hidden;
  std::vector<std::uint8_t> mask;

  int length() const { return static_cast<int>(hidden.rows()); }
  int valid_rows() const;
};

template <typename T>
struct DecoderStepState {
  Vector<T> last_hidden;
  DecoderCache<T> cache;
};

/// Eval-mode encoder pass. Throws ValidationError if ids is empty or longer than max_src_len.
template <typename T>
EncoderState<T> encode(const DialogueModel<T>& model, const std::vector<int>& ids);

/// Re-decodes `prefix` (which must start with the begin token) from scratch and
/// returns the logits of its last position plus a cache positioned after it.
template <typename T>
std::pair<Vector<T>, DecoderStepState<T>> decode_step(const DialogueModel<T>& model, const std::vector<int>& prefix,
                                                      const Matrix<T>& memory,
                                                      const std::vector<std::uint8_t>& memory_mask,
                                                      const Vector<T>* logit_bias);

/// Feeds one more token using the cache in `state`; returns its logits.
template <typename T>
Vector<T> decode_next(const DialogueModel<T>& model, DecoderStepState<T>& state, int token, const Matrix<T>& memory,
                      const std::vector<std::uint8_t>& memory_mask, const Vector<T>* logit_bias);

/// Greedy decoding with the bare encoder-decoder: no scenario bias, no bridge rows.
/// The end marker is not included.
template <typename T>
std::vector<int> greedy_decode_backbone(const DialogueModel<T>& model, const std::vector<int>& context_ids,
                                        int max_len);

}  // namespace guidedial
