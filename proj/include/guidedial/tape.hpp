#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <unordered_map>
#include <vector>

namespace guidedial {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Row-major boolean mask (rows x cols); nonzero means "may attend".
struct AttentionMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> allowed;

  bool at(int r, int c) const { return allowed[static_cast<size_t>(r) * cols + c] != 0; }

  static AttentionMask from_key_mask(int rows, const std::vector<std::uint8_t>& key_mask);
  /// Causal mask for `rows` queries at absolute positions offset..offset+rows-1
  /// over `offset + rows` keys.
  static AttentionMask causal(int rows, int offset);
};

/// Reverse-mode differentiation over dense row-major matrices.
///
/// Every op appends a node holding its value; `backward` walks the nodes in
/// reverse creation order. With recording disabled only values are computed,
/// which is how the inference path reuses the training forward code.
template <typename T>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  size_t size() const { return nodes_.size(); }

  Var constant(Matrix<T> value);
  Var zeros(int rows, int cols);
  /// Leaf bound to external storage; one node per slot. `value` must outlive the tape.
  Var parameter(int slot, const Matrix<T>& value);

  const Matrix<T>& value(Var v) const;
  /// Gradient of the last `backward` target w.r.t. `v`; empty if none reached it.
  const Matrix<T>& grad(Var v) const { return nodes_[v.id].grad; }
  int rows(Var v) const { return static_cast<int>(value(v).rows()); }
  int cols(Var v) const { return static_cast<int>(value(v).cols()); }

  Var matmul(Var a, Var b);     // a * b
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // row (1 x m) broadcast over rows of a
  Var mul(Var a, Var b);        // element-wise
  Var scale(Var a, T s);
  Var scale_rows(Var a, const std::vector<T>& weights);
  Var gather_rows(Var table, const std::vector<int>& ids);
  Var slice_rows(Var a, int start, int count);
  Var slice_cols(Var a, int start, int count);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);

  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5));
  Var gelu(Var x);
  Var tanh(Var x);
  Var sigmoid(Var x);
  Var dropout(Var x, T p, std::mt19937_64& rng);

  /// Row softmax restricted to allowed entries; rows with nothing allowed become zero.
  Var masked_softmax_rows(Var scores, const AttentionMask& mask);
  /// Mean over rows whose mask entry is nonzero. Throws if none are.
  Var masked_mean_rows(Var x, const std::vector<std::uint8_t>& mask);
  /// Column-wise maximum over rows (1 x cols). Ties route gradient to the first row.
  Var max_rows(Var x);

  /// Mean softmax cross-entropy over rows; rows with target < 0 are skipped.
  Var cross_entropy(Var logits, const std::vector<int>& targets);
  /// Mean binary cross-entropy over all entries of `probs`, clamped to [1e-7, 1-1e-7].
  Var binary_cross_entropy(Var probs, const std::vector<float>& targets);

  void backward(Var scalar);

  /// Invokes fn(slot, grad) for every parameter leaf that received a gradient.
  template <typename F>
  void for_each_parameter_grad(F&& fn) const {
    for (const auto& [slot, id] : slot_nodes_) {
      if (nodes_[id].grad.size() > 0) fn(slot, nodes_[id].grad);
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    const Matrix<T>* ref = nullptr;
    Matrix<T> grad;
    bool needs_grad = false;
    std::function<void()> back;
  };

  Var push(Matrix<T> value, bool needs_grad);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Matrix<T>& grad_buffer(Var v);

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<int, int> slot_nodes_;
};

}  // namespace guidedial
