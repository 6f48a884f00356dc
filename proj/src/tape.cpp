#include "guidedial/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace guidedial {

AttentionMask AttentionMask::from_key_mask(int rows, const std::vector<std::uint8_t>& key_mask) {
  AttentionMask m;
  m.rows = rows;
  m.cols = static_cast<int>(key_mask.size());
  m.allowed.resize(static_cast<size_t>(rows) * m.cols);
  for (int r = 0; r < rows; ++r) {
    std::copy(key_mask.begin(), key_mask.end(), m.allowed.begin() + static_cast<long>(r) * m.cols);
  }
  return m;
}

AttentionMask AttentionMask::causal(int rows, int offset) {
  AttentionMask m;
  m.rows = rows;
  m.cols = offset + rows;
  m.allowed.assign(static_cast<size_t>(rows) * m.cols, 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c <= offset + r; ++c) m.allowed[static_cast<size_t>(r) * m.cols + c] = 1;
  }
  return m;
}

template <typename T>
typename Tape<T>::Var Tape<T>::push(Matrix<T> value, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Matrix<T>& Tape<T>::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    const Matrix<T>& val = n.ref ? *n.ref : n.value;
    n.grad = Matrix<T>::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

template <typename T>
const Matrix<T>& Tape<T>::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ref ? *n.ref : n.value;
}

template <typename T>
typename Tape<T>::Var Tape<T>::constant(Matrix<T> value) {
  return push(std::move(value), false);
}

template <typename T>
typename Tape<T>::Var Tape<T>::zeros(int rows, int cols) {
  return push(Matrix<T>::Zero(rows, cols), false);
}

template <typename T>
typename Tape<T>::Var Tape<T>::parameter(int slot, const Matrix<T>& value) {
  auto it = slot_nodes_.find(slot);
  if (it != slot_nodes_.end()) return Var{it->second};
  Node n;
  n.ref = &value;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  int id = static_cast<int>(nodes_.size()) - 1;
  slot_nodes_.emplace(slot, id);
  return Var{id};
}

template <typename T>
typename Tape<T>::Var Tape<T>::matmul(Var a, Var b) {
  Var out = push(value(a) * value(b), needs(a) || needs(b));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, a, b, out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      if (needs(a)) grad_buffer(a).noalias() += g * value(b).transpose();
      if (needs(b)) grad_buffer(b).noalias() += value(a).transpose() * g;
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::matmul_nt(Var a, Var b) {
  Var out = push(value(a) * value(b).transpose(), needs(a) || needs(b));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, a, b, out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      if (needs(a)) grad_buffer(a).noalias() += g * value(b);
      if (needs(b)) grad_buffer(b).noalias() += g.transpose() * value(a);
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
    throw std::invalid_argument("tape add: shape mismatch");
  }
  Var out = push(value(a) + value(b), needs(a) || needs(b));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, a, b, out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      if (needs(a)) grad_buffer(a) += g;
      if (needs(b)) grad_buffer(b) += g;
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::add_row(Var a, Var row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols()) {
    throw std::invalid_argument("tape add_row: shape mismatch");
  }
  Matrix<T> v = value(a);
  v.rowwise() += value(row).row(0);
  Var out = push(std::move(v), needs(a) || needs(row));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, a, row, out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      if (needs(a)) grad_buffer(a) += g;
      if (needs(row)) grad_buffer(row) += g.colwise().sum();
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::mul(Var a, Var b) {
  Var out = push(value(a).cwiseProduct(value(b)), needs(a) || needs(b));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, a, b, out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      if (needs(a)) grad_buffer(a) += g.cwiseProduct(value(b));
      if (needs(b)) grad_buffer(b) += g.cwiseProduct(value(a));
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::scale(Var a, T s) {
  Var out = push(value(a) * s, needs(a));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, a, s, out] { grad_buffer(a) += nodes_[out.id].grad * s; };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::scale_rows(Var a, const std::vector<T>& weights) {
  const Matrix<T>& x = value(a);
  if (static_cast<long>(weights.size()) != x.rows()) throw std::invalid_argument("scale_rows: size mismatch");
  Matrix<T> v = x;
  for (long r = 0; r < v.rows(); ++r) v.row(r) *= weights[r];
  Var out = push(std::move(v), needs(a));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, a, weights, out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      Matrix<T>& ga = grad_buffer(a);
      for (long r = 0; r < g.rows(); ++r) ga.row(r) += g.row(r) * weights[r];
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::gather_rows(Var table, const std::vector<int>& ids) {
  const Matrix<T>& tab = value(table);
  Matrix<T> v(static_cast<long>(ids.size()), tab.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tab.rows()) throw std::out_of_range("gather_rows: id out of range");
    v.row(static_cast<long>(i)) = tab.row(ids[i]);
  }
  Var out = push(std::move(v), needs(table));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, table, ids, out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      Matrix<T>& gt = grad_buffer(table);
      for (size_t i = 0; i < ids.size(); ++i) gt.row(ids[i]) += g.row(static_cast<long>(i));
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::slice_rows(Var a, int start, int count) {
  Var out = push(value(a).middleRows(start, count), needs(a));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, a, start, count, out] {
      grad_buffer(a).middleRows(start, count) += nodes_[out.id].grad;
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::slice_cols(Var a, int start, int count) {
  Var out = push(value(a).middleCols(start, count), needs(a));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, a, start, count, out] {
      grad_buffer(a).middleCols(start, count) += nodes_[out.id].grad;
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::concat_rows(const std::vector<Var>& parts) {
  long rows = 0;
  long cols = value(parts.front()).cols();
  bool any = false;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += value(p).rows();
    any = any || needs(p);
  }
  Matrix<T> v(rows, cols);
  long at = 0;
  for (Var p : parts) {
    v.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  Var out = push(std::move(v), any);
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, parts, out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      long at = 0;
      for (Var p : parts) {
        long r = value(p).rows();
        if (needs(p)) grad_buffer(p) += g.middleRows(at, r);
        at += r;
      }
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::concat_cols(const std::vector<Var>& parts) {
  long rows = value(parts.front()).rows();
  long cols = 0;
  bool any = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += value(p).cols();
    any = any || needs(p);
  }
  Matrix<T> v(rows, cols);
  long at = 0;
  for (Var p : parts) {
    v.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  Var out = push(std::move(v), any);
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, parts, out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      long at = 0;
      for (Var p : parts) {
        long c = value(p).cols();
        if (needs(p)) grad_buffer(p) += g.middleCols(at, c);
        at += c;
      }
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
  const Matrix<T>& in = value(x);
  const long n = in.cols();
  Matrix<T> xhat(in.rows(), n);
  std::vector<T> rstd(static_cast<size_t>(in.rows()));
  for (long r = 0; r < in.rows(); ++r) {
    T mu = in.row(r).mean();
    auto centered = in.row(r).array() - mu;
    T var = centered.square().mean();
    rstd[r] = T(1) / std::sqrt(var + eps);
    xhat.row(r) = centered * rstd[r];
  }
  Matrix<T> y = xhat;
  for (long r = 0; r < y.rows(); ++r) {
    y.row(r) = y.row(r).cwiseProduct(value(gamma).row(0)) + value(beta).row(0);
  }
  Var out = push(std::move(y), needs(x) || needs(gamma) || needs(beta));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, x, gamma, beta, out, xhat = std::move(xhat), rstd = std::move(rstd)] {
      const Matrix<T>& g = nodes_[out.id].grad;
      if (needs(gamma)) grad_buffer(gamma) += g.cwiseProduct(xhat).colwise().sum();
      if (needs(beta)) grad_buffer(beta) += g.colwise().sum();
      if (needs(x)) {
        Matrix<T>& gx = grad_buffer(x);
        const auto gam = value(gamma).row(0);
        for (long r = 0; r < g.rows(); ++r) {
          Eigen::Matrix<T, 1, Eigen::Dynamic> dxhat = g.row(r).cwiseProduct(gam);
          T mean_d = dxhat.mean();
          T mean_dx = dxhat.cwiseProduct(xhat.row(r)).mean();
          gx.row(r).array() += rstd[r] * (dxhat.array() - mean_d - xhat.row(r).array() * mean_dx);
        }
      }
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::gelu(Var x) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T k = static_cast<T>(0.044715);
  const Matrix<T>& in = value(x);
  Matrix<T> th = (c * (in.array() + k * in.array().cube())).tanh().matrix();
  Matrix<T> y = (T(0.5) * in.array() * (T(1) + th.array())).matrix();
  Var out = push(std::move(y), needs(x));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, x, out, th = std::move(th), c, k] {
      const Matrix<T>& in = value(x);
      auto sech2 = T(1) - th.array().square();
      auto d = T(0.5) * (T(1) + th.array()) +
               T(0.5) * in.array() * sech2 * c * (T(1) + T(3) * k * in.array().square());
      grad_buffer(x).array() += nodes_[out.id].grad.array() * d;
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::tanh(Var x) {
  Matrix<T> y = value(x).array().tanh().matrix();
  Var out = push(std::move(y), needs(x));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, x, out] {
      const Matrix<T>& y = nodes_[out.id].value;
      grad_buffer(x).array() += nodes_[out.id].grad.array() * (T(1) - y.array().square());
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::sigmoid(Var x) {
  Matrix<T> y = (T(1) / (T(1) + (-value(x).array()).exp())).matrix();
  Var out = push(std::move(y), needs(x));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, x, out] {
      const Matrix<T>& y = nodes_[out.id].value;
      grad_buffer(x).array() += nodes_[out.id].grad.array() * y.array() * (T(1) - y.array());
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::dropout(Var x, T p, std::mt19937_64& rng) {
  if (p <= T(0)) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  Matrix<T> m(value(x).rows(), value(x).cols());
  const T s = T(1) / (T(1) - p);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? s : T(0);
  Var mv = constant(std::move(m));
  return mul(x, mv);
}

template <typename T>
typename Tape<T>::Var Tape<T>::masked_softmax_rows(Var scores, const AttentionMask& mask) {
  const Matrix<T>& s = value(scores);
  if (mask.rows != s.rows() || mask.cols != s.cols()) {
    throw std::invalid_argument("masked_softmax_rows: mask shape mismatch");
  }
  Matrix<T> p = Matrix<T>::Zero(s.rows(), s.cols());
  for (long r = 0; r < s.rows(); ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (long c = 0; c < s.cols(); ++c) {
      if (mask.at(static_cast<int>(r), static_cast<int>(c))) mx = std::max(mx, s(r, c));
    }
    if (!std::isfinite(mx)) continue;
    T sum = 0;
    for (long c = 0; c < s.cols(); ++c) {
      if (mask.at(static_cast<int>(r), static_cast<int>(c))) {
        p(r, c) = std::exp(s(r, c) - mx);
        sum += p(r, c);
      }
    }
    p.row(r) /= sum;
  }
  Var out = push(std::move(p), needs(scores));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, scores, out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      const Matrix<T>& p = nodes_[out.id].value;
      Matrix<T>& gs = grad_buffer(scores);
      for (long r = 0; r < p.rows(); ++r) {
        T dot = g.row(r).dot(p.row(r));
        gs.row(r).array() += p.row(r).array() * (g.row(r).array() - dot);
      }
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::masked_mean_rows(Var x, const std::vector<std::uint8_t>& mask) {
  const Matrix<T>& in = value(x);
  if (static_cast<long>(mask.size()) != in.rows()) throw std::invalid_argument("masked_mean_rows: mask size");
  long n = std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
  if (n == 0) throw std::invalid_argument("masked_mean_rows: every row is masked");
  Matrix<T> y = Matrix<T>::Zero(1, in.cols());
  for (long r = 0; r < in.rows(); ++r) {
    if (mask[r]) y += in.row(r);
  }
  y /= static_cast<T>(n);
  Var out = push(std::move(y), needs(x));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, x, mask, n, out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      Matrix<T>& gx = grad_buffer(x);
      for (long r = 0; r < gx.rows(); ++r) {
        if (mask[r]) gx.row(r) += g / static_cast<T>(n);
      }
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::max_rows(Var x) {
  const Matrix<T>& in = value(x);
  if (in.rows() == 0) throw std::invalid_argument("max_rows: empty input");
  Matrix<T> y(1, in.cols());
  std::vector<long> arg(static_cast<size_t>(in.cols()), 0);
  for (long c = 0; c < in.cols(); ++c) {
    long best = 0;
    for (long r = 1; r < in.rows(); ++r) {
      if (in(r, c) > in(best, c)) best = r;
    }
    arg[c] = best;
    y(0, c) = in(best, c);
  }
  Var out = push(std::move(y), needs(x));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, x, arg = std::move(arg), out] {
      const Matrix<T>& g = nodes_[out.id].grad;
      Matrix<T>& gx = grad_buffer(x);
      for (long c = 0; c < g.cols(); ++c) gx(arg[c], c) += g(0, c);
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::cross_entropy(Var logits, const std::vector<int>& targets) {
  const Matrix<T>& z = value(logits);
  if (static_cast<long>(targets.size()) != z.rows()) throw std::invalid_argument("cross_entropy: length mismatch");
  Matrix<T> probs(z.rows(), z.cols());
  T total = 0;
  int count = 0;
  for (long r = 0; r < z.rows(); ++r) {
    T mx = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - mx).exp().matrix();
    T sum = probs.row(r).sum();
    probs.row(r) /= sum;
    if (targets[r] >= 0) {
      total += (std::log(sum) + mx) - z(r, targets[r]);
      ++count;
    }
  }
  Matrix<T> y(1, 1);
  y(0, 0) = count > 0 ? total / static_cast<T>(count) : T(0);
  Var out = push(std::move(y), needs(logits));
  if (nodes_[out.id].needs_grad && count > 0) {
    nodes_[out.id].back = [this, logits, targets, count, out, probs = std::move(probs)] {
      const T g = nodes_[out.id].grad(0, 0) / static_cast<T>(count);
      Matrix<T>& gz = grad_buffer(logits);
      for (long r = 0; r < probs.rows(); ++r) {
        if (targets[r] < 0) continue;
        gz.row(r) += probs.row(r) * g;
        gz(r, targets[r]) -= g;
      }
    };
  }
  return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::binary_cross_entropy(Var probs, const std::vector<float>& targets) {
  const Matrix<T>& p = value(probs);
  if (static_cast<long>(targets.size()) != p.size()) throw std::invalid_argument("binary_cross_entropy: size mismatch");
  const T lo = T(1e-7);
  const T hi = T(1) - T(1e-7);
  T total = 0;
  for (long i = 0; i < p.size(); ++i) {
    T q = std::clamp(p.data()[i], lo, hi);
    T y = static_cast<T>(targets[i]);
    total -= y * std::log(q) + (T(1) - y) * std::log(T(1) - q);
  }
  Matrix<T> out_v(1, 1);
  out_v(0, 0) = total / static_cast<T>(p.size());
  Var out = push(std::move(out_v), needs(probs));
  if (nodes_[out.id].needs_grad) {
    nodes_[out.id].back = [this, probs, targets, lo, hi, out] {
      const Matrix<T>& p = value(probs);
      const T g = nodes_[out.id].grad(0, 0) / static_cast<T>(p.size());
      Matrix<T>& gp = grad_buffer(probs);
      for (long i = 0; i < p.size(); ++i) {
        T q = p.data()[i];
        if (q < lo || q > hi) continue;
        T y = static_cast<T>(targets[i]);
        gp.data()[i] += g * (-y / q + (T(1) - y) / (T(1) - q));
      }
    };
  }
  return out;
}

template <typename T>
void Tape<T>::backward(Var scalar) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  if (value(scalar).size() != 1) throw std::invalid_argument("backward: target must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!needs(scalar)) return;
  grad_buffer(scalar)(0, 0) = T(1);
  for (int i = scalar.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back && n.grad.size() > 0) n.back();
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace guidedial
