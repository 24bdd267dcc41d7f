#ifndef PEMI_NUMCORE_HPP
#define PEMI_NUMCORE_HPP

// Dense tensors and a tape-based reverse-mode differentiation engine.
//
// Tensors are immutable row-major arrays that share their storage, so
// copies are cheap and values captured by backward closures cannot change
// underneath them. A Tape records every primitive applied during one
// forward pass; backward() replays it in reverse and returns gradients for
// the leaves that were created with requires_grad set. Nodes that do not
// depend on a trainable leaf record no backward closure at all, which is
// what keeps a frozen encoder cheap to differentiate through.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pemi/errors.hpp"

namespace pemi {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : Tensor(Shape{0}, std::vector<T>{}) {}

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<const std::vector<T>>(std::move(values))),
        requires_grad_(requires_grad) {
    if (shape_size(shape_) != data_->size()) {
      throw DimensionError("tensor shape " + shape_string(shape_) + " holds " +
                           std::to_string(shape_size(shape_)) +
                           " values but " + std::to_string(data_->size()) +
                           " were given");
    }
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor full(Shape shape, T value) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_->size(); }
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<const T> values() const noexcept { return {data_->data(), data_->size()}; }
  const T* data() const noexcept { return data_->data(); }
  T operator[](std::size_t i) const { return (*data_)[i]; }
  T at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  T item() const {
    if (size() != 1) throw DimensionError("item() on tensor " + shape_string(shape_));
    return (*data_)[0];
  }
  std::vector<T> to_vector() const { return *data_; }

  bool requires_grad() const noexcept { return requires_grad_; }
  Tensor with_requires_grad(bool flag) const {
    Tensor copy = *this;
    copy.requires_grad_ = flag;
    return copy;
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                           shape_string(shape));
    }
    Tensor copy = *this;
    copy.shape_ = std::move(shape);
    return copy;
  }

  bool all_finite() const {
    return std::all_of(data_->begin(), data_->end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_->begin(), data_->end());
    return Tensor<U>(shape_, std::move(out), requires_grad_);
  }

  // Storage identity, not value equality.
  bool shares_storage(const Tensor& other) const noexcept { return data_ == other.data_; }

  friend bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ &&
           std::equal(a.data_->begin(), a.data_->end(), b.data_->begin(),
                      [](T x, T y) {
                        return std::memcmp(&x, &y, sizeof(T)) == 0;
                      });
  }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  bool requires_grad_ = false;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Handle to a node on a specific tape.
struct Var {
  std::uint64_t tape_id = 0;
  std::size_t index = 0;
};

namespace detail {
inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

template <class T>
class Tape;
template <class T>
class GradTable;
template <class T>
GradTable<T> backward(const Tape<T>& tape, Var loss);

template <class T>
class Tape {
 public:
  using Grad = std::vector<T>;
  // Receives the gradient of the node's output and accumulates into the
  // gradient slots of its parents.
  using BackwardFn = std::function<void(const Grad&, std::vector<Grad>&)>;

  Tape() : id_(detail::next_tape_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  // A leaf is trainable iff the tensor carries requires_grad.
  Var leaf(Tensor<T> value) {
    const bool trainable = value.requires_grad();
    return push(Node{std::move(value), trainable, trainable, {}});
  }

  Var constant(Tensor<T> value) {
    return push(Node{value.with_requires_grad(false), false, false, {}});
  }

  // Records a primitive. The closure is dropped when no parent needs a
  // gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || needs_grad(p);
    Node node{std::move(value), needs, false, {}};
    if (needs) node.backward = std::move(fn);
    return push(std::move(node));
  }

  Var record(Tensor<T> value, const std::vector<Var>& parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || needs_grad(p);
    Node node{std::move(value), needs, false, {}};
    if (needs) node.backward = std::move(fn);
    return push(std::move(node));
  }

  const Tensor<T>& value(Var v) const { return nodes_[checked(v)].value; }
  bool needs_grad(Var v) const { return nodes_[checked(v)].needs_grad; }
  bool is_trainable_leaf(Var v) const { return nodes_[checked(v)].trainable_leaf; }
  bool owns(Var v) const noexcept { return v.tape_id == id_ && v.index < nodes_.size(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::uint64_t id() const noexcept { return id_; }

  // Adds into a parent slot, allocating it on first use.
  static Grad& slot(std::vector<Grad>& grads, std::size_t index, std::size_t n) {
    Grad& g = grads[index];
    if (g.empty()) g.assign(n, T(0));
    return g;
  }

 private:
  struct Node {
    Tensor<T> value;
    bool needs_grad;
    bool trainable_leaf;
    BackwardFn backward;
  };

  template <class U>
  friend class GradTable;
  template <class U>
  friend GradTable<U> backward(const Tape<U>& tape, Var loss);

  std::size_t checked(Var v) const {
    if (!owns(v)) throw TapeError("variable does not belong to this tape");
    return v.index;
  }

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{id_, nodes_.size() - 1};
  }

  std::uint64_t id_;
  std::vector<Node> nodes_;
};

// Gradients keyed by trainable leaf.
template <class T>
class GradTable {
 public:
  bool contains(Var v) const { return tape_id_ == v.tape_id && grads_.count(v.index) != 0; }
  const Tensor<T>& at(Var v) const {
    if (!contains(v)) throw TapeError("no gradient recorded for this variable");
    return grads_.at(v.index);
  }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  template <class U>
  friend GradTable<U> backward(const Tape<U>& tape, Var loss);

  std::uint64_t tape_id_ = 0;
  std::map<std::size_t, Tensor<T>> grads_;
};

// Reverse sweep from a scalar loss. Node indices are a topological order,
// so walking them backwards visits every consumer before its producers.
template <class T>
GradTable<T> backward(const Tape<T>& tape, Var loss) {
  if (!tape.owns(loss)) throw TapeError("backward on a tensor that is not on this tape");
  const auto& nodes = tape.nodes_;
  if (nodes[loss.index].value.size() != 1) {
    throw TapeError("backward needs a scalar loss, got " +
                    shape_string(nodes[loss.index].value.shape()));
  }
  GradTable<T> table;
  table.tape_id_ = tape.id();
  if (!nodes[loss.index].needs_grad) return table;

  std::vector<typename Tape<T>::Grad> grads(loss.index + 1);
  grads[loss.index].assign(1, T(1));
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const auto& node = nodes[i];
    if (grads[i].empty()) continue;
    if (node.trainable_leaf) {
      table.grads_.emplace(i, Tensor<T>(node.value.shape(), grads[i]));
    } else if (node.backward) {
      node.backward(grads[i], grads);
    }
    grads[i].clear();
    grads[i].shrink_to_fit();
  }
  return table;
}

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<const RowMatrix<T>> as_matrix(const T* data, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMatrix<T>>(data, static_cast<Eigen::Index>(rows),
                                        static_cast<Eigen::Index>(cols));
}

template <class T>
Eigen::Map<RowMatrix<T>> as_matrix(T* data, std::size_t rows, std::size_t cols) {
  return Eigen::Map<RowMatrix<T>>(data, static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(cols));
}

template <class T>
Tensor<T> finite_or_throw(Tensor<T> t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  return t;
}

template <class T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " +
                         shape_string(t.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Each takes the tape plus input handles and returns a new
// handle; the values are checked for finiteness.
// ---------------------------------------------------------------------------

template <class T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T> av = tape.value(a);
  const Tensor<T> bv = tape.value(b);
  detail::require_rank2(av, "matmul");
  detail::require_rank2(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_string(av.shape()) +
                         " x " + shape_string(bv.shape()));
  }
  std::vector<T> out(m * n);
  detail::as_matrix(out.data(), m, n).noalias() =
      detail::as_matrix(av.data(), m, k) * detail::as_matrix(bv.data(), k, n);
  const bool need_a = tape.needs_grad(a), need_b = tape.needs_grad(b);
  const std::size_t ia = a.index, ib = b.index;
  return tape.record(
      detail::finite_or_throw(Tensor<T>({m, n}, std::move(out)), "matmul"), {a, b},
      [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
        auto gm = detail::as_matrix(g.data(), m, n);
        if (need_a) {
          auto& ga = Tape<T>::slot(grads, ia, m * k);
          detail::as_matrix(ga.data(), m, k).noalias() +=
              gm * detail::as_matrix(bv.data(), k, n).transpose();
        }
        if (need_b) {
          auto& gb = Tape<T>::slot(grads, ib, k * n);
          detail::as_matrix(gb.data(), k, n).noalias() +=
              detail::as_matrix(av.data(), m, k).transpose() * gm;
        }
      });
}

template <class T>
Var transpose(Tape<T>& tape, Var a) {
  const Tensor<T>& av = tape.value(a);
  detail::require_rank2(av, "transpose");
  const std::size_t m = av.dim(0), n = av.dim(1);
  std::vector<T> out(m * n);
  detail::as_matrix(out.data(), n, m) = detail::as_matrix(av.data(), m, n).transpose();
  const std::size_t ia = a.index;
  return tape.record(Tensor<T>({n, m}, std::move(out)), {a},
                     [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
                       auto& ga = Tape<T>::slot(grads, ia, m * n);
                       detail::as_matrix(ga.data(), m, n) +=
                           detail::as_matrix(g.data(), n, m).transpose();
                     });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("add shapes disagree: " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  }
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const bool need_a = tape.needs_grad(a), need_b = tape.needs_grad(b);
  const std::size_t ia = a.index, ib = b.index, n = out.size();
  return tape.record(
      detail::finite_or_throw(Tensor<T>(av.shape(), std::move(out)), "add"), {a, b},
      [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
        if (need_a) {
          auto& ga = Tape<T>::slot(grads, ia, n);
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (need_b) {
          auto& gb = Tape<T>::slot(grads, ib, n);
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
      });
}

// x[m x n] + row[n], broadcast over rows.
template <class T>
Var add_row(Tape<T>& tape, Var x, Var row) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& rv = tape.value(row);
  detail::require_rank2(xv, "add_row");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (rv.size() != n) {
    throw DimensionError("add_row: row " + shape_string(rv.shape()) + " does not match " +
                         shape_string(xv.shape()));
  }
  std::vector<T> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xv[r * n + c] + rv[c];
  const bool need_x = tape.needs_grad(x), need_r = tape.needs_grad(row);
  const std::size_t ix = x.index, ir = row.index;
  return tape.record(
      detail::finite_or_throw(Tensor<T>({m, n}, std::move(out)), "add_row"), {x, row},
      [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
        if (need_x) {
          auto& gx = Tape<T>::slot(grads, ix, m * n);
          for (std::size_t i = 0; i < m * n; ++i) gx[i] += g[i];
        }
        if (need_r) {
          auto& gr = Tape<T>::slot(grads, ir, n);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gr[c] += g[r * n + c];
        }
      });
}

template <class T>
Var scale(Tape<T>& tape, Var a, T factor) {
  const Tensor<T>& av = tape.value(a);
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  const std::size_t ia = a.index, n = out.size();
  return tape.record(detail::finite_or_throw(Tensor<T>(av.shape(), std::move(out)), "scale"),
                     {a}, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
                       auto& ga = Tape<T>::slot(grads, ia, n);
                       for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * factor;
                     });
}

template <class T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
  Tensor<T> out = tape.value(a).reshaped(std::move(shape));
  const std::size_t ia = a.index, n = out.size();
  return tape.record(std::move(out), {a},
                     [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
                       auto& ga = Tape<T>::slot(grads, ia, n);
                       for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                     });
}

// Tanh approximation:
//   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
// with sqrt(2/pi) = 0.7978845608028654.
inline constexpr double kGeluScale = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

template <class T>
Var gelu(Tape<T>& tape, Var a) {
  const Tensor<T> av = tape.value(a);
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    out[i] = static_cast<T>(0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x))));
  }
  const std::size_t ia = a.index, n = out.size();
  return tape.record(
      detail::finite_or_throw(Tensor<T>(av.shape(), std::move(out)), "gelu"), {a},
      [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
        auto& ga = Tape<T>::slot(grads, ia, n);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = av[i];
          const double inner = kGeluScale * (x + kGeluCubic * x * x * x);
          const double th = std::tanh(inner);
          const double d_inner = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
          const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner;
          ga[i] += static_cast<T>(g[i] * d);
        }
      });
}

// Normalizes over the last axis, then applies gain and bias.
template <class T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, double eps = 1e-5) {
  if (!(eps > 0.0)) throw DimensionError("layer_norm requires eps > 0");
  const Tensor<T> xv = tape.value(x);
  const Tensor<T> gv = tape.value(gain);
  const Tensor<T>& bv = tape.value(bias);
  const std::size_t d = xv.cols();
  if (gv.size() != d || bv.size() != d) {
    throw DimensionError("layer_norm affine parameters " + shape_string(gv.shape()) + "/" +
                         shape_string(bv.shape()) + " do not match " +
                         shape_string(xv.shape()));
  }
  const std::size_t rows = xv.size() / d;
  std::vector<T> out(xv.size());
  std::vector<double> normed(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      normed[r * d + c] = (row[c] - mean) * inv_std[r];
      out[r * d + c] = static_cast<T>(normed[r * d + c] * gv[c] + bv[c]);
    }
  }
  const bool need_x = tape.needs_grad(x), need_g = tape.needs_grad(gain),
             need_b = tape.needs_grad(bias);
  const std::size_t ix = x.index, ig = gain.index, ib = bias.index;
  return tape.record(
      detail::finite_or_throw(Tensor<T>(xv.shape(), std::move(out)), "layer_norm"),
      {x, gain, bias},
      [=, normed = std::move(normed), inv_std = std::move(inv_std)](
          const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
        if (need_g) {
          auto& gg = Tape<T>::slot(grads, ig, d);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gg[c] += static_cast<T>(g[r * d + c] * normed[r * d + c]);
        }
        if (need_b) {
          auto& gb = Tape<T>::slot(grads, ib, d);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
        }
        if (need_x) {
          auto& gx = Tape<T>::slot(grads, ix, rows * d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dy = 0.0, mean_dy_xhat = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double dy = static_cast<double>(g[r * d + c]) * gv[c];
              mean_dy += dy;
              mean_dy_xhat += dy * normed[r * d + c];
            }
            mean_dy /= static_cast<double>(d);
            mean_dy_xhat /= static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
              const double dy = static_cast<double>(g[r * d + c]) * gv[c];
              gx[r * d + c] += static_cast<T>(
                  inv_std[r] * (dy - mean_dy - normed[r * d + c] * mean_dy_xhat));
            }
          }
        }
      });
}

// Row-wise softmax over the last axis. With a mask (one byte per element,
// nonzero = keep), masked entries are exactly 0 and only the kept entries
// are exponentiated. A row with no kept entry is an error.
template <class T>
Var row_softmax(Tape<T>& tape, Var x, std::span<const std::uint8_t> mask = {}) {
  const Tensor<T>& xv = tape.value(x);
  const std::size_t n = xv.cols();
  const std::size_t rows = n == 0 ? 0 : xv.size() / n;
  if (!mask.empty() && mask.size() != xv.size()) {
    throw DimensionError("row_softmax mask has " + std::to_string(mask.size()) +
                         " entries for tensor " + shape_string(xv.shape()));
  }
  auto keep = [&](std::size_t i) { return mask.empty() || mask[i] != 0; };
  std::vector<T> out(xv.size(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    double hi = -INFINITY;
    bool any = false;
    for (std::size_t c = 0; c < n; ++c) {
      if (keep(r * n + c)) {
        hi = std::max(hi, static_cast<double>(xv[r * n + c]));
        any = true;
      }
    }
    if (!any) {
      throw DegenerateRowError("row_softmax: row " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    std::vector<double> e(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
      if (keep(r * n + c)) {
        e[c] = std::exp(static_cast<double>(xv[r * n + c]) - hi);
        total += e[c];
      }
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = static_cast<T>(e[c] / total);
  }
  Tensor<T> result = detail::finite_or_throw(Tensor<T>(xv.shape(), std::move(out)), "row_softmax");
  const Tensor<T> y = result;
  const std::size_t ix = x.index;
  return tape.record(std::move(result), {x},
                     [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
                       auto& gx = Tape<T>::slot(grads, ix, rows * n);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < n; ++c)
                           dot += static_cast<double>(g[r * n + c]) * y[r * n + c];
                         for (std::size_t c = 0; c < n; ++c)
                           gx[r * n + c] += static_cast<T>(y[r * n + c] * (g[r * n + c] - dot));
                       }
                     });
}

// Row-wise L1 normalization over kept entries. Entries must be
// nonnegative; a row whose kept entries sum to zero is degenerate.
template <class T>
Var row_l1_normalize(Tape<T>& tape, Var x, std::span<const std::uint8_t> mask = {}) {
  const Tensor<T> xv = tape.value(x);
  const std::size_t n = xv.cols();
  const std::size_t rows = n == 0 ? 0 : xv.size() / n;
  if (!mask.empty() && mask.size() != xv.size()) {
    throw DimensionError("row_l1_normalize mask size mismatch");
  }
  std::vector<std::uint8_t> keep(xv.size(), 1);
  if (!mask.empty()) std::copy(mask.begin(), mask.end(), keep.begin());
  std::vector<double> totals(rows, 0.0);
  std::vector<T> out(xv.size(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      if (!keep[r * n + c]) continue;
      if (xv[r * n + c] < 0) {
        throw DegenerateRowError("row_l1_normalize: negative entry in row " + std::to_string(r));
      }
      totals[r] += xv[r * n + c];
    }
    if (totals[r] <= 0.0) {
      throw DegenerateRowError("row_l1_normalize: row " + std::to_string(r) + " sums to zero");
    }
    for (std::size_t c = 0; c < n; ++c)
      if (keep[r * n + c]) out[r * n + c] = static_cast<T>(xv[r * n + c] / totals[r]);
  }
  const std::size_t ix = x.index;
  return tape.record(
      detail::finite_or_throw(Tensor<T>(xv.shape(), std::move(out)), "row_l1_normalize"), {x},
      [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
        auto& gx = Tape<T>::slot(grads, ix, rows * n);
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < n; ++c)
            if (keep[r * n + c]) dot += static_cast<double>(g[r * n + c]) * xv[r * n + c];
          const double s = totals[r];
          for (std::size_t c = 0; c < n; ++c)
            if (keep[r * n + c]) gx[r * n + c] += static_cast<T>((g[r * n + c] * s - dot) / (s * s));
        }
      });
}

template <class T>
Var sum(Tape<T>& tape, Var a) {
  const Tensor<T>& av = tape.value(a);
  double total = 0.0;
  for (T v : av.values()) total += v;
  const std::size_t ia = a.index, n = av.size();
  return tape.record(detail::finite_or_throw(Tensor<T>::scalar(static_cast<T>(total)), "sum"),
                     {a}, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
                       auto& ga = Tape<T>::slot(grads, ia, n);
                       for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
                     });
}

template <class T>
Var dot(Tape<T>& tape, Var a, Var b) {
  const Tensor<T> av = tape.value(a);
  const Tensor<T> bv = tape.value(b);
  if (av.size() != bv.size()) {
    throw DimensionError("dot sizes disagree: " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += static_cast<double>(av[i]) * bv[i];
  const bool need_a = tape.needs_grad(a), need_b = tape.needs_grad(b);
  const std::size_t ia = a.index, ib = b.index, n = av.size();
  return tape.record(detail::finite_or_throw(Tensor<T>::scalar(static_cast<T>(total)), "dot"),
                     {a, b}, [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
                       if (need_a) {
                         auto& ga = Tape<T>::slot(grads, ia, n);
                         for (std::size_t i = 0; i < n; ++i) ga[i] += g[0] * bv[i];
                       }
                       if (need_b) {
                         auto& gb = Tape<T>::slot(grads, ib, n);
                         for (std::size_t i = 0; i < n; ++i) gb[i] += g[0] * av[i];
                       }
                     });
}

// Scalar Σ coeffs[i] * terms[i].
template <class T>
Var weighted_sum(Tape<T>& tape, const std::vector<Var>& terms, const std::vector<T>& coeffs) {
  if (terms.size() != coeffs.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(terms.size()) + " terms but " +
                         std::to_string(coeffs.size()) + " coefficients");
  }
  double total = 0.0;
  std::vector<std::size_t> idx;
  std::vector<bool> needs;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const Tensor<T>& v = tape.value(terms[i]);
    if (v.size() != 1) throw DimensionError("weighted_sum terms must be scalars");
    total += static_cast<double>(coeffs[i]) * v[0];
    idx.push_back(terms[i].index);
    needs.push_back(tape.needs_grad(terms[i]));
  }
  return tape.record(
      detail::finite_or_throw(Tensor<T>::scalar(static_cast<T>(total)), "weighted_sum"), terms,
      [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
        for (std::size_t i = 0; i < idx.size(); ++i) {
          if (!needs[i]) continue;
          Tape<T>::slot(grads, idx[i], 1)[0] += g[0] * coeffs[i];
        }
      });
}

// Rows of a matrix picked by index (embedding lookup).
template <class T>
Var gather_rows(Tape<T>& tape, Var table, std::span<const std::size_t> indices) {
  const Tensor<T>& tv = tape.value(table);
  detail::require_rank2(tv, "gather_rows");
  const std::size_t rows = tv.dim(0), d = tv.dim(1);
  std::vector<T> out(indices.size() * d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw DimensionError("gather_rows index " + std::to_string(indices[i]) +
                           " out of range for " + shape_string(tv.shape()));
    }
    std::copy_n(tv.data() + indices[i] * d, d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const std::size_t it = table.index;
  return tape.record(Tensor<T>({idx.size(), d}, std::move(out)), {table},
                     [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
                       auto& gt = Tape<T>::slot(grads, it, rows * d);
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t c = 0; c < d; ++c) gt[idx[i] * d + c] += g[i * d + c];
                     });
}

// Copy of base with row positions[i] replaced by rows[i].
template <class T>
Var replace_rows(Tape<T>& tape, Var base, Var rows, std::span<const std::size_t> positions) {
  const Tensor<T>& bv = tape.value(base);
  const Tensor<T>& rv = tape.value(rows);
  detail::require_rank2(bv, "replace_rows");
  const std::size_t n = bv.dim(0), d = bv.dim(1);
  if (positions.empty()) {
    return reshape(tape, base, bv.shape());
  }
  if (rv.rank() != 2 || rv.dim(0) != positions.size() || rv.dim(1) != d) {
    throw DimensionError("replace_rows: rows " + shape_string(rv.shape()) + " for " +
                         std::to_string(positions.size()) + " positions of width " +
                         std::to_string(d));
  }
  std::vector<T> out = bv.to_vector();
  std::vector<std::uint8_t> replaced(n, 0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= n || replaced[positions[i]]) {
      throw DimensionError("replace_rows: invalid or repeated position " +
                           std::to_string(positions[i]));
    }
    replaced[positions[i]] = 1;
    std::copy_n(rv.data() + i * d, d, out.begin() + static_cast<std::ptrdiff_t>(positions[i] * d));
  }
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  const bool need_b = tape.needs_grad(base), need_r = tape.needs_grad(rows);
  const std::size_t ib = base.index, ir = rows.index;
  return tape.record(
      Tensor<T>({n, d}, std::move(out)), {base, rows},
      [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
        if (need_b) {
          auto& gb = Tape<T>::slot(grads, ib, n * d);
          for (std::size_t r = 0; r < n; ++r)
            if (!replaced[r])
              for (std::size_t c = 0; c < d; ++c) gb[r * d + c] += g[r * d + c];
        }
        if (need_r) {
          auto& gr = Tape<T>::slot(grads, ir, pos.size() * d);
          for (std::size_t i = 0; i < pos.size(); ++i)
            for (std::size_t c = 0; c < d; ++c) gr[i * d + c] += g[pos[i] * d + c];
        }
      });
}

// Columns [begin, end) of a matrix.
template <class T>
Var slice_cols(Tape<T>& tape, Var x, std::size_t begin, std::size_t end) {
  const Tensor<T>& xv = tape.value(x);
  detail::require_rank2(xv, "slice_cols");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (begin > end || end > n) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_string(xv.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<T> out(m * w);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(xv.data() + r * n + begin, w, out.begin() + static_cast<std::ptrdiff_t>(r * w));
  const std::size_t ix = x.index;
  return tape.record(Tensor<T>({m, w}, std::move(out)), {x},
                     [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
                       auto& gx = Tape<T>::slot(grads, ix, m * n);
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t c = 0; c < w; ++c) gx[r * n + begin + c] += g[r * w + c];
                     });
}

template <class T>
Var concat_cols(Tape<T>& tape, const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t m = tape.value(parts[0]).rows();
  std::vector<std::size_t> widths, offsets, idx;
  std::vector<bool> needs;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor<T>& pv = tape.value(p);
    detail::require_rank2(pv, "concat_cols");
    if (pv.dim(0) != m) throw DimensionError("concat_cols row counts disagree");
    offsets.push_back(total);
    widths.push_back(pv.dim(1));
    idx.push_back(p.index);
    needs.push_back(tape.needs_grad(p));
    total += pv.dim(1);
  }
  std::vector<T> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& pv = tape.value(parts[k]);
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(pv.data() + r * widths[k], widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offsets[k]));
  }
  return tape.record(Tensor<T>({m, total}, std::move(out)), parts,
                     [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
                       for (std::size_t k = 0; k < idx.size(); ++k) {
                         if (!needs[k]) continue;
                         auto& gp = Tape<T>::slot(grads, idx[k], m * widths[k]);
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < widths[k]; ++c)
                             gp[r * widths[k] + c] += g[r * total + offsets[k] + c];
                       }
                     });
}

// Dense tensor of `shape` holding values[i] at flat position positions[i]
// and exact zeros elsewhere.
template <class T>
Var scatter(Tape<T>& tape, Var values, std::span<const std::size_t> positions, Shape shape) {
  const Tensor<T>& vv = tape.value(values);
  if (vv.size() != positions.size()) {
    throw DimensionError("scatter: " + std::to_string(vv.size()) + " values for " +
                         std::to_string(positions.size()) + " positions");
  }
  const std::size_t total = shape_size(shape);
  std::vector<T> out(total, T(0));
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= total) throw DimensionError("scatter position out of range");
    out[positions[i]] = vv[i];
  }
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  const std::size_t iv = values.index;
  return tape.record(Tensor<T>(std::move(shape), std::move(out)), {values},
                     [=](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
                       auto& gv = Tape<T>::slot(grads, iv, pos.size());
                       for (std::size_t i = 0; i < pos.size(); ++i) gv[i] += g[pos[i]];
                     });
}

// −log softmax(logits)[target] via log-sum-exp. logits is a vector or a
// single-row matrix.
template <class T>
Var cross_entropy(Tape<T>& tape, Var logits, std::size_t target) {
  const Tensor<T>& lv = tape.value(logits);
  const std::size_t n = lv.size();
  if (lv.rows() != 1 || n == 0) {
    throw DimensionError("cross_entropy expects one row of logits, got " + shape_string(lv.shape()));
  }
  if (target >= n) {
    throw DimensionError("cross_entropy target " + std::to_string(target) + " out of range for " +
                         std::to_string(n) + " classes");
  }
  double hi = -INFINITY;
  for (T v : lv.values()) hi = std::max(hi, static_cast<double>(v));
  double total = 0.0;
  std::vector<double> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(static_cast<double>(lv[i]) - hi);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  const double loss = std::log(total) + hi - static_cast<double>(lv[target]);
  const std::size_t il = logits.index;
  return tape.record(
      detail::finite_or_throw(Tensor<T>::scalar(static_cast<T>(loss)), "cross_entropy"), {logits},
      [=, probs = std::move(probs)](const std::vector<T>& g, std::vector<std::vector<T>>& grads) {
        auto& gl = Tape<T>::slot(grads, il, n);
        for (std::size_t i = 0; i < n; ++i) {
          const double onehot = i == target ? 1.0 : 0.0;
          gl[i] += static_cast<T>(g[0] * (probs[i] - onehot));
        }
      });
}

// Value-only softmax of a vector, accumulated in double.
template <class T>
std::vector<double> softmax_values(std::span<const T> logits) {
  double hi = -INFINITY;
  for (T v : logits) hi = std::max(hi, static_cast<double>(v));
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - hi);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

}  // namespace pemi

#endif  // PEMI_NUMCORE_HPP
