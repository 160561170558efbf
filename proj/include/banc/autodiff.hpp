//
//  autodiff.hpp — tape-based reverse-mode automatic differentiation over the
//  operator set the codec needs: causal 1-D (transposed) convolution, batch
//  norm, pointwise nonlinearities, reductions, FIR filtering and spectral
//  magnitudes. Templated on the scalar type; tests run in double, training
//  in float.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "banc/common.hpp"
#include "banc/dsp.hpp"
#include "banc/fft.hpp"
#include "banc/rng.hpp"

namespace banc::ad {

inline int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

template <typename T>
class Tensor {
 public:
  struct Storage {
    std::vector<int64_t> shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;

    void ensure_grad() {
      if (grad.empty()) grad.assign(value.size(), T(0));
    }
  };

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    for (int64_t d : shape) require(d > 0, "tensor: non-positive extent ", d);
    s_->shape = std::move(shape);
    s_->value.assign(shape_numel(s_->shape), T(0));
    s_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.s_->value.begin(), t.s_->value.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor from(std::vector<int64_t> shape, std::vector<T> values) {
    Tensor t(std::move(shape));
    require(static_cast<int64_t>(values.size()) == t.numel(), "tensor: value count mismatch");
    t.s_->value = std::move(values);
    return t;
  }

  bool defined() const { return static_cast<bool>(s_); }
  const std::vector<int64_t>& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int64_t size(int i) const { return s_->shape[i]; }
  int64_t numel() const { return static_cast<int64_t>(s_->value.size()); }

  T* data() { return s_->value.data(); }
  const T* data() const { return s_->value.data(); }
  std::vector<T>& values() { return s_->value; }
  const std::vector<T>& values() const { return s_->value; }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool rg) { s_->requires_grad = rg; }

  T* grad() {
    s_->ensure_grad();
    return s_->grad.data();
  }
  bool has_grad() const { return s_ && !s_->grad.empty(); }
  const std::vector<T>& grad_vector() const { return s_->grad; }
  void zero_grad() {
    if (s_ && !s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }

  T item() const {
    require(numel() == 1, "tensor: item() on non-scalar of ", numel(), " elements");
    return s_->value[0];
  }

  // Value copy detached from any graph.
  Tensor detach() const {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = s_->shape;
    t.s_->value = s_->value;
    t.s_->requires_grad = false;
    return t;
  }

  std::shared_ptr<Storage> storage() const { return s_; }

 private:
  std::shared_ptr<Storage> s_;
};

// Records the ops of one forward pass in execution order. backward() zeroes
// interior gradients, seeds the loss with 1 and replays the tape in reverse,
// so leaf gradients accumulate across repeated calls.
template <typename T>
class Tape {
 public:
  void push(std::shared_ptr<typename Tensor<T>::Storage> out, std::function<void()> fn) {
    outputs_.push_back(std::move(out));
    nodes_.push_back(std::move(fn));
  }

  size_t size() const { return nodes_.size(); }

  void backward(Tensor<T>& loss) {
    require(loss.numel() == 1, "backward: loss must be scalar, got ", loss.numel(), " elements");
    for (auto& out : outputs_) {
      if (!out->grad.empty()) std::fill(out->grad.begin(), out->grad.end(), T(0));
    }
    loss.storage()->ensure_grad();
    loss.storage()->grad[0] += T(1);
    for (size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<std::shared_ptr<typename Tensor<T>::Storage>> outputs_;
};

template <typename T>
void backward(Tape<T>& tape, Tensor<T>& loss) {
  tape.backward(loss);
}

// When enabled, every operator verifies its output is finite and aborts
// naming the op otherwise. Off by default (one branch per op when off).
inline bool& finite_checks() {
  static bool enabled = false;
  return enabled;
}

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!finite_checks()) return;
  for (int64_t i = 0; i < t.numel(); ++i) {
    require(std::isfinite(static_cast<double>(t.data()[i])), op,
            ": non-finite value at element ", i);
  }
}

template <typename T>
bool tracked(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (!tape) return false;
  for (const Tensor<T>* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Right-aligned broadcast of two shapes.
inline std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a,
                                            const std::vector<int64_t>& b) {
  const size_t rank = std::max(a.size(), b.size());
  std::vector<int64_t> out(rank);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    require(da == db || da == 1 || db == 1, "broadcast: incompatible shapes");
    out[i] = std::max(da, db);
  }
  return out;
}

inline std::vector<int64_t> row_strides(const std::vector<int64_t>& shape) {
  std::vector<int64_t> s(shape.size(), 1);
  for (size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Maps each linear index of `out_shape` to the linear index in `in_shape`
// (right-aligned, broadcast dims pinned to 0). Identity is common, so that
// case is signalled with an empty map.
inline std::vector<int64_t> broadcast_index_map(const std::vector<int64_t>& out_shape,
                                                const std::vector<int64_t>& in_shape) {
  if (out_shape == in_shape) return {};
  const auto out_str = row_strides(out_shape);
  const auto in_str = row_strides(in_shape);
  const size_t off = out_shape.size() - in_shape.size();
  std::vector<int64_t> map(shape_numel(out_shape));
  for (int64_t lin = 0; lin < static_cast<int64_t>(map.size()); ++lin) {
    int64_t rem = lin, idx = 0;
    for (size_t d = 0; d < out_shape.size(); ++d) {
      const int64_t coord = rem / out_str[d];
      rem %= out_str[d];
      if (d >= off && in_shape[d - off] != 1) idx += coord * in_str[d - off];
    }
    map[lin] = idx;
  }
  return map;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> binary_op(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, bool is_mul) {
  const auto out_shape = detail::broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  const auto map_a = detail::broadcast_index_map(out_shape, a.shape());
  const auto map_b = detail::broadcast_index_map(out_shape, b.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    const T va = map_a.empty() ? pa[i] : pa[map_a[i]];
    const T vb = map_b.empty() ? pb[i] : pb[map_b[i]];
    po[i] = is_mul ? va * vb : va + vb;
  }
  if (detail::tracked(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    const bool na = a.requires_grad(), nb = b.requires_grad();
    tape->push(so, [sa, sb, so, map_a, map_b, is_mul, n, na, nb] {
      if (so->grad.empty()) return;
      const T* g = so->grad.data();
      if (na) {
        sa->ensure_grad();
        T* ga = sa->grad.data();
        for (int64_t i = 0; i < n; ++i) {
          const T w = is_mul ? (map_b.empty() ? sb->value[i] : sb->value[map_b[i]]) : T(1);
          ga[map_a.empty() ? i : map_a[i]] += w * g[i];
        }
      }
      if (nb) {
        sb->ensure_grad();
        T* gb = sb->grad.data();
        for (int64_t i = 0; i < n; ++i) {
          const T w = is_mul ? (map_a.empty() ? sa->value[i] : sa->value[map_a[i]]) : T(1);
          gb[map_b.empty() ? i : map_b[i]] += w * g[i];
        }
      }
    });
  }
  detail::check_finite(out, "binary_op");
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(tape, a, b, false);
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(tape, a, b, true);
}

template <typename T>
Tensor<T> affine(Tape<T>* tape, const Tensor<T>& x, T scale, T shift) {
  Tensor<T> out(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = scale * x.data()[i] + shift;
  if (detail::tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    tape->push(so, [sx, so, scale, n] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      for (int64_t i = 0; i < n; ++i) sx->grad[i] += scale * so->grad[i];
    });
  }
  detail::check_finite(out, "affine");
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T c) {
  return affine(tape, x, c, T(0));
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  return add(tape, a, scale(tape, b, T(-1)));
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

enum class Pointwise { LeakyRelu, Elu, Sigmoid, Tanh, Abs, Log };

template <typename T>
Tensor<T> pointwise(Tape<T>* tape, Pointwise kind, const Tensor<T>& x, T alpha = T(0.2)) {
  Tensor<T> out(x.shape());
  const int64_t n = x.numel();
  const T* px = x.data();
  T* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const T v = px[i];
    switch (kind) {
      case Pointwise::LeakyRelu: po[i] = v > T(0) ? v : alpha * v; break;
      case Pointwise::Elu: po[i] = v > T(0) ? v : std::expm1(v); break;
      case Pointwise::Sigmoid: po[i] = T(1) / (T(1) + std::exp(-v)); break;
      case Pointwise::Tanh: po[i] = std::tanh(v); break;
      case Pointwise::Abs: po[i] = std::abs(v); break;
      case Pointwise::Log:
        require(v + alpha > T(0), "log: non-positive argument");
        po[i] = std::log(v + alpha);
        break;
    }
  }
  if (detail::tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    tape->push(so, [sx, so, kind, alpha, n] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      const T* g = so->grad.data();
      const T* v = sx->value.data();
      const T* y = so->value.data();
      T* gx = sx->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        T d;
        switch (kind) {
          case Pointwise::LeakyRelu: d = v[i] > T(0) ? T(1) : alpha; break;
          case Pointwise::Elu: d = v[i] > T(0) ? T(1) : y[i] + T(1); break;
          case Pointwise::Sigmoid: d = y[i] * (T(1) - y[i]); break;
          case Pointwise::Tanh: d = T(1) - y[i] * y[i]; break;
          case Pointwise::Abs: d = v[i] > T(0) ? T(1) : (v[i] < T(0) ? T(-1) : T(0)); break;
          case Pointwise::Log: d = T(1) / (v[i] + alpha); break;
        }
        gx[i] += d * g[i];
      }
    });
  }
  detail::check_finite(out, "pointwise");
  return out;
}

template <typename T>
Tensor<T> leaky_relu(Tape<T>* tape, const Tensor<T>& x, T alpha = T(0.2)) {
  return pointwise(tape, Pointwise::LeakyRelu, x, alpha);
}
template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  return pointwise(tape, Pointwise::LeakyRelu, x, T(0));
}
template <typename T>
Tensor<T> elu(Tape<T>* tape, const Tensor<T>& x) {
  return pointwise(tape, Pointwise::Elu, x);
}
template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
  return pointwise(tape, Pointwise::Sigmoid, x);
}
template <typename T>
Tensor<T> tanh_op(Tape<T>* tape, const Tensor<T>& x) {
  return pointwise(tape, Pointwise::Tanh, x);
}
template <typename T>
Tensor<T> abs_op(Tape<T>* tape, const Tensor<T>& x) {
  return pointwise(tape, Pointwise::Abs, x);
}
template <typename T>
Tensor<T> log_eps(Tape<T>* tape, const Tensor<T>& x, T eps) {
  return pointwise(tape, Pointwise::Log, x, eps);
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename T>
Tensor<T> reduce(Tape<T>* tape, const Tensor<T>& x, bool mean_reduce) {
  const int64_t n = x.numel();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) acc += x.data()[i];
  if (mean_reduce) acc /= static_cast<T>(n);
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    const T w = mean_reduce ? T(1) / static_cast<T>(n) : T(1);
    tape->push(so, [sx, so, w, n] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      const T g = so->grad[0] * w;
      for (int64_t i = 0; i < n; ++i) sx->grad[i] += g;
    });
  }
  detail::check_finite(out, "reduce");
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>* tape, const Tensor<T>& x) {
  return reduce(tape, x, true);
}
template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
  return reduce(tape, x, false);
}

// mean |a - b|
template <typename T>
Tensor<T> l1_loss(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "l1_loss: shape mismatch");
  const int64_t n = a.numel();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) acc += std::abs(a.data()[i] - b.data()[i]);
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
  if (detail::tracked(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    const bool na = a.requires_grad(), nb = b.requires_grad();
    tape->push(so, [sa, sb, so, n, na, nb] {
      if (so->grad.empty()) return;
      const T g = so->grad[0] / static_cast<T>(n);
      if (na) sa->ensure_grad();
      if (nb) sb->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const T d = sa->value[i] - sb->value[i];
        const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
        if (na) sa->grad[i] += s * g;
        if (nb) sb->grad[i] -= s * g;
      }
    });
  }
  detail::check_finite(out, "l1_loss");
  return out;
}

// mean (a - b)^2
template <typename T>
Tensor<T> mse_loss(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mse_loss: shape mismatch");
  const int64_t n = a.numel();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) {
    const T d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
  if (detail::tracked(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    const bool na = a.requires_grad(), nb = b.requires_grad();
    tape->push(so, [sa, sb, so, n, na, nb] {
      if (so->grad.empty()) return;
      const T g = T(2) * so->grad[0] / static_cast<T>(n);
      if (na) sa->ensure_grad();
      if (nb) sb->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const T d = sa->value[i] - sb->value[i];
        if (na) sa->grad[i] += g * d;
        if (nb) sb->grad[i] -= g * d;
      }
    });
  }
  detail::check_finite(out, "mse_loss");
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& x, std::vector<int64_t> shape) {
  require(shape_numel(shape) == x.numel(), "reshape: element count mismatch");
  Tensor<T> out = Tensor<T>::from(std::move(shape), x.values());
  if (detail::tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    tape->push(so, [sx, so] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      for (size_t i = 0; i < so->grad.size(); ++i) sx->grad[i] += so->grad[i];
    });
  }
  detail::check_finite(out, "reshape");
  return out;
}

template <typename T>
Tensor<T> concat(Tape<T>* tape, const std::vector<Tensor<T>>& xs, int axis) {
  require(!xs.empty(), "concat: no inputs");
  auto shape = xs[0].shape();
  require(axis >= 0 && axis < static_cast<int>(shape.size()), "concat: bad axis");
  int64_t total = 0;
  for (const auto& x : xs) {
    require(x.rank() == xs[0].rank(), "concat: rank mismatch");
    for (int d = 0; d < x.rank(); ++d) {
      if (d != axis) require(x.size(d) == shape[d], "concat: shape mismatch on dim ", d);
    }
    total += x.size(axis);
  }
  shape[axis] = total;
  Tensor<T> out(shape);

  // outer x axis x inner layout
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  for (int d = axis + 1; d < static_cast<int>(shape.size()); ++d) inner *= shape[d];

  std::vector<int64_t> offsets(xs.size());
  int64_t off = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    offsets[i] = off;
    off += xs[i].size(axis);
  }
  for (size_t i = 0; i < xs.size(); ++i) {
    const int64_t ai = xs[i].size(axis);
    const T* src = xs[i].data();
    for (int64_t o = 0; o < outer; ++o) {
      T* dst = out.data() + (o * total + offsets[i]) * inner;
      std::copy(src + o * ai * inner, src + (o + 1) * ai * inner, dst);
    }
  }
  bool any = false;
  for (const auto& x : xs) {
    if (x.requires_grad()) any = true;
  }
  if (tape && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<typename Tensor<T>::Storage>> srcs;
    for (const auto& x : xs) srcs.push_back(x.storage());
    auto so = out.storage();
    const std::vector<int64_t> sizes = [&] {
      std::vector<int64_t> v;
      for (const auto& x : xs) v.push_back(x.size(axis));
      return v;
    }();
    std::vector<char> need;
    for (const auto& x : xs) need.push_back(x.requires_grad() ? 1 : 0);
    tape->push(so, [srcs, so, sizes, offsets, outer, inner, total, need] {
      if (so->grad.empty()) return;
      for (size_t i = 0; i < srcs.size(); ++i) {
        if (!need[i]) continue;
        srcs[i]->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          const T* g = so->grad.data() + (o * total + offsets[i]) * inner;
          T* dst = srcs[i]->grad.data() + o * sizes[i] * inner;
          for (int64_t j = 0; j < sizes[i] * inner; ++j) dst[j] += g[j];
        }
      }
    });
  }
  detail::check_finite(out, "concat");
  return out;
}

template <typename T>
Tensor<T> slice(Tape<T>* tape, const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  require(axis >= 0 && axis < x.rank(), "slice: bad axis");
  require(start >= 0 && len > 0 && start + len <= x.size(axis), "slice: out of range");
  auto shape = x.shape();
  shape[axis] = len;
  Tensor<T> out(shape);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.size(d);
  for (int d = axis + 1; d < x.rank(); ++d) inner *= x.size(d);
  const int64_t ax = x.size(axis);
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = x.data() + (o * ax + start) * inner;
    std::copy(src, src + len * inner, out.data() + o * len * inner);
  }
  if (detail::tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    tape->push(so, [sx, so, outer, inner, ax, start, len] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        const T* g = so->grad.data() + o * len * inner;
        T* dst = sx->grad.data() + (o * ax + start) * inner;
        for (int64_t j = 0; j < len * inner; ++j) dst[j] += g[j];
      }
    });
  }
  detail::check_finite(out, "slice");
  return out;
}

// Zero padding on the last axis.
template <typename T>
Tensor<T> pad_last(Tape<T>* tape, const Tensor<T>& x, int64_t left, int64_t right) {
  require(left >= 0 && right >= 0, "pad: negative padding");
  auto shape = x.shape();
  const int64_t L = shape.back();
  shape.back() = L + left + right;
  Tensor<T> out(shape);
  const int64_t rows = x.numel() / L;
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(x.data() + r * L, x.data() + (r + 1) * L, out.data() + r * shape.back() + left);
  }
  if (detail::tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    const int64_t Lp = shape.back();
    tape->push(so, [sx, so, rows, L, Lp, left] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* g = so->grad.data() + r * Lp + left;
        T* dst = sx->grad.data() + r * L;
        for (int64_t j = 0; j < L; ++j) dst[j] += g[j];
      }
    });
  }
  detail::check_finite(out, "pad_last");
  return out;
}

// ---------------------------------------------------------------------------
// Causal 1-D convolution
//
// Left padding D*(K-1) - (S-1) contracts the length by exactly S; frame t of
// the output sees inputs no later than t*S + S - 1, i.e. nothing from frames
// after t.

template <typename T>
Tensor<T> conv1d_causal(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                        const Tensor<T>& bias, int stride, int dilation = 1) {
  require(x.rank() == 3, "conv1d: input must be [batch, channels, length]");
  require(w.rank() == 3, "conv1d: weight must be [out, in, kernel]");
  const int64_t B = x.size(0), Cin = x.size(1), L = x.size(2);
  const int64_t Cout = w.size(0), K = w.size(2);
  require(w.size(1) == Cin, "conv1d: channel mismatch (input ", Cin, ", weight ", w.size(1), ")");
  require(stride >= 1 && dilation >= 1, "conv1d: bad stride/dilation");
  require(L % stride == 0, "conv1d: length ", L, " not divisible by stride ", stride);
  if (bias.defined()) require(bias.numel() == Cout, "conv1d: bias size mismatch");

  const int64_t pad = static_cast<int64_t>(dilation) * (K - 1) - (stride - 1);
  require(pad >= 0, "conv1d: kernel/stride yields negative padding");
  const int64_t Lp = L + pad;
  const int64_t Lout = L / stride;

  auto xp = std::make_shared<std::vector<T>>(B * Cin * Lp, T(0));
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < Cin; ++c) {
      std::copy(x.data() + (b * Cin + c) * L, x.data() + (b * Cin + c + 1) * L,
                xp->data() + (b * Cin + c) * Lp + pad);
    }
  }

  Tensor<T> out({B, Cout, Lout});
  const T* pw = w.data();
  const T* pb = bias.defined() ? bias.data() : nullptr;
  T* po = out.data();
  const T* pxp = xp->data();
  parallel_for(B * Cout, [&](int64_t lo, int64_t hi) {
    for (int64_t bc = lo; bc < hi; ++bc) {
      const int64_t b = bc / Cout, oc = bc % Cout;
      T* row = po + (b * Cout + oc) * Lout;
      const T bv = pb ? pb[oc] : T(0);
      for (int64_t t = 0; t < Lout; ++t) row[t] = bv;
      for (int64_t ic = 0; ic < Cin; ++ic) {
        const T* xr = pxp + (b * Cin + ic) * Lp;
        const T* wr = pw + (oc * Cin + ic) * K;
        for (int64_t k = 0; k < K; ++k) {
          const T wv = wr[k];
          if (wv == T(0)) continue;
          const T* xs = xr + k * dilation;
          if (stride == 1) {
            for (int64_t t = 0; t < Lout; ++t) row[t] += wv * xs[t];
          } else {
            for (int64_t t = 0; t < Lout; ++t) row[t] += wv * xs[t * stride];
          }
        }
      }
    }
  });

  if (detail::tracked(tape, {&x, &w, &bias})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), sw = w.storage(), so = out.storage();
    auto sb = bias.defined() ? bias.storage() : nullptr;
    const bool nx = x.requires_grad(), nw = w.requires_grad();
    const bool nb = bias.defined() && bias.requires_grad();
    tape->push(so, [sx, sw, sb, so, xp, B, Cin, Cout, L, Lp, Lout, K, stride, dilation, pad, nx,
                    nw, nb] {
      if (so->grad.empty()) return;
      const T* g = so->grad.data();
      if (nx) {
        sx->ensure_grad();
        std::vector<T> gxp(B * Cin * Lp, T(0));
        T* pgxp = gxp.data();
        const T* pw = sw->value.data();
        parallel_for(B * Cin, [&](int64_t lo, int64_t hi) {
          for (int64_t bc = lo; bc < hi; ++bc) {
            const int64_t b = bc / Cin, ic = bc % Cin;
            T* gxr = pgxp + (b * Cin + ic) * Lp;
            for (int64_t oc = 0; oc < Cout; ++oc) {
              const T* gr = g + (b * Cout + oc) * Lout;
              const T* wr = pw + (oc * Cin + ic) * K;
              for (int64_t k = 0; k < K; ++k) {
                const T wv = wr[k];
                if (wv == T(0)) continue;
                T* gxs = gxr + k * dilation;
                if (stride == 1) {
                  for (int64_t t = 0; t < Lout; ++t) gxs[t] += wv * gr[t];
                } else {
                  for (int64_t t = 0; t < Lout; ++t) gxs[t * stride] += wv * gr[t];
                }
              }
            }
          }
        });
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t c = 0; c < Cin; ++c) {
            T* dst = sx->grad.data() + (b * Cin + c) * L;
            const T* src = pgxp + (b * Cin + c) * Lp + pad;
            for (int64_t i = 0; i < L; ++i) dst[i] += src[i];
          }
        }
      }
      if (nw) {
        sw->ensure_grad();
        T* gw = sw->grad.data();
        const T* pxp = xp->data();
        parallel_for(Cout, [&](int64_t lo, int64_t hi) {
          for (int64_t oc = lo; oc < hi; ++oc) {
            for (int64_t b = 0; b < B; ++b) {
              const T* gr = g + (b * Cout + oc) * Lout;
              for (int64_t ic = 0; ic < Cin; ++ic) {
                const T* xr = pxp + (b * Cin + ic) * Lp;
                T* gwr = gw + (oc * Cin + ic) * K;
                for (int64_t k = 0; k < K; ++k) {
                  const T* xs = xr + k * dilation;
                  T acc = T(0);
                  if (stride == 1) {
                    for (int64_t t = 0; t < Lout; ++t) acc += gr[t] * xs[t];
                  } else {
                    for (int64_t t = 0; t < Lout; ++t) acc += gr[t] * xs[t * stride];
                  }
                  gwr[k] += acc;
                }
              }
            }
          }
        });
      }
      if (nb) {
        sb->ensure_grad();
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t oc = 0; oc < Cout; ++oc) {
            const T* gr = g + (b * Cout + oc) * Lout;
            T acc = T(0);
            for (int64_t t = 0; t < Lout; ++t) acc += gr[t];
            sb->grad[oc] += acc;
          }
        }
      }
    });
  }
  detail::check_finite(out, "conv1d_causal");
  return out;
}

// Causal transposed convolution; expands length by exactly S, cropping the
// trailing K - S samples of the full zero-stuffed convolution.
template <typename T>
Tensor<T> conv_transpose1d_causal(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w,
                                  const Tensor<T>& bias, int stride) {
  require(x.rank() == 3, "conv_transpose1d: input must be [batch, channels, length]");
  require(w.rank() == 3, "conv_transpose1d: weight must be [in, out, kernel]");
  const int64_t B = x.size(0), Cin = x.size(1), L = x.size(2);
  const int64_t Cout = w.size(1), K = w.size(2);
  require(w.size(0) == Cin, "conv_transpose1d: channel mismatch");
  require(stride >= 1 && K >= stride, "conv_transpose1d: kernel must cover the stride");
  if (bias.defined()) require(bias.numel() == Cout, "conv_transpose1d: bias size mismatch");
  const int64_t Lout = L * stride;

  Tensor<T> out({B, Cout, Lout});
  const T* px = x.data();
  const T* pw = w.data();
  const T* pb = bias.defined() ? bias.data() : nullptr;
  T* po = out.data();
  parallel_for(B * Cout, [&](int64_t lo, int64_t hi) {
    for (int64_t bc = lo; bc < hi; ++bc) {
      const int64_t b = bc / Cout, oc = bc % Cout;
      T* row = po + (b * Cout + oc) * Lout;
      const T bv = pb ? pb[oc] : T(0);
      for (int64_t u = 0; u < Lout; ++u) row[u] = bv;
      for (int64_t ic = 0; ic < Cin; ++ic) {
        const T* xr = px + (b * Cin + ic) * L;
        const T* wr = pw + (ic * Cout + oc) * K;
        for (int64_t t = 0; t < L; ++t) {
          const T xv = xr[t];
          if (xv == T(0)) continue;
          const int64_t base = t * stride;
          const int64_t kmax = std::min<int64_t>(K, Lout - base);
          for (int64_t k = 0; k < kmax; ++k) row[base + k] += xv * wr[k];
        }
      }
    }
  });

  if (detail::tracked(tape, {&x, &w, &bias})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), sw = w.storage(), so = out.storage();
    auto sb = bias.defined() ? bias.storage() : nullptr;
    const bool nx = x.requires_grad(), nw = w.requires_grad();
    const bool nb = bias.defined() && bias.requires_grad();
    tape->push(so, [sx, sw, sb, so, B, Cin, Cout, L, Lout, K, stride, nx, nw, nb] {
      if (so->grad.empty()) return;
      const T* g = so->grad.data();
      if (nx) {
        sx->ensure_grad();
        const T* pw = sw->value.data();
        parallel_for(B * Cin, [&](int64_t lo, int64_t hi) {
          for (int64_t bc = lo; bc < hi; ++bc) {
            const int64_t b = bc / Cin, ic = bc % Cin;
            T* gxr = sx->grad.data() + (b * Cin + ic) * L;
            for (int64_t oc = 0; oc < Cout; ++oc) {
              const T* gr = g + (b * Cout + oc) * Lout;
              const T* wr = pw + (ic * Cout + oc) * K;
              for (int64_t t = 0; t < L; ++t) {
                const int64_t base = t * stride;
                const int64_t kmax = std::min<int64_t>(K, Lout - base);
                T acc = T(0);
                for (int64_t k = 0; k < kmax; ++k) acc += gr[base + k] * wr[k];
                gxr[t] += acc;
              }
            }
          }
        });
      }
      if (nw) {
        sw->ensure_grad();
        T* gw = sw->grad.data();
        const T* px = sx->value.data();
        parallel_for(Cin, [&](int64_t lo, int64_t hi) {
          for (int64_t ic = lo; ic < hi; ++ic) {
            for (int64_t b = 0; b < B; ++b) {
              const T* xr = px + (b * Cin + ic) * L;
              for (int64_t oc = 0; oc < Cout; ++oc) {
                const T* gr = g + (b * Cout + oc) * Lout;
                T* gwr = gw + (ic * Cout + oc) * K;
                for (int64_t t = 0; t < L; ++t) {
                  const T xv = xr[t];
                  if (xv == T(0)) continue;
                  const int64_t base = t * stride;
                  const int64_t kmax = std::min<int64_t>(K, Lout - base);
                  for (int64_t k = 0; k < kmax; ++k) gwr[k] += xv * gr[base + k];
                }
              }
            }
          }
        });
      }
      if (nb) {
        sb->ensure_grad();
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t oc = 0; oc < Cout; ++oc) {
            const T* gr = g + (b * Cout + oc) * Lout;
            T acc = T(0);
            for (int64_t u = 0; u < Lout; ++u) acc += gr[u];
            sb->grad[oc] += acc;
          }
        }
      }
    });
  }
  detail::check_finite(out, "conv_transpose1d_causal");
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over [batch, channel, length]

template <typename T>
Tensor<T> batch_norm1d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                       bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  require(x.rank() == 3, "batch_norm: input must be [batch, channels, length]");
  const int64_t B = x.size(0), C = x.size(1), L = x.size(2);
  require(B >= 1 && L >= 1, "batch_norm: empty batch");
  require(gamma.numel() == C && beta.numel() == C, "batch_norm: affine size mismatch");
  require(running_mean.numel() == C && running_var.numel() == C,
          "batch_norm: running stat size mismatch");

  const int64_t N = B * L;
  std::vector<T> mu(C, T(0)), var(C, T(0)), invstd(C, T(0));
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      T m = T(0);
      for (int64_t b = 0; b < B; ++b) {
        const T* row = x.data() + (b * C + c) * L;
        for (int64_t i = 0; i < L; ++i) m += row[i];
      }
      m /= static_cast<T>(N);
      T v = T(0);
      for (int64_t b = 0; b < B; ++b) {
        const T* row = x.data() + (b * C + c) * L;
        for (int64_t i = 0; i < L; ++i) {
          const T d = row[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<T>(N);
      mu[c] = m;
      var[c] = v;
      running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * m;
      running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * v;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mu[c] = running_mean.data()[c];
      var[c] = running_var.data()[c];
    }
  }
  for (int64_t c = 0; c < C; ++c) invstd[c] = T(1) / std::sqrt(var[c] + eps);

  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const T* row = x.data() + (b * C + c) * L;
      T* hrow = xhat->data() + (b * C + c) * L;
      T* orow = out.data() + (b * C + c) * L;
      const T g = gamma.data()[c], be = beta.data()[c], m = mu[c], is = invstd[c];
      for (int64_t i = 0; i < L; ++i) {
        hrow[i] = (row[i] - m) * is;
        orow[i] = g * hrow[i] + be;
      }
    }
  }

  if (detail::tracked(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), sg = gamma.storage(), sbt = beta.storage(), so = out.storage();
    const bool nx = x.requires_grad(), ng = gamma.requires_grad(), nbt = beta.requires_grad();
    tape->push(so, [sx, sg, sbt, so, xhat, invstd, B, C, L, N, training, nx, ng, nbt] {
      if (so->grad.empty()) return;
      const T* g = so->grad.data();
      for (int64_t c = 0; c < C; ++c) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int64_t b = 0; b < B; ++b) {
          const T* gr = g + (b * C + c) * L;
          const T* hr = xhat->data() + (b * C + c) * L;
          for (int64_t i = 0; i < L; ++i) {
            sum_dy += gr[i];
            sum_dy_xhat += gr[i] * hr[i];
          }
        }
        if (ng) {
          sg->ensure_grad();
          sg->grad[c] += sum_dy_xhat;
        }
        if (nbt) {
          sbt->ensure_grad();
          sbt->grad[c] += sum_dy;
        }
        if (nx) {
          sx->ensure_grad();
          const T gam = sg->value[c], is = invstd[c];
          const T mean_dy = sum_dy / static_cast<T>(N);
          const T mean_dy_xhat = sum_dy_xhat / static_cast<T>(N);
          for (int64_t b = 0; b < B; ++b) {
            const T* gr = g + (b * C + c) * L;
            const T* hr = xhat->data() + (b * C + c) * L;
            T* gx = sx->grad.data() + (b * C + c) * L;
            for (int64_t i = 0; i < L; ++i) {
              if (training) {
                gx[i] += gam * is * (gr[i] - mean_dy - hr[i] * mean_dy_xhat);
              } else {
                gx[i] += gam * is * gr[i];
              }
            }
          }
        }
      }
    });
  }
  detail::check_finite(out, "batch_norm1d");
  return out;
}

// ---------------------------------------------------------------------------
// Per-item causal FIR: y[b,t] = sum_j k[b,j] x[b,t-j], truncated to the
// signal length. FFT-based in both directions.

namespace detail {

template <typename T>
std::vector<T> fft_corr_or_conv(const T* a, int64_t la, const T* b, int64_t lb, int64_t lout,
                                bool conjugate_b) {
  const size_t n = next_pow2(static_cast<size_t>(la + lb - 1));
  std::vector<std::complex<T>> fa(n, {T(0), T(0)}), fb(n, {T(0), T(0)});
  for (int64_t i = 0; i < la; ++i) fa[i] = {a[i], T(0)};
  for (int64_t i = 0; i < lb; ++i) fb[i] = {b[i], T(0)};
  fft_inplace(fa, false);
  fft_inplace(fb, false);
  for (size_t i = 0; i < n; ++i) fa[i] *= conjugate_b ? std::conj(fb[i]) : fb[i];
  fft_inplace(fa, true);
  std::vector<T> out(lout);
  const T inv = T(1) / static_cast<T>(n);
  for (int64_t i = 0; i < lout; ++i) out[i] = fa[i].real() * inv;
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> fir_causal(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& kernel) {
  require(x.rank() == 2 && kernel.rank() == 2, "fir: inputs must be [batch, length]");
  const int64_t B = x.size(0), L = x.size(1), Lk = kernel.size(1);
  require(kernel.size(0) == B, "fir: batch mismatch");

  Tensor<T> out({B, L});
  parallel_for(B, [&](int64_t lo, int64_t hi) {
    for (int64_t b = lo; b < hi; ++b) {
      auto y = detail::fft_corr_or_conv(x.data() + b * L, L, kernel.data() + b * Lk, Lk, L, false);
      std::copy(y.begin(), y.end(), out.data() + b * L);
    }
  });

  if (detail::tracked(tape, {&x, &kernel})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), sk = kernel.storage(), so = out.storage();
    const bool nx = x.requires_grad(), nk = kernel.requires_grad();
    tape->push(so, [sx, sk, so, B, L, Lk, nx, nk] {
      if (so->grad.empty()) return;
      const T* g = so->grad.data();
      if (nx) sx->ensure_grad();
      if (nk) sk->ensure_grad();
      parallel_for(B, [&](int64_t lo, int64_t hi) {
        for (int64_t b = lo; b < hi; ++b) {
          if (nx) {
            auto gx = detail::fft_corr_or_conv(g + b * L, L, sk->value.data() + b * Lk, Lk, L, true);
            T* dst = sx->grad.data() + b * L;
            for (int64_t i = 0; i < L; ++i) dst[i] += gx[i];
          }
          if (nk) {
            auto gk = detail::fft_corr_or_conv(g + b * L, L, sx->value.data() + b * L, L, Lk, true);
            T* dst = sk->grad.data() + b * Lk;
            for (int64_t i = 0; i < Lk; ++i) dst[i] += gk[i];
          }
        }
      });
    });
  }
  detail::check_finite(out, "fir_causal");
  return out;
}

// ---------------------------------------------------------------------------
// Spectral magnitude of framed signals: [B, C, L] -> [B, C, frames, bins].

template <typename T>
Tensor<T> stft_mag(Tape<T>* tape, const Tensor<T>& x, const dsp::StftConfig& cfg) {
  require(x.rank() == 3, "stft_mag: input must be [batch, channels, length]");
  require(cfg.hop > 0, "stft_mag: hop must be positive");
  require(is_pow2(static_cast<size_t>(cfg.fft_size)), "stft_mag: fft_size not a power of two");
  require(cfg.win_length > 0 && cfg.win_length <= cfg.fft_size, "stft_mag: bad window length");
  const int64_t B = x.size(0), C = x.size(1), L = x.size(2);
  require(L >= cfg.fft_size, "stft_mag: signal shorter than fft_size");

  const int64_t F = (L + cfg.hop - 1) / cfg.hop;
  const int64_t bins = cfg.fft_size / 2 + 1;
  const int64_t N = cfg.fft_size;

  auto window_d = dsp::hann_window(cfg.win_length);
  auto window = std::make_shared<std::vector<T>>(window_d.begin(), window_d.end());

  Tensor<T> out({B, C, F, bins});
  auto re = std::make_shared<std::vector<T>>(B * C * F * bins);
  auto im = std::make_shared<std::vector<T>>(B * C * F * bins);

  parallel_for(B * C, [&](int64_t lo, int64_t hi) {
    std::vector<std::complex<T>> buf(N);
    for (int64_t bc = lo; bc < hi; ++bc) {
      const T* sig = x.data() + bc * L;
      for (int64_t f = 0; f < F; ++f) {
        std::fill(buf.begin(), buf.end(), std::complex<T>(0, 0));
        const int64_t start = f * cfg.hop;
        for (int64_t i = 0; i < cfg.win_length && start + i < L; ++i) {
          buf[i] = {sig[start + i] * (*window)[i], T(0)};
        }
        fft_inplace(buf, false);
        const int64_t base = (bc * F + f) * bins;
        for (int64_t k = 0; k < bins; ++k) {
          (*re)[base + k] = buf[k].real();
          (*im)[base + k] = buf[k].imag();
          out.data()[base + k] = std::hypot(buf[k].real(), buf[k].imag());
        }
      }
    }
  });

  if (detail::tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    tape->push(so, [sx, so, re, im, window, B, C, F, bins, N, L, cfg] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      const T* g = so->grad.data();
      const T* mag = so->value.data();
      parallel_for(B * C, [&](int64_t lo, int64_t hi) {
        std::vector<std::complex<T>> buf(N);
        for (int64_t bc = lo; bc < hi; ++bc) {
          T* gx = sx->grad.data() + bc * L;
          for (int64_t f = 0; f < F; ++f) {
            const int64_t base = (bc * F + f) * bins;
            std::fill(buf.begin(), buf.end(), std::complex<T>(0, 0));
            bool any = false;
            for (int64_t k = 0; k < bins; ++k) {
              const T gm = g[base + k];
              if (gm == T(0)) continue;
              any = true;
              const T m = std::max(mag[base + k], T(1e-30));
              buf[k] = {gm * (*re)[base + k] / m, gm * (*im)[base + k] / m};
            }
            if (!any) continue;
            fft_inplace(buf, true);  // unnormalized adjoint of the forward DFT
            const int64_t start = f * cfg.hop;
            for (int64_t i = 0; i < cfg.win_length && start + i < L; ++i) {
              gx[start + i] += buf[i].real() * (*window)[i];
            }
          }
        }
      });
    });
  }
  detail::check_finite(out, "stft_mag");
  return out;
}

// Applies a mel filterbank along the last (bin) axis: [..., bins] -> [..., n_mels].
template <typename T>
Tensor<T> mel_apply(Tape<T>* tape, const Tensor<T>& mags, const dsp::MelBank& bank) {
  require(mags.rank() >= 1 && mags.shape().back() == bank.bins, "mel_apply: bin count mismatch");
  auto shape = mags.shape();
  shape.back() = bank.n_mels;
  Tensor<T> out(shape);
  const int64_t rows = mags.numel() / bank.bins;
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = mags.data() + r * bank.bins;
    T* dst = out.data() + r * bank.n_mels;
    for (int m = 0; m < bank.n_mels; ++m) {
      const auto& wrow = bank.weights[m];
      T acc = T(0);
      for (size_t j = 0; j < wrow.size(); ++j) acc += static_cast<T>(wrow[j]) * src[bank.lo[m] + j];
      dst[m] = acc;
    }
  }
  if (detail::tracked(tape, {&mags})) {
    out.set_requires_grad(true);
    auto sx = mags.storage(), so = out.storage();
    auto bank_copy = std::make_shared<dsp::MelBank>(bank);
    const int64_t bins = bank.bins;
    const int64_t n_mels = bank.n_mels;
    tape->push(so, [sx, so, bank_copy, rows, bins, n_mels] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* g = so->grad.data() + r * n_mels;
        T* gx = sx->grad.data() + r * bins;
        for (int m = 0; m < n_mels; ++m) {
          const auto& wrow = bank_copy->weights[m];
          const T gm = g[m];
          if (gm == T(0)) continue;
          for (size_t j = 0; j < wrow.size(); ++j) {
            gx[bank_copy->lo[m] + j] += static_cast<T>(wrow[j]) * gm;
          }
        }
      }
    });
  }
  detail::check_finite(out, "mel_apply");
  return out;
}

// ---------------------------------------------------------------------------
// Discriminator helpers

// Splits [B, C, L] into p phase-decimated signals stacked on the batch axis:
// out[b*p + phi, c, t] = x[b, c, t*p + phi].
template <typename T>
Tensor<T> fold_period(Tape<T>* tape, const Tensor<T>& x, int period) {
  require(x.rank() == 3, "fold_period: input must be [batch, channels, length]");
  const int64_t B = x.size(0), C = x.size(1), L = x.size(2);
  require(period >= 1 && L % period == 0, "fold_period: length ", L, " not divisible by ", period);
  const int64_t Lp = L / period;
  Tensor<T> out({B * period, C, Lp});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t phi = 0; phi < period; ++phi) {
      for (int64_t c = 0; c < C; ++c) {
        const T* src = x.data() + (b * C + c) * L;
        T* dst = out.data() + (((b * period + phi) * C) + c) * Lp;
        for (int64_t t = 0; t < Lp; ++t) dst[t] = src[t * period + phi];
      }
    }
  }
  if (detail::tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    tape->push(so, [sx, so, B, C, L, Lp, period] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t phi = 0; phi < period; ++phi) {
          for (int64_t c = 0; c < C; ++c) {
            const T* g = so->grad.data() + (((b * period + phi) * C) + c) * Lp;
            T* gx = sx->grad.data() + (b * C + c) * L;
            for (int64_t t = 0; t < Lp; ++t) gx[t * period + phi] += g[t];
          }
        }
      }
    });
  }
  detail::check_finite(out, "fold_period");
  return out;
}

template <typename T>
Tensor<T> avg_pool1d(Tape<T>* tape, const Tensor<T>& x, int k, int stride) {
  require(x.rank() == 3, "avg_pool1d: input must be [batch, channels, length]");
  const int64_t B = x.size(0), C = x.size(1), L = x.size(2);
  require(k >= 1 && stride >= 1 && L >= k, "avg_pool1d: bad window");
  const int64_t Lout = (L - k) / stride + 1;
  Tensor<T> out({B, C, Lout});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = x.data() + bc * L;
    T* dst = out.data() + bc * Lout;
    for (int64_t t = 0; t < Lout; ++t) {
      T acc = T(0);
      for (int j = 0; j < k; ++j) acc += src[t * stride + j];
      dst[t] = acc / static_cast<T>(k);
    }
  }
  if (detail::tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    tape->push(so, [sx, so, B, C, L, Lout, k, stride] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* g = so->grad.data() + bc * Lout;
        T* gx = sx->grad.data() + bc * L;
        for (int64_t t = 0; t < Lout; ++t) {
          const T gv = g[t] / static_cast<T>(k);
          for (int j = 0; j < k; ++j) gx[t * stride + j] += gv;
        }
      }
    });
  }
  detail::check_finite(out, "avg_pool1d");
  return out;
}

// ---------------------------------------------------------------------------
// Straight-through estimator: forward takes `replacement`, backward passes
// gradients through to `x` unchanged.

template <typename T>
Tensor<T> straight_through(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& replacement) {
  require(x.shape() == replacement.shape(), "straight_through: shape mismatch");
  Tensor<T> out = Tensor<T>::from(x.shape(), replacement.values());
  if (detail::tracked(tape, {&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    tape->push(so, [sx, so] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      for (size_t i = 0; i < so->grad.size(); ++i) sx->grad[i] += so->grad[i];
    });
  }
  detail::check_finite(out, "straight_through");
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckOptions {
  double h = 1e-5;
  int64_t max_probes_per_input = -1;  // -1: every element
  uint64_t probe_seed = 17;
  // Gradients whose analytic and numeric values both sit below this bound
  // count as matching zeros: central differences cannot resolve components
  // under the roundoff floor |f| * eps / h.
  double zero_floor = 1e-4;
  // Richardson extrapolation over h and h/2 cancels the O(h^2) truncation
  // term; twice the evaluations, needed for deep, highly curved graphs.
  bool richardson = false;
};

// Central finite differences against tape gradients; returns the worst
// relative error over all probed elements.
template <typename T>
T grad_check(const std::function<Tensor<T>(Tape<T>*, std::vector<Tensor<T>>&)>& f,
             std::vector<Tensor<T>> inputs, const GradCheckOptions& opt = {}) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tape<T> tape;
  Tensor<T> loss = f(&tape, inputs);
  require(loss.numel() == 1, "grad_check: objective must be scalar");
  tape.backward(loss);

  std::vector<std::vector<T>> analytic;
  for (auto& in : inputs) {
    analytic.push_back(in.has_grad() ? in.grad_vector() : std::vector<T>(in.numel(), T(0)));
  }

  // Value-only evaluations: drop gradient tracking while probing.
  for (auto& in : inputs) in.set_requires_grad(false);

  const T h = static_cast<T>(opt.h);
  T worst = T(0);
  Rng probe_rng(opt.probe_seed);
  for (size_t idx = 0; idx < inputs.size(); ++idx) {
    auto& in = inputs[idx];
    std::vector<int64_t> probes;
    if (opt.max_probes_per_input < 0 || in.numel() <= opt.max_probes_per_input) {
      probes.resize(in.numel());
      std::iota(probes.begin(), probes.end(), 0);
    } else {
      for (int64_t p = 0; p < opt.max_probes_per_input; ++p) {
        probes.push_back(static_cast<int64_t>(probe_rng.below(in.numel())));
      }
    }
    for (int64_t e : probes) {
      const T saved = in.data()[e];
      auto central = [&](T step) {
        in.data()[e] = saved + step;
        Tape<T> t1;
        const T fp = f(&t1, inputs).item();
        in.data()[e] = saved - step;
        Tape<T> t2;
        const T fm = f(&t2, inputs).item();
        in.data()[e] = saved;
        return (fp - fm) / (T(2) * step);
      };
      T numeric = central(h);
      if (opt.richardson) {
        const T finer = central(h / T(2));
        numeric = (T(4) * finer - numeric) / T(3);
      }
      const T a = analytic[idx][e];
      const T floor = static_cast<T>(opt.zero_floor);
      if (std::abs(a) < floor && std::abs(numeric) < floor) continue;
      const T denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (auto& in : inputs) in.set_requires_grad(true);
  return worst;
}

}  // namespace banc::ad
