#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "cantus/error.hpp"

namespace cantus {

struct ShapeMismatch : Error {
  using Error::Error;
};
struct EmptyMask : Error {
  using Error::Error;
};

using Shape = std::vector<int>;

/// 64-byte-aligned storage for tensor buffers. SIMD kernels (Eigen
/// reductions in particular) pick their prologue from the pointer alignment;
/// fixing the alignment keeps floating-point evaluation order identical
/// across runs, which the determinism contract requires.
template <typename T>
struct TensorAlloc {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  TensorAlloc() = default;
  template <class U>
  TensorAlloc(const TensorAlloc<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  bool operator==(const TensorAlloc&) const { return true; }
};

template <typename T>
using TensorVec = std::vector<T, TensorAlloc<T>>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Autograd toggle. Ops record backward closures only while enabled.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool saved;
  NoGradGuard() : saved(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = saved; }
};

template <typename T>
struct TensorNode {
  Shape shape;
  TensorVec<T> value;
  TensorVec<T> grad;  // sized lazily; same length as value when in use
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

/// Dense n-dimensional array with reverse-mode automatic differentiation.
/// Value-semantics handle: copies share the underlying node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(shape_numel(t.node_->shape), value);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_data(Shape shape, const std::vector<T>& data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw ShapeMismatch("from_data: " + shape_str(shape) + " vs " + std::to_string(data.size()) +
                          " values");
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(data.begin(), data.end());
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v) { return from_data({1}, {v}); }

  static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T(1),
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (T& v : t.node_->value) v = static_cast<T>(dist(rng)) * stddev;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  std::span<T> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  T item() const {
    if (size() != 1) throw ShapeMismatch("item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  T at(std::initializer_list<int> idx) const {
    std::size_t off = 0;
    std::size_t stride = 1;
    const Shape& s = node_->shape;
    auto it = idx.end();
    for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
      --it;
      off += static_cast<std::size_t>(*it) * stride;
      stride *= static_cast<std::size_t>(s[static_cast<std::size_t>(d)]);
    }
    return node_->value[off];
  }

  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Reverse-mode backprop from a scalar. Accumulates into .grad of every
  /// reachable tensor that requires gradients.
  void backward() {
    if (size() != 1) throw ShapeMismatch("backward() needs a scalar loss");
    // iterative post-order over the parent DAG
    std::vector<TensorNode<T>*> topo;
    std::unordered_set<TensorNode<T>*> seen;
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        TensorNode<T>* p = node->parents[next].get();
        ++next;
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        topo.push_back(node);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      TensorNode<T>* n = *it;
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

namespace tensor_detail {

// Right-aligned (NumPy style) broadcast of two shapes.
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    int da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    int db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeMismatch("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides; broadcast dims (size 1 against a larger output) get 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t acc = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    std::size_t oi = out.size() - shape.size() + static_cast<std::size_t>(i);
    strides[oi] = shape[static_cast<std::size_t>(i)] == 1 ? 0 : acc;
    acc *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
  }
  return strides;
}

// Odometer loop over the output index space, yielding offsets into both inputs.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn&& fn) {
  std::size_t n = shape_numel(out);
  std::size_t nd = out.size();
  if (nd == 0) {
    fn(std::size_t(0), std::size_t(0), std::size_t(0));
    return;
  }
  std::vector<int> coord(nd, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t io = 0; io < n; ++io) {
    fn(io, ia, ib);
    for (int d = static_cast<int>(nd) - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      ++coord[du];
      ia += sa[du];
      ib += sb[du];
      if (coord[du] < out[du]) break;
      ia -= sa[du] * static_cast<std::size_t>(out[du]);
      ib -= sb[du] * static_cast<std::size_t>(out[du]);
      coord[du] = 0;
    }
  }
}

template <typename T>
using EigenMat =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstEigenMat =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
bool track(const Tensor<T>& a) {
  return grad_mode() && a.requires_grad();
}

}  // namespace tensor_detail

// ---------------------------------------------------------------------------
// elementwise ops with broadcasting

namespace tensor_detail {

enum class BinOp { Add, Sub, Mul };

// Layout classes the hot paths can exploit: equal shapes, and `b` forming a
// contiguous suffix of `a` (bias rows, causal masks). Everything else runs
// through the generic odometer.
enum class BinLayout { Equal, SuffixB, Generic };

inline BinLayout classify_layout(const Shape& a, const Shape& b) {
  if (a == b) return BinLayout::Equal;
  if (b.size() <= a.size() &&
      std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size())))
    return BinLayout::SuffixB;
  return BinLayout::Generic;
}

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinOp op) {
  Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  BinLayout layout = out_shape == a.shape() ? classify_layout(a.shape(), b.shape()) : BinLayout::Generic;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();

  auto apply = [op](T x, T y) { return op == BinOp::Add ? x + y : (op == BinOp::Sub ? x - y : x * y); };

  std::vector<std::size_t> sa, sb;
  if (layout == BinLayout::Equal) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = apply(av[i], bv[i]);
  } else if (layout == BinLayout::SuffixB) {
    std::size_t block = bv.size();
    for (std::size_t base = 0; base < ov.size(); base += block)
      for (std::size_t i = 0; i < block; ++i) ov[base + i] = apply(av[base + i], bv[i]);
  } else {
    sa = broadcast_strides(a.shape(), out_shape);
    sb = broadcast_strides(b.shape(), out_shape);
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t io, std::size_t ia, std::size_t ib) {
      ov[io] = apply(av[ia], bv[ib]);
    });
  }

  bool need_a = track(a), need_b = track(b);
  if (need_a || need_b) {
    auto an = a.node();
    auto bn = b.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {an, bn};
    node->backward_fn = [an, bn, out_shape, sa, sb, op, need_a, need_b, layout](TensorNode<T>& self) {
      if (need_a) an->ensure_grad();
      if (need_b) bn->ensure_grad();
      const auto& g = self.grad;
      auto accum = [&](std::size_t io, std::size_t ia, std::size_t ib) {
        switch (op) {
          case BinOp::Add:
            if (need_a) an->grad[ia] += g[io];
            if (need_b) bn->grad[ib] += g[io];
            break;
          case BinOp::Sub:
            if (need_a) an->grad[ia] += g[io];
            if (need_b) bn->grad[ib] -= g[io];
            break;
          case BinOp::Mul:
            if (need_a) an->grad[ia] += g[io] * bn->value[ib];
            if (need_b) bn->grad[ib] += g[io] * an->value[ia];
            break;
        }
      };
      if (layout == BinLayout::Equal) {
        for (std::size_t i = 0; i < g.size(); ++i) accum(i, i, i);
      } else if (layout == BinLayout::SuffixB) {
        std::size_t block = bn->value.size();
        for (std::size_t base = 0; base < g.size(); base += block)
          for (std::size_t i = 0; i < block; ++i) accum(base + i, base + i, i);
      } else {
        for_each_broadcast(out_shape, sa, sb, accum);
      }
    };
  }
  return out;
}

}  // namespace tensor_detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return tensor_detail::binary(a, b, tensor_detail::BinOp::Add);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return tensor_detail::binary(a, b, tensor_detail::BinOp::Sub);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return tensor_detail::binary(a, b, tensor_detail::BinOp::Mul);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * s;
  if (tensor_detail::track(a)) {
    auto an = a.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an, s](TensorNode<T>& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeMismatch("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), {a.data().begin(), a.data().end()});
  if (tensor_detail::track(a)) {
    auto an = a.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an](TensorNode<T>& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    };
  }
  return out;
}

namespace tensor_detail {

// (B, X, Y, Z) -> (B, Y, X, Z) with contiguous Z blocks; the head
// split/merge pattern attention spends most of its permute time in.
template <typename T, typename Src, typename Dst>
void swap_mid_axes_4d(Src src, Dst dst, std::size_t b, std::size_t x, std::size_t y, std::size_t z,
                      bool accumulate) {
  for (std::size_t ib = 0; ib < b; ++ib)
    for (std::size_t ix = 0; ix < x; ++ix)
      for (std::size_t iy = 0; iy < y; ++iy) {
        const T* s = src + (((ib * x) + ix) * y + iy) * z;
        T* d = dst + (((ib * y) + iy) * x + ix) * z;
        if (accumulate)
          for (std::size_t iz = 0; iz < z; ++iz) d[iz] += s[iz];
        else
          for (std::size_t iz = 0; iz < z; ++iz) d[iz] = s[iz];
      }
}

}  // namespace tensor_detail

/// Swap two axes (data is permuted, not viewed).
template <typename T>
Tensor<T> transpose(const Tensor<T>& a, int ax0, int ax1) {
  Shape out_shape = a.shape();
  std::swap(out_shape[static_cast<std::size_t>(ax0)], out_shape[static_cast<std::size_t>(ax1)]);

  const Shape& in_shape = a.shape();
  std::size_t nd = in_shape.size();
  bool fast_4d = nd == 4 && std::min(ax0, ax1) == 1 && std::max(ax0, ax1) == 2;

  std::vector<std::size_t> in_strides(nd, 1);
  for (int i = static_cast<int>(nd) - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i + 1)] * static_cast<std::size_t>(in_shape[static_cast<std::size_t>(i + 1)]);
  // stride of the output coordinate d in the input buffer
  std::vector<std::size_t> perm_strides(nd);
  for (std::size_t d = 0; d < nd; ++d) perm_strides[d] = in_strides[d];
  std::swap(perm_strides[static_cast<std::size_t>(ax0)], perm_strides[static_cast<std::size_t>(ax1)]);

  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto av = a.data();
  auto ov = out.data();
  std::vector<std::size_t> zero(nd, 0);
  if (fast_4d) {
    tensor_detail::swap_mid_axes_4d<T>(av.data(), ov.data(), static_cast<std::size_t>(in_shape[0]),
                                       static_cast<std::size_t>(in_shape[1]),
                                       static_cast<std::size_t>(in_shape[2]),
                                       static_cast<std::size_t>(in_shape[3]), false);
  } else {
    tensor_detail::for_each_broadcast(out_shape, perm_strides, zero,
                                      [&](std::size_t io, std::size_t ia, std::size_t) { ov[io] = av[ia]; });
  }
  if (tensor_detail::track(a)) {
    auto an = a.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an, out_shape, perm_strides, zero, fast_4d](TensorNode<T>& self) {
      an->ensure_grad();
      if (fast_4d) {
        // inverse of (B,X,Y,Z)->(B,Y,X,Z) is the same swap on the output grid
        tensor_detail::swap_mid_axes_4d<T>(self.grad.data(), an->grad.data(),
                                           static_cast<std::size_t>(out_shape[0]),
                                           static_cast<std::size_t>(out_shape[1]),
                                           static_cast<std::size_t>(out_shape[2]),
                                           static_cast<std::size_t>(out_shape[3]), true);
      } else {
        tensor_detail::for_each_broadcast(
            out_shape, perm_strides, zero,
            [&](std::size_t io, std::size_t ia, std::size_t) { an->grad[ia] += self.grad[io]; });
      }
    };
  }
  return out;
}

/// Concatenate along `axis`; all other dims must agree.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis) {
  if (a.ndim() != b.ndim()) throw ShapeMismatch("concat rank mismatch");
  Shape out_shape = a.shape();
  for (int d = 0; d < a.ndim(); ++d) {
    if (d == axis) continue;
    if (a.dim(d) != b.dim(d))
      throw ShapeMismatch("concat " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
  }
  out_shape[static_cast<std::size_t>(axis)] = a.dim(axis) + b.dim(axis);

  std::size_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a.dim(d));
  std::size_t inner = 1;
  for (int d = axis + 1; d < a.ndim(); ++d) inner *= static_cast<std::size_t>(a.dim(d));
  std::size_t a_block = static_cast<std::size_t>(a.dim(axis)) * inner;
  std::size_t b_block = static_cast<std::size_t>(b.dim(axis)) * inner;

  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto av = a.data();
  auto bv = b.data();
  auto ov = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(av.begin() + o * a_block, av.begin() + (o + 1) * a_block,
              ov.begin() + o * (a_block + b_block));
    std::copy(bv.begin() + o * b_block, bv.begin() + (o + 1) * b_block,
              ov.begin() + o * (a_block + b_block) + a_block);
  }
  bool need_a = tensor_detail::track(a), need_b = tensor_detail::track(b);
  if (need_a || need_b) {
    auto an = a.node();
    auto bn = b.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {an, bn};
    node->backward_fn = [an, bn, outer, a_block, b_block, need_a, need_b](TensorNode<T>& self) {
      if (need_a) an->ensure_grad();
      if (need_b) bn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* g = self.grad.data() + o * (a_block + b_block);
        if (need_a)
          for (std::size_t i = 0; i < a_block; ++i) an->grad[o * a_block + i] += g[i];
        if (need_b)
          for (std::size_t i = 0; i < b_block; ++i) bn->grad[o * b_block + i] += g[i + a_block];
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul

namespace tensor_detail {

template <typename T>
void check_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b, int& m, int& k, int& n,
                  std::size_t& batch, bool& shared_b) {
  if (a.ndim() < 2 || b.ndim() < 2) throw ShapeMismatch("matmul needs rank >= 2");
  m = a.dim(a.ndim() - 2);
  k = a.dim(a.ndim() - 1);
  int bk = transpose_b ? b.dim(b.ndim() - 1) : b.dim(b.ndim() - 2);
  n = transpose_b ? b.dim(b.ndim() - 2) : b.dim(b.ndim() - 1);
  if (bk != k)
    throw ShapeMismatch("matmul inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  batch = 1;
  for (int d = 0; d < a.ndim() - 2; ++d) batch *= static_cast<std::size_t>(a.dim(d));
  shared_b = b.ndim() == 2;
  if (!shared_b) {
    if (b.ndim() != a.ndim())
      throw ShapeMismatch("matmul batch rank " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    for (int d = 0; d < a.ndim() - 2; ++d)
      if (a.dim(d) != b.dim(d))
        throw ShapeMismatch("matmul batch dims " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
  }
}

template <typename T>
Tensor<T> matmul_impl(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  int m, k, n;
  std::size_t batch;
  bool shared_b;
  check_matmul(a, b, transpose_b, m, k, n, batch, shared_b);

  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);

  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  T* od = out.data().data();
  std::size_t a_step = static_cast<std::size_t>(m) * static_cast<std::size_t>(k);
  std::size_t b_step = shared_b ? 0 : static_cast<std::size_t>(k) * static_cast<std::size_t>(n);
  std::size_t o_step = static_cast<std::size_t>(m) * static_cast<std::size_t>(n);
  for (std::size_t i = 0; i < batch; ++i) {
    ConstEigenMat<T> A(ad + i * a_step, m, k);
    EigenMat<T> C(od + i * o_step, m, n);
    if (transpose_b) {
      ConstEigenMat<T> B(bd + i * b_step, n, k);
      C.noalias() = A * B.transpose();
    } else {
      ConstEigenMat<T> B(bd + i * b_step, k, n);
      C.noalias() = A * B;
    }
  }

  bool need_a = track(a), need_b = track(b);
  if (need_a || need_b) {
    auto an = a.node();
    auto bn = b.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {an, bn};
    node->backward_fn = [an, bn, m, k, n, batch, shared_b, transpose_b, a_step, b_step, o_step,
                         need_a, need_b](TensorNode<T>& self) {
      if (need_a) an->ensure_grad();
      if (need_b) bn->ensure_grad();
      const T* ad = an->value.data();
      const T* bd = bn->value.data();
      const T* gd = self.grad.data();
      for (std::size_t i = 0; i < batch; ++i) {
        ConstEigenMat<T> G(gd + i * o_step, m, n);
        ConstEigenMat<T> A(ad + i * a_step, m, k);
        if (transpose_b) {
          ConstEigenMat<T> B(bd + i * b_step, n, k);
          if (need_a) {
            EigenMat<T> dA(an->grad.data() + i * a_step, m, k);
            dA.noalias() += G * B;
          }
          if (need_b) {
            EigenMat<T> dB(bn->grad.data() + i * b_step, n, k);
            dB.noalias() += G.transpose() * A;
          }
        } else {
          ConstEigenMat<T> B(bd + i * b_step, k, n);
          if (need_a) {
            EigenMat<T> dA(an->grad.data() + i * a_step, m, k);
            dA.noalias() += G * B.transpose();
          }
          if (need_b) {
            EigenMat<T> dB(bn->grad.data() + i * b_step, k, n);
            dB.noalias() += A.transpose() * G;
          }
        }
      }
    };
  }
  return out;
}

}  // namespace tensor_detail

/// Batched matrix product. `a` is (..., M, K); `b` is (..., K, N) with
/// matching batch dims, or a shared 2D (K, N).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  return tensor_detail::matmul_impl(a, b, false);
}

/// a @ b^T over the last two axes.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  return tensor_detail::matmul_impl(a, b, true);
}

// ---------------------------------------------------------------------------
// nonlinearities and normalization

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] > T(0) ? av[i] : T(0);
  if (tensor_detail::track(a)) {
    auto an = a.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an](TensorNode<T>& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (an->value[i] > T(0)) an->grad[i] += self.grad[i];
    };
  }
  return out;
}

namespace tensor_detail {

template <typename T>
using EigenArr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstEigenArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

// Stable softmax of one row already holding the (scaled, masked) inputs.
// A fully masked row (max == -inf) becomes all zeros rather than NaNs.
template <typename T>
void softmax_row(T* y, std::size_t cols) {
  EigenArr<T> ya(y, static_cast<Eigen::Index>(cols));
  T mx = ya.maxCoeff();
  if (!(mx > -std::numeric_limits<T>::infinity())) {
    ya.setZero();
    return;
  }
  ya = (ya - mx).exp();
  ya *= T(1) / ya.sum();
}

template <typename T>
void softmax_backward_rows(const T* y, const T* dy, T* dx, std::size_t rows, std::size_t cols,
                           T scale_factor) {
  for (std::size_t r = 0; r < rows; ++r) {
    ConstEigenArr<T> ya(y + r * cols, static_cast<Eigen::Index>(cols));
    ConstEigenArr<T> dya(dy + r * cols, static_cast<Eigen::Index>(cols));
    EigenArr<T> dxa(dx + r * cols, static_cast<Eigen::Index>(cols));
    T dot = (ya * dya).sum();
    dxa += scale_factor * ya * (dya - dot);
  }
}

}  // namespace tensor_detail

/// Numerically stable softmax over the last axis. Fully masked (-inf) rows
/// produce zeros rather than NaNs.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  std::size_t cols = static_cast<std::size_t>(a.dim(a.ndim() - 1));
  std::size_t rows = a.size() / cols;
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto ov = out.data();
  std::copy(av.begin(), av.end(), ov.begin());
  for (std::size_t r = 0; r < rows; ++r) tensor_detail::softmax_row(ov.data() + r * cols, cols);
  if (tensor_detail::track(a)) {
    auto an = a.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an, rows, cols](TensorNode<T>& self) {
      an->ensure_grad();
      tensor_detail::softmax_backward_rows(self.value.data(), self.grad.data(), an->grad.data(),
                                           rows, cols, T(1));
    };
  }
  return out;
}

/// Fused softmax(scale * x + mask) over the last axis. The mask (when
/// defined) broadcasts against x and takes no gradient. Attention uses this
/// to avoid materializing the scaled and masked score tensors.
template <typename T>
Tensor<T> scaled_masked_softmax(const Tensor<T>& x, const Tensor<T>& mask, T scale_factor) {
  std::size_t cols = static_cast<std::size_t>(x.dim(x.ndim() - 1));
  std::size_t rows = x.size() / cols;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto xv = x.data();
  auto ov = out.data();

  // per-row offset of the broadcast mask: strides over all but the last axis
  std::vector<std::size_t> mask_row_stride;
  const T* mask_data = nullptr;
  bool mask_full_rows = false;
  if (mask.defined()) {
    if (mask.dim(mask.ndim() - 1) != static_cast<int>(cols))
      throw ShapeMismatch("mask last axis must match input");
    Shape row_shape(x.shape().begin(), x.shape().end() - 1);
    Shape mask_rows_shape(mask.shape().begin(), mask.shape().end() - 1);
    (void)tensor_detail::broadcast_shapes(row_shape, mask_rows_shape);  // validate
    mask_row_stride = tensor_detail::broadcast_strides(mask_rows_shape, row_shape);
    mask_data = mask.data().data();
    mask_full_rows = true;
  }

  // odometer over row coordinates to find each row's mask row
  Shape row_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<int> coord(row_shape.size(), 0);
  std::size_t mask_off = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xp = xv.data() + r * cols;
    T* yp = ov.data() + r * cols;
    tensor_detail::EigenArr<T> ya(yp, static_cast<Eigen::Index>(cols));
    tensor_detail::ConstEigenArr<T> xa(xp, static_cast<Eigen::Index>(cols));
    if (mask_full_rows) {
      tensor_detail::ConstEigenArr<T> ma(mask_data + mask_off * cols,
                                         static_cast<Eigen::Index>(cols));
      ya = scale_factor * xa + ma;
    } else {
      ya = scale_factor * xa;
    }
    tensor_detail::softmax_row(yp, cols);
    // advance row odometer
    for (int d = static_cast<int>(row_shape.size()) - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      ++coord[du];
      if (mask_full_rows) mask_off += mask_row_stride[du];
      if (coord[du] < row_shape[du]) break;
      if (mask_full_rows) mask_off -= mask_row_stride[du] * static_cast<std::size_t>(row_shape[du]);
      coord[du] = 0;
    }
  }
  if (tensor_detail::track(x)) {
    auto xn = x.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {xn};
    node->backward_fn = [xn, rows, cols, scale_factor](TensorNode<T>& self) {
      xn->ensure_grad();
      tensor_detail::softmax_backward_rows(self.value.data(), self.grad.data(), xn->grad.data(),
                                           rows, cols, scale_factor);
    };
  }
  return out;
}

/// Layer normalization over the last axis with affine parameters.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  std::size_t cols = static_cast<std::size_t>(x.dim(x.ndim() - 1));
  if (gamma.size() != cols || beta.size() != cols)
    throw ShapeMismatch("layer_norm affine params must match the last axis");
  std::size_t rows = x.size() / cols;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> inv_std(rows), mean(rows);
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xp = xv.data() + r * cols;
    T mu = T(0);
    for (std::size_t c = 0; c < cols; ++c) mu += xp[c];
    mu /= static_cast<T>(cols);
    T var = T(0);
    for (std::size_t c = 0; c < cols; ++c) var += (xp[c] - mu) * (xp[c] - mu);
    var /= static_cast<T>(cols);
    T is = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = is;
    T* yp = ov.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) yp[c] = gv[c] * (xp[c] - mu) * is + bv[c];
  }
  bool need_x = tensor_detail::track(x);
  bool need_g = tensor_detail::track(gamma);
  bool need_b = tensor_detail::track(beta);
  if (need_x || need_g || need_b) {
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {xn, gn, bn};
    node->backward_fn = [xn, gn, bn, rows, cols, mean, inv_std, need_x, need_g,
                         need_b](TensorNode<T>& self) {
      if (need_x) xn->ensure_grad();
      if (need_g) gn->ensure_grad();
      if (need_b) bn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* xp = xn->value.data() + r * cols;
        const T* dy = self.grad.data() + r * cols;
        T mu = mean[r], is = inv_std[r];
        if (need_g || need_b) {
          for (std::size_t c = 0; c < cols; ++c) {
            T xhat = (xp[c] - mu) * is;
            if (need_g) gn->grad[c] += dy[c] * xhat;
            if (need_b) bn->grad[c] += dy[c];
          }
        }
        if (need_x) {
          // dx = (g*dy - mean(g*dy) - xhat*mean(g*dy*xhat)) * inv_std
          T sum_gdy = T(0), sum_gdy_xhat = T(0);
          for (std::size_t c = 0; c < cols; ++c) {
            T gdy = gn->value[c] * dy[c];
            T xhat = (xp[c] - mu) * is;
            sum_gdy += gdy;
            sum_gdy_xhat += gdy * xhat;
          }
          T inv_cols = T(1) / static_cast<T>(cols);
          T* dx = xn->grad.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) {
            T gdy = gn->value[c] * dy[c];
            T xhat = (xp[c] - mu) * is;
            dx[c] += (gdy - sum_gdy * inv_cols - xhat * sum_gdy_xhat * inv_cols) * is;
          }
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// embeddings and loss

/// Gather rows of `weight` (V, D) by id; output shape = prefix_shape + {D}.
template <typename T>
Tensor<T> embedding(const Tensor<T>& weight, const std::vector<int>& ids, Shape prefix_shape) {
  if (weight.ndim() != 2) throw ShapeMismatch("embedding weight must be 2D");
  if (shape_numel(prefix_shape) != ids.size())
    throw ShapeMismatch("embedding ids do not fill the requested shape");
  int vocab = weight.dim(0);
  std::size_t dim = static_cast<std::size_t>(weight.dim(1));
  Shape out_shape = prefix_shape;
  out_shape.push_back(static_cast<int>(dim));
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto wv = weight.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= vocab) throw ShapeMismatch("embedding id out of range");
    std::copy(wv.begin() + static_cast<std::size_t>(id) * dim,
              wv.begin() + static_cast<std::size_t>(id + 1) * dim, ov.begin() + i * dim);
  }
  if (tensor_detail::track(weight)) {
    auto wn = weight.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {wn};
    node->backward_fn = [wn, ids, dim](TensorNode<T>& self) {
      wn->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        T* dst = wn->grad.data() + static_cast<std::size_t>(ids[i]) * dim;
        const T* src = self.grad.data() + i * dim;
        for (std::size_t d = 0; d < dim; ++d) dst[d] += src[d];
      }
    };
  }
  return out;
}

/// Mean of all elements.
template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  T sum = T(0);
  for (T v : a.data()) sum += v;
  T inv = T(1) / static_cast<T>(a.size());
  Tensor<T> out = Tensor<T>::scalar(sum * inv);
  if (tensor_detail::track(a)) {
    auto an = a.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an, inv](TensorNode<T>& self) {
      an->ensure_grad();
      T g = self.grad[0] * inv;
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    };
  }
  return out;
}

/// Weighted sum with a constant weight tensor; scalar output (test helper and
/// generic reduction).
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& a, const Tensor<T>& weights) {
  if (weights.size() != a.size()) throw ShapeMismatch("weighted_sum size mismatch");
  T sum = T(0);
  auto av = a.data();
  auto wv = weights.data();
  for (std::size_t i = 0; i < av.size(); ++i) sum += av[i] * wv[i];
  Tensor<T> out = Tensor<T>::scalar(sum);
  if (tensor_detail::track(a)) {
    auto an = a.node();
    auto wn = weights.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {an, wn};
    node->backward_fn = [an, wn](TensorNode<T>& self) {
      an->ensure_grad();
      T g = self.grad[0];
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g * wn->value[i];
    };
  }
  return out;
}

/// Mean negative log-likelihood over positions where mask != 0.
/// `logits` is (..., V) flattened row-wise against targets/mask.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        const std::vector<std::uint8_t>& mask) {
  std::size_t vocab = static_cast<std::size_t>(logits.dim(logits.ndim() - 1));
  std::size_t rows = logits.size() / vocab;
  if (targets.size() != rows || mask.size() != rows)
    throw ShapeMismatch("cross_entropy targets/mask must match logit rows");
  std::size_t active = 0;
  for (std::uint8_t m : mask) active += m ? 1 : 0;
  if (active == 0) throw EmptyMask("cross_entropy: all positions masked out");

  auto lv = logits.data();
  // cache softmax probabilities for the backward pass
  auto probs = std::make_shared<std::vector<T>>(logits.size());
  T nll = T(0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = lv.data() + r * vocab;
    T* p = probs->data() + r * vocab;
    T mx = x[0];
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, x[c]);
    T sum = T(0);
    for (std::size_t c = 0; c < vocab; ++c) {
      p[c] = std::exp(x[c] - mx);
      sum += p[c];
    }
    T inv = T(1) / sum;
    for (std::size_t c = 0; c < vocab; ++c) p[c] *= inv;
    if (mask[r]) {
      int t = targets[r];
      if (t < 0 || t >= static_cast<int>(vocab)) throw ShapeMismatch("cross_entropy target out of range");
      nll -= std::log(p[static_cast<std::size_t>(t)]);
    }
  }
  T inv_active = T(1) / static_cast<T>(active);
  Tensor<T> out = Tensor<T>::scalar(nll * inv_active);
  if (tensor_detail::track(logits)) {
    auto ln = logits.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {ln};
    node->backward_fn = [ln, probs, targets, mask, rows, vocab, inv_active](TensorNode<T>& self) {
      ln->ensure_grad();
      T g = self.grad[0] * inv_active;
      for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        const T* p = probs->data() + r * vocab;
        T* dx = ln->grad.data() + r * vocab;
        for (std::size_t c = 0; c < vocab; ++c) dx[c] += g * p[c];
        dx[static_cast<std::size_t>(targets[r])] -= g;
      }
    };
  }
  return out;
}

/// Inverted-dropout; identity when rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, T rate, std::mt19937_64& rng) {
  if (rate <= T(0)) return a;
  if (rate >= T(1)) throw ShapeMismatch("dropout rate must be < 1");
  auto keep = std::make_shared<std::vector<std::uint8_t>>(a.size());
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  T scale_kept = T(1) / (T(1) - rate);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) {
    bool k = dist(rng) >= static_cast<double>(rate);
    (*keep)[i] = k;
    ov[i] = k ? av[i] * scale_kept : T(0);
  }
  if (tensor_detail::track(a)) {
    auto an = a.node();
    auto node = out.node();
    node->requires_grad = true;
    node->parents = {an};
    node->backward_fn = [an, keep, scale_kept](TensorNode<T>& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if ((*keep)[i]) an->grad[i] += self.grad[i] * scale_kept;
    };
  }
  return out;
}

}  // namespace cantus
