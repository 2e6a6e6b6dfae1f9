#include "core/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mohets {
namespace {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<EMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const EMat<T>>;

template <typename T>
bool grad_needed(std::initializer_list<const TensorT<T>*> inputs) {
  if (!active_tape<T>()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
void record(std::function<void()> fn) {
  active_tape<T>()->record(std::move(fn));
}

// Right-aligned broadcast of b into a: every trailing extent of b must equal
// a's or be 1.  Calls f(a_linear_index, b_linear_index) for each element.
void check_broadcast(const Shape& as, const Shape& bs, const char* op) {
  require(bs.size() <= as.size(), ErrorCode::internal,
          std::string(op) + ": rank of second operand exceeds first (" + shape_str(bs) +
              " vs " + shape_str(as) + ")");
  int off = static_cast<int>(as.size() - bs.size());
  for (size_t i = 0; i < bs.size(); ++i)
    require(bs[i] == 1 || bs[i] == as[i + off], ErrorCode::internal,
            std::string(op) + ": cannot broadcast " + shape_str(bs) + " into " + shape_str(as));
}

template <typename F>
void for_each_bpair(const Shape& as, const Shape& bs, F&& f) {
  int r = static_cast<int>(as.size());
  int rb = static_cast<int>(bs.size());
  int64_t n = numel(as);
  if (as == bs) {  // fast path
    for (int64_t i = 0; i < n; ++i) f(i, i);
    return;
  }
  std::vector<int64_t> bstride(r, 0);
  {
    int64_t s = 1;
    for (int ib = rb - 1; ib >= 0; --ib) {
      int ia = ib + (r - rb);
      bstride[ia] = (bs[ib] == 1) ? 0 : s;
      s *= bs[ib];
    }
  }
  std::vector<int64_t> counter(r, 0);
  int64_t boff = 0;
  for (int64_t i = 0; i < n; ++i) {
    f(i, boff);
    for (int axis = r - 1; axis >= 0; --axis) {
      ++counter[axis];
      boff += bstride[axis];
      if (counter[axis] < as[axis]) break;
      counter[axis] = 0;
      boff -= bstride[axis] * as[axis];
    }
  }
}

template <typename T, typename Fwd, typename DA, typename DB>
TensorT<T> binary_op(const TensorT<T>& a, const TensorT<T>& b, const char* name, Fwd fwd,
                     DA da_term, DB db_term) {
  check_broadcast(a.shape(), b.shape(), name);
  TensorT<T> out(a.shape(), grad_needed<T>({&a, &b}));
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  for_each_bpair(a.shape(), b.shape(), [&](int64_t i, int64_t j) { op[i] = fwd(ap[i], bp[j]); });
  if (out.requires_grad()) {
    record<T>([a = a, b = b, out = out, da_term = da_term, db_term = db_term]() mutable {
      const T* g = out.grad();
      const T* ap = a.data();
      const T* bp = b.data();
      T* ga = a.requires_grad() ? a.grad() : nullptr;
      T* gb = b.requires_grad() ? b.grad() : nullptr;
      for_each_bpair(a.shape(), b.shape(), [&](int64_t i, int64_t j) {
        if (ga) ga[i] += da_term(g[i], ap[i], bp[j]);
        if (gb) gb[j] += db_term(g[i], ap[i], bp[j]);
      });
    });
  }
  return out;
}

template <typename T, typename Fwd, typename Bwd>
TensorT<T> unary_op(const TensorT<T>& x, Fwd fwd, Bwd grad_term) {
  TensorT<T> out(x.shape(), grad_needed<T>({&x}));
  const T* xp = x.data();
  T* op = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) op[i] = fwd(xp[i]);
  if (out.requires_grad()) {
    record<T>([x = x, out = out, grad_term = grad_term]() mutable {
      const T* g = out.grad();
      const T* xp = x.data();
      const T* yp = out.data();
      T* gx = x.grad();
      int64_t n = x.size();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * grad_term(xp[i], yp[i]);
    });
  }
  return out;
}

// Collapse [.., axis, ..] into (outer, extent, inner) for run-wise copying.
struct AxisSplit {
  int64_t outer, extent, inner;
};
AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      a, b, "div", [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
      [](T g, T x, T y) { return -g * x / (y * y); });
}

template <typename T>
TensorT<T> neg(const TensorT<T>& x) {
  return unary_op<T>(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, T c) {
  return unary_op<T>(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& x, T c) {
  return unary_op<T>(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
TensorT<T> exp(const TensorT<T>& x) {
  return unary_op<T>(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
TensorT<T> log(const TensorT<T>& x) {
  return unary_op<T>(x, [](T v) { return std::log(v); }, [](T xv, T) { return T(1) / xv; });
}

template <typename T>
TensorT<T> sqrt(const TensorT<T>& x) {
  return unary_op<T>(x, [](T v) { return std::sqrt(v); },
                     [](T, T y) { return T(0.5) / y; });
}

template <typename T>
TensorT<T> sin(const TensorT<T>& x) {
  return unary_op<T>(x, [](T v) { return std::sin(v); }, [](T xv, T) { return std::cos(xv); });
}

template <typename T>
TensorT<T> cos(const TensorT<T>& x) {
  return unary_op<T>(x, [](T v) { return std::cos(v); }, [](T xv, T) { return -std::sin(xv); });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  auto fwd = [](T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    T e = std::exp(v);
    return e / (T(1) + e);
  };
  return unary_op<T>(x, fwd, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  auto fwd = [=](T v) {
    double cdf = 0.5 * std::erfc(-static_cast<double>(v) * inv_sqrt2);
    return static_cast<T>(static_cast<double>(v) * cdf);
  };
  auto grad = [=](T v, T) {
    double d = static_cast<double>(v);
    double cdf = 0.5 * std::erfc(-d * inv_sqrt2);
    double pdf = inv_sqrt2pi * std::exp(-0.5 * d * d);
    return static_cast<T>(cdf + d * pdf);
  };
  return unary_op<T>(x, fwd, grad);
}

// ---- matrix products ---------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorCode::internal,
          "matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, ErrorCode::internal,
          "matmul: inner extents differ: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  TensorT<T> out({m, n}, grad_needed<T>({&a, &b}));
  CMapM<T> am(a.data(), m, k), bm(b.data(), k, n);
  MapM<T>(out.data(), m, n).noalias() = am * bm;
  if (out.requires_grad()) {
    record<T>([a = a, b = b, out = out, m = m, k = k, n = n]() mutable {
      CMapM<T> g(out.grad(), m, n);
      if (a.requires_grad()) {
        CMapM<T> bm(b.data(), k, n);
        MapM<T> ga(a.grad(), m, k);
        ga.noalias() += g * bm.transpose();
      }
      if (b.requires_grad()) {
        CMapM<T> am(a.data(), m, k);
        MapM<T> gb(b.grad(), k, n);
        gb.noalias() += am.transpose() * g;
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b) {
  require(a.rank() == 3 && b.rank() == 3, ErrorCode::internal,
          "bmm: expects rank-3 operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  require(b.dim(0) == bs && b.dim(1) == k, ErrorCode::internal,
          "bmm: incompatible shapes " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  TensorT<T> out({bs, m, n}, grad_needed<T>({&a, &b}));
  for (int64_t i = 0; i < bs; ++i) {
    CMapM<T> am(a.data() + i * m * k, m, k), bm(b.data() + i * k * n, k, n);
    MapM<T>(out.data() + i * m * n, m, n).noalias() = am * bm;
  }
  if (out.requires_grad()) {
    record<T>([a = a, b = b, out = out, bs = bs, m = m, k = k, n = n]() mutable {
      for (int64_t i = 0; i < bs; ++i) {
        CMapM<T> g(out.grad() + i * m * n, m, n);
        if (a.requires_grad()) {
          CMapM<T> bm(b.data() + i * k * n, k, n);
          MapM<T> ga(a.grad() + i * m * k, m, k);
          ga.noalias() += g * bm.transpose();
        }
        if (b.requires_grad()) {
          CMapM<T> am(a.data() + i * m * k, m, k);
          MapM<T> gb(b.grad() + i * k * n, k, n);
          gb.noalias() += am.transpose() * g;
        }
      }
    });
  }
  return out;
}

// ---- layout ------------------------------------------------------------------

template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& axes) {
  int r = x.rank();
  require(static_cast<int>(axes.size()) == r, ErrorCode::internal,
          "permute: axes count mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int a : axes) {
    require(a >= 0 && a < r && !seen[static_cast<size_t>(a)], ErrorCode::internal,
            "permute: invalid axes");
    seen[static_cast<size_t>(a)] = true;
  }
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i) + 1] * x.dim(i + 1);
  std::vector<int64_t> step(static_cast<size_t>(r));  // input stride per output axis
  for (int i = 0; i < r; ++i)
    step[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(axes[static_cast<size_t>(i)])];

  TensorT<T> out(os, grad_needed<T>({&x}));
  const T* xp = x.data();
  T* op = out.data();
  int64_t n = x.size();
  std::vector<int64_t> counter(static_cast<size_t>(r), 0);
  int64_t ioff = 0;
  for (int64_t o = 0; o < n; ++o) {
    op[o] = xp[ioff];
    for (int axis = r - 1; axis >= 0; --axis) {
      ++counter[static_cast<size_t>(axis)];
      ioff += step[static_cast<size_t>(axis)];
      if (counter[static_cast<size_t>(axis)] < os[static_cast<size_t>(axis)]) break;
      counter[static_cast<size_t>(axis)] = 0;
      ioff -= step[static_cast<size_t>(axis)] * os[static_cast<size_t>(axis)];
    }
  }
  if (out.requires_grad()) {
    record<T>([x = x, out = out, os = os, step = step, r = r]() mutable {
      const T* g = out.grad();
      T* gx = x.grad();
      int64_t n = x.size();
      std::vector<int64_t> counter(static_cast<size_t>(r), 0);
      int64_t ioff = 0;
      for (int64_t o = 0; o < n; ++o) {
        gx[ioff] += g[o];
        for (int axis = r - 1; axis >= 0; --axis) {
          ++counter[static_cast<size_t>(axis)];
          ioff += step[static_cast<size_t>(axis)];
          if (counter[static_cast<size_t>(axis)] < os[static_cast<size_t>(axis)]) break;
          counter[static_cast<size_t>(axis)] = 0;
          ioff -= step[static_cast<size_t>(axis)] * os[static_cast<size_t>(axis)];
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> slice(const TensorT<T>& x, int axis, int64_t start, int64_t length) {
  require(axis >= 0 && axis < x.rank(), ErrorCode::internal, "slice: bad axis");
  int64_t extent = x.dim(axis);
  require(start >= 0 && length >= 0 && start + length <= extent, ErrorCode::internal,
          "slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
              ") out of bounds for extent " + std::to_string(extent));
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] = length;
  AxisSplit sp = split_axis(x.shape(), axis);
  TensorT<T> out(os, grad_needed<T>({&x}));
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    std::copy_n(xp + (o * extent + start) * sp.inner, length * sp.inner,
                op + o * length * sp.inner);
  if (out.requires_grad()) {
    record<T>([x = x, out = out, sp = sp, extent = extent, start = start, length = length]() mutable {
      const T* g = out.grad();
      T* gx = x.grad();
      for (int64_t o = 0; o < sp.outer; ++o) {
        T* dst = gx + (o * extent + start) * sp.inner;
        const T* src = g + o * length * sp.inner;
        for (int64_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
  require(!parts.empty(), ErrorCode::internal, "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  require(axis >= 0 && axis < parts[0].rank(), ErrorCode::internal, "concat: bad axis");
  int64_t total = 0;
  bool needs = false;
  for (const auto& p : parts) {
    require(p.rank() == parts[0].rank(), ErrorCode::internal, "concat: rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      require(i == axis || p.dim(i) == s0[static_cast<size_t>(i)], ErrorCode::internal,
              "concat: shape mismatch at axis " + std::to_string(i));
    total += p.dim(axis);
    if (active_tape<T>() && p.requires_grad()) needs = true;
  }
  Shape os = s0;
  os[static_cast<size_t>(axis)] = total;
  TensorT<T> out(os, needs);
  AxisSplit sp = split_axis(os, axis);
  T* op = out.data();
  int64_t at = 0;
  for (const auto& p : parts) {
    int64_t len = p.dim(axis);
    const T* xp = p.data();
    for (int64_t o = 0; o < sp.outer; ++o)
      std::copy_n(xp + o * len * sp.inner, len * sp.inner, op + (o * total + at) * sp.inner);
    at += len;
  }
  if (needs) {
    record<T>([parts = parts, out = out, sp = sp, total = total]() mutable {
      const T* g = out.grad();
      int64_t at = 0;
      for (auto& p : parts) {
        int64_t len = p.size() / (sp.outer * sp.inner);
        if (p.requires_grad()) {
          T* gx = p.grad();
          for (int64_t o = 0; o < sp.outer; ++o) {
            const T* src = g + (o * total + at) * sp.inner;
            T* dst = gx + o * len * sp.inner;
            for (int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
          }
        }
        at += len;
      }
    });
  }
  return out;
}

// ---- softmax -----------------------------------------------------------------

template <typename T>
TensorT<T> softmax_lastdim(const TensorT<T>& x) {
  int64_t d = x.dim(-1);
  require(d >= 1, ErrorCode::internal, "softmax_lastdim: empty last axis");
  int64_t rows = x.size() / d;
  const T* xp = x.data();
  for (int64_t i = 0; i < x.size(); ++i)
    require(std::isfinite(static_cast<double>(xp[i])), ErrorCode::numeric,
            "softmax_lastdim: non-finite input at flat index " + std::to_string(i));
  TensorT<T> out(x.shape(), grad_needed<T>({&x}));
  T* op = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xp + r * d;
    T* orow = op + r * d;
    T mx = row[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int64_t j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    T inv = T(1) / sum;
    for (int64_t j = 0; j < d; ++j) orow[j] *= inv;
  }
  if (out.requires_grad()) {
    record<T>([x = x, out = out, rows = rows, d = d]() mutable {
      const T* g = out.grad();
      const T* y = out.data();
      T* gx = x.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* grow = g + r * d;
        const T* yrow = y + r * d;
        T* gxrow = gx + r * d;
        T dot = T(0);
        for (int64_t j = 0; j < d; ++j) dot += grow[j] * yrow[j];
        for (int64_t j = 0; j < d; ++j) gxrow[j] += (grow[j] - dot) * yrow[j];
      }
    });
  }
  return out;
}

// ---- normalizations ----------------------------------------------------------

template <typename T>
TensorT<T> rms_norm(const TensorT<T>& x, const TensorT<T>& scale, T eps) {
  int64_t d = x.dim(-1);
  require(scale.size() == d, ErrorCode::internal,
          "rms_norm: scale shape " + shape_str(scale.shape()) + " does not match last axis " +
              std::to_string(d));
  int64_t rows = x.size() / d;
  TensorT<T> out(x.shape(), grad_needed<T>({&x, &scale}));
  auto inv = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const T* xp = x.data();
  const T* sp = scale.data();
  T* op = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xp + r * d;
    T ms = T(0);
    for (int64_t j = 0; j < d; ++j) ms += row[j] * row[j];
    ms /= static_cast<T>(d);
    T iv = T(1) / std::sqrt(ms + eps);
    (*inv)[static_cast<size_t>(r)] = iv;
    T* orow = op + r * d;
    for (int64_t j = 0; j < d; ++j) orow[j] = row[j] * iv * sp[j];
  }
  if (out.requires_grad()) {
    record<T>([x = x, scale = scale, out = out, inv = inv, rows = rows, d = d]() mutable {
      const T* g = out.grad();
      const T* xp = x.data();
      const T* sp = scale.data();
      T* gx = x.requires_grad() ? x.grad() : nullptr;
      T* gs = scale.requires_grad() ? scale.grad() : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const T* grow = g + r * d;
        const T* row = xp + r * d;
        T iv = (*inv)[static_cast<size_t>(r)];
        if (gs)
          for (int64_t j = 0; j < d; ++j) gs[j] += grow[j] * row[j] * iv;
        if (gx) {
          T dot = T(0);
          for (int64_t j = 0; j < d; ++j) dot += grow[j] * sp[j] * row[j];
          T c = iv * iv * iv * dot / static_cast<T>(d);
          T* gxrow = gx + r * d;
          for (int64_t j = 0; j < d; ++j) gxrow[j] += grow[j] * sp[j] * iv - row[j] * c;
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& scale, T eps) {
  int64_t d = x.dim(-1);
  require(scale.size() == d, ErrorCode::internal,
          "layer_norm: scale shape " + shape_str(scale.shape()) + " does not match last axis " +
              std::to_string(d));
  int64_t rows = x.size() / d;
  TensorT<T> out(x.shape(), grad_needed<T>({&x, &scale}));
  auto inv = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  auto xhat = std::make_shared<std::vector<T>>(x.to_vector());  // reused as x̂ storage
  const T* xp = x.data();
  const T* sp = scale.data();
  T* op = out.data();
  T* hp = xhat->data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xp + r * d;
    T mean = T(0);
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int64_t j = 0; j < d; ++j) {
      T c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    T iv = T(1) / std::sqrt(var + eps);
    (*inv)[static_cast<size_t>(r)] = iv;
    T* hrow = hp + r * d;
    T* orow = op + r * d;
    for (int64_t j = 0; j < d; ++j) {
      hrow[j] = (row[j] - mean) * iv;
      orow[j] = hrow[j] * sp[j];
    }
  }
  if (out.requires_grad()) {
    record<T>([x = x, scale = scale, out = out, inv = inv, xhat = xhat, rows = rows, d = d]() mutable {
      const T* g = out.grad();
      const T* sp = scale.data();
      const T* hp = xhat->data();
      T* gx = x.requires_grad() ? x.grad() : nullptr;
      T* gs = scale.requires_grad() ? scale.grad() : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const T* grow = g + r * d;
        const T* hrow = hp + r * d;
        T iv = (*inv)[static_cast<size_t>(r)];
        if (gs)
          for (int64_t j = 0; j < d; ++j) gs[j] += grow[j] * hrow[j];
        if (gx) {
          T sum_a = T(0), sum_ah = T(0);
          for (int64_t j = 0; j < d; ++j) {
            T a = grow[j] * sp[j];
            sum_a += a;
            sum_ah += a * hrow[j];
          }
          T inv_d = T(1) / static_cast<T>(d);
          T* gxrow = gx + r * d;
          for (int64_t j = 0; j < d; ++j) {
            T a = grow[j] * sp[j];
            gxrow[j] += iv * (a - sum_a * inv_d - hrow[j] * sum_ah * inv_d);
          }
        }
      }
    });
  }
  return out;
}

namespace {

// Shared machinery for group/channel norms on [B, C, L]: normalizes each
// group of `gsize` strided values; scale indexed by channel.
// mode 0: group_norm1 (per sample, over C*L, mean-subtracted)
// mode 1: layer_norm_channels (per (b,l), over C, mean-subtracted)
// mode 2: rms_norm_channels (per (b,l), over C, no mean)
template <typename T>
TensorT<T> channel_norm(const TensorT<T>& x, const TensorT<T>& scale, T eps, int mode,
                        const char* name) {
  require(x.rank() == 3, ErrorCode::internal,
          std::string(name) + ": expects [B,C,L], got " + shape_str(x.shape()));
  int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  require(scale.size() == C, ErrorCode::internal,
          std::string(name) + ": scale must have one entry per channel");
  TensorT<T> out(x.shape(), grad_needed<T>({&x, &scale}));
  int64_t ngroups = (mode == 0) ? B : B * L;
  auto inv = std::make_shared<std::vector<T>>(static_cast<size_t>(ngroups));
  auto mu = std::make_shared<std::vector<T>>(static_cast<size_t>(ngroups), T(0));
  const T* xp = x.data();
  const T* sp = scale.data();
  T* op = out.data();

  auto group_elems = [&](int64_t gi, auto&& fn) {
    if (mode == 0) {
      int64_t base = gi * C * L;
      for (int64_t c = 0; c < C; ++c)
        for (int64_t l = 0; l < L; ++l) fn(base + c * L + l, c);
    } else {
      int64_t b = gi / L, l = gi % L;
      int64_t base = b * C * L + l;
      for (int64_t c = 0; c < C; ++c) fn(base + c * L, c);
    }
  };
  int64_t gsize = (mode == 0) ? C * L : C;
  for (int64_t gi = 0; gi < ngroups; ++gi) {
    T mean = T(0);
    if (mode != 2) {
      group_elems(gi, [&](int64_t off, int64_t) { mean += xp[off]; });
      mean /= static_cast<T>(gsize);
    }
    T var = T(0);
    group_elems(gi, [&](int64_t off, int64_t) {
      T c = xp[off] - mean;
      var += c * c;
    });
    var /= static_cast<T>(gsize);
    T iv = T(1) / std::sqrt(var + eps);
    (*inv)[static_cast<size_t>(gi)] = iv;
    (*mu)[static_cast<size_t>(gi)] = mean;
    group_elems(gi, [&](int64_t off, int64_t c) { op[off] = (xp[off] - mean) * iv * sp[c]; });
  }
  if (out.requires_grad()) {
    record<T>([x = x, scale = scale, out = out, inv = inv, mu = mu, mode = mode, B = B, C = C, L = L, gsize = gsize]() mutable {
      const T* g = out.grad();
      const T* xp = x.data();
      const T* sp = scale.data();
      T* gx = x.requires_grad() ? x.grad() : nullptr;
      T* gs = scale.requires_grad() ? scale.grad() : nullptr;
      int64_t ngroups = (mode == 0) ? B : B * L;
      auto group_elems = [&](int64_t gi, auto&& fn) {
        if (mode == 0) {
          int64_t base = gi * C * L;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t l = 0; l < L; ++l) fn(base + c * L + l, c);
        } else {
          int64_t b = gi / L, l = gi % L;
          int64_t base = b * C * L + l;
          for (int64_t c = 0; c < C; ++c) fn(base + c * L, c);
        }
      };
      for (int64_t gi = 0; gi < ngroups; ++gi) {
        T iv = (*inv)[static_cast<size_t>(gi)];
        T mean = (*mu)[static_cast<size_t>(gi)];
        T sum_a = T(0), sum_ah = T(0);
        group_elems(gi, [&](int64_t off, int64_t c) {
          T h = (xp[off] - mean) * iv;
          T a = g[off] * sp[c];
          sum_a += a;
          sum_ah += a * h;
          if (gs) gs[c] += g[off] * h;
        });
        if (gx) {
          T inv_n = T(1) / static_cast<T>(gsize);
          bool subtract_mean = (mode != 2);
          group_elems(gi, [&](int64_t off, int64_t c) {
            T h = (xp[off] - mean) * iv;
            T a = g[off] * sp[c];
            T term = a - h * sum_ah * inv_n;
            if (subtract_mean) term -= sum_a * inv_n;
            gx[off] += iv * term;
          });
        }
      }
    });
  }
  return out;
}

}  // namespace

template <typename T>
TensorT<T> group_norm1(const TensorT<T>& x, const TensorT<T>& scale, T eps) {
  return channel_norm(x, scale, eps, 0, "group_norm1");
}

template <typename T>
TensorT<T> layer_norm_channels(const TensorT<T>& x, const TensorT<T>& scale, T eps) {
  return channel_norm(x, scale, eps, 1, "layer_norm_channels");
}

template <typename T>
TensorT<T> rms_norm_channels(const TensorT<T>& x, const TensorT<T>& scale, T eps) {
  return channel_norm(x, scale, eps, 2, "rms_norm_channels");
}

// ---- reductions --------------------------------------------------------------

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
  TensorT<T> out({1}, grad_needed<T>({&x}));
  const T* xp = x.data();
  T acc = T(0);
  for (int64_t i = 0; i < x.size(); ++i) acc += xp[i];
  out.data()[0] = acc;
  if (out.requires_grad()) {
    record<T>([x = x, out = out]() mutable {
      T g = out.grad()[0];
      T* gx = x.grad();
      for (int64_t i = 0; i < x.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
  require(x.size() > 0, ErrorCode::internal, "mean_all: empty tensor");
  TensorT<T> s = sum_all(x);
  return mul_scalar(s, T(1) / static_cast<T>(x.size()));
}

template <typename T>
TensorT<T> mean_lastdim(const TensorT<T>& x) {
  int64_t d = x.dim(-1);
  int64_t rows = x.size() / d;
  Shape os(x.shape().begin(), x.shape().end() - 1);
  if (os.empty()) os = {1};
  TensorT<T> out(os, grad_needed<T>({&x}));
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    T acc = T(0);
    for (int64_t j = 0; j < d; ++j) acc += xp[r * d + j];
    op[r] = acc / static_cast<T>(d);
  }
  if (out.requires_grad()) {
    record<T>([x = x, out = out, rows = rows, d = d]() mutable {
      const T* g = out.grad();
      T* gx = x.grad();
      T inv = T(1) / static_cast<T>(d);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) gx[r * d + j] += g[r] * inv;
    });
  }
  return out;
}

template <typename T>
TensorT<T> var_lastdim(const TensorT<T>& x) {
  int64_t d = x.dim(-1);
  int64_t rows = x.size() / d;
  Shape os(x.shape().begin(), x.shape().end() - 1);
  if (os.empty()) os = {1};
  TensorT<T> out(os, grad_needed<T>({&x}));
  auto means = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    T mean = T(0);
    for (int64_t j = 0; j < d; ++j) mean += xp[r * d + j];
    mean /= static_cast<T>(d);
    (*means)[static_cast<size_t>(r)] = mean;
    T var = T(0);
    for (int64_t j = 0; j < d; ++j) {
      T c = xp[r * d + j] - mean;
      var += c * c;
    }
    op[r] = var / static_cast<T>(d);
  }
  if (out.requires_grad()) {
    record<T>([x = x, out = out, means = means, rows = rows, d = d]() mutable {
      const T* g = out.grad();
      const T* xp = x.data();
      T* gx = x.grad();
      T inv = T(2) / static_cast<T>(d);
      for (int64_t r = 0; r < rows; ++r) {
        T mean = (*means)[static_cast<size_t>(r)];
        for (int64_t j = 0; j < d; ++j) gx[r * d + j] += g[r] * inv * (xp[r * d + j] - mean);
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> mean_axis0(const TensorT<T>& x) {
  require(x.rank() == 2, ErrorCode::internal,
          "mean_axis0: expects [M,N], got " + shape_str(x.shape()));
  int64_t m = x.dim(0), n = x.dim(1);
  TensorT<T> out({n}, grad_needed<T>({&x}));
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t j = 0; j < n; ++j) op[j] = T(0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) op[j] += xp[i * n + j];
  T inv = T(1) / static_cast<T>(m);
  for (int64_t j = 0; j < n; ++j) op[j] *= inv;
  if (out.requires_grad()) {
    record<T>([x = x, out = out, m = m, n = n, inv = inv]() mutable {
      const T* g = out.grad();
      T* gx = x.grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) gx[i * n + j] += g[j] * inv;
    });
  }
  return out;
}

// ---- stochastic regularizers ---------------------------------------------------

template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  require(p < 1.0, ErrorCode::usage, "dropout: rate must be < 1");
  int64_t n = x.size();
  auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
  T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (int64_t i = 0; i < n; ++i)
    (*mask)[static_cast<size_t>(i)] = (rng.uniform() >= p) ? keep_scale : T(0);
  TensorT<T> out(x.shape(), grad_needed<T>({&x}));
  const T* xp = x.data();
  const T* mp = mask->data();
  T* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = xp[i] * mp[i];
  if (out.requires_grad()) {
    record<T>([x = x, out = out, mask = mask]() mutable {
      const T* g = out.grad();
      const T* mp = mask->data();
      T* gx = x.grad();
      for (int64_t i = 0; i < x.size(); ++i) gx[i] += g[i] * mp[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> drop_path(const TensorT<T>& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  require(p < 1.0, ErrorCode::usage, "drop_path: rate must be < 1");
  int64_t rows = x.dim(0);
  int64_t cols = x.size() / rows;
  auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (int64_t r = 0; r < rows; ++r)
    (*mask)[static_cast<size_t>(r)] = (rng.uniform() >= p) ? keep_scale : T(0);
  TensorT<T> out(x.shape(), grad_needed<T>({&x}));
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    T m = (*mask)[static_cast<size_t>(r)];
    for (int64_t j = 0; j < cols; ++j) op[r * cols + j] = xp[r * cols + j] * m;
  }
  if (out.requires_grad()) {
    record<T>([x = x, out = out, mask = mask, rows = rows, cols = cols]() mutable {
      const T* g = out.grad();
      T* gx = x.grad();
      for (int64_t r = 0; r < rows; ++r) {
        T m = (*mask)[static_cast<size_t>(r)];
        for (int64_t j = 0; j < cols; ++j) gx[r * cols + j] += g[r * cols + j] * m;
      }
    });
  }
  return out;
}

// ---- convolutions ---------------------------------------------------------------

template <typename T>
TensorT<T> depthwise_conv1d(const TensorT<T>& x, const TensorT<T>& kernel) {
  require(x.rank() == 3, ErrorCode::internal,
          "depthwise_conv1d: expects [B,C,L], got " + shape_str(x.shape()));
  require(kernel.rank() == 2 && kernel.dim(0) == x.dim(1), ErrorCode::internal,
          "depthwise_conv1d: kernel must be [C,KW]");
  int64_t kw = kernel.dim(1);
  require(kw % 2 == 1, ErrorCode::usage,
          "depthwise_conv1d: kernel width must be odd, got " + std::to_string(kw));
  int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  int64_t pad = (kw - 1) / 2;
  TensorT<T> out(x.shape(), grad_needed<T>({&x, &kernel}));
  const T* xp = x.data();
  const T* kp = kernel.data();
  T* op = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T* xr = xp + (b * C + c) * L;
      const T* kr = kp + c * kw;
      T* orow = op + (b * C + c) * L;
      for (int64_t t = 0; t < L; ++t) {
        T acc = T(0);
        for (int64_t w = 0; w < kw; ++w) {
          int64_t src = t + w - pad;
          if (src >= 0 && src < L) acc += kr[w] * xr[src];
        }
        orow[t] = acc;
      }
    }
  if (out.requires_grad()) {
    record<T>([x = x, kernel = kernel, out = out, B = B, C = C, L = L, kw = kw, pad = pad]() mutable {
      const T* g = out.grad();
      const T* xp = x.data();
      const T* kp = kernel.data();
      T* gx = x.requires_grad() ? x.grad() : nullptr;
      T* gk = kernel.requires_grad() ? kernel.grad() : nullptr;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
          const T* grow = g + (b * C + c) * L;
          const T* xr = xp + (b * C + c) * L;
          const T* kr = kp + c * kw;
          for (int64_t t = 0; t < L; ++t) {
            for (int64_t w = 0; w < kw; ++w) {
              int64_t src = t + w - pad;
              if (src < 0 || src >= L) continue;
              if (gx) gx[(b * C + c) * L + src] += kr[w] * grow[t];
              if (gk) gk[c * kw + w] += xr[src] * grow[t];
            }
          }
        }
    });
  }
  return out;
}

template <typename T>
TensorT<T> pointwise_conv1d(const TensorT<T>& x, const TensorT<T>& kernel) {
  require(x.rank() == 3, ErrorCode::internal,
          "pointwise_conv1d: expects [B,Cin,L], got " + shape_str(x.shape()));
  require(kernel.rank() == 2 && kernel.dim(0) == x.dim(1), ErrorCode::internal,
          "pointwise_conv1d: kernel must be [Cin,Cout]");
  int64_t B = x.dim(0), ci = x.dim(1), L = x.dim(2), co = kernel.dim(1);
  TensorT<T> out({B, co, L}, grad_needed<T>({&x, &kernel}));
  CMapM<T> km(kernel.data(), ci, co);
  for (int64_t b = 0; b < B; ++b) {
    CMapM<T> xb(x.data() + b * ci * L, ci, L);
    MapM<T>(out.data() + b * co * L, co, L).noalias() = km.transpose() * xb;
  }
  if (out.requires_grad()) {
    record<T>([x = x, kernel = kernel, out = out, B = B, ci = ci, co = co, L = L]() mutable {
      CMapM<T> km(kernel.data(), ci, co);
      for (int64_t b = 0; b < B; ++b) {
        CMapM<T> g(out.grad() + b * co * L, co, L);
        if (x.requires_grad()) {
          MapM<T> gx(x.grad() + b * ci * L, ci, L);
          gx.noalias() += km * g;
        }
        if (kernel.requires_grad()) {
          CMapM<T> xb(x.data() + b * ci * L, ci, L);
          MapM<T> gk(kernel.grad(), ci, co);
          gk.noalias() += xb * g.transpose();
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> transpose_conv1d(const TensorT<T>& x, const TensorT<T>& kernel) {
  require(x.rank() == 3, ErrorCode::internal,
          "transpose_conv1d: expects [B,Cin,S], got " + shape_str(x.shape()));
  require(kernel.rank() == 3 && kernel.dim(0) == x.dim(1), ErrorCode::internal,
          "transpose_conv1d: kernel must be [Cin,Cout,P] with Cin matching input");
  int64_t B = x.dim(0), ci = x.dim(1), S = x.dim(2);
  int64_t co = kernel.dim(1), P = kernel.dim(2);
  TensorT<T> out({B, co, S * P}, grad_needed<T>({&x, &kernel}));
  const T* xp = x.data();
  const T* kp = kernel.data();
  T* op = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t s = 0; s < S; ++s)
        for (int64_t p = 0; p < P; ++p) {
          T acc = T(0);
          for (int64_t c = 0; c < ci; ++c)
            acc += xp[(b * ci + c) * S + s] * kp[(c * co + o) * P + p];
          op[(b * co + o) * S * P + s * P + p] = acc;
        }
  if (out.requires_grad()) {
    record<T>([x = x, kernel = kernel, out = out, B = B, ci = ci, co = co, S = S, P = P]() mutable {
      const T* g = out.grad();
      const T* xp = x.data();
      const T* kp = kernel.data();
      T* gx = x.requires_grad() ? x.grad() : nullptr;
      T* gk = kernel.requires_grad() ? kernel.grad() : nullptr;
      for (int64_t b = 0; b < B; ++b)
        for (int64_t o = 0; o < co; ++o)
          for (int64_t s = 0; s < S; ++s)
            for (int64_t p = 0; p < P; ++p) {
              T go = g[(b * co + o) * S * P + s * P + p];
              for (int64_t c = 0; c < ci; ++c) {
                if (gx) gx[(b * ci + c) * S + s] += go * kp[(c * co + o) * P + p];
                if (gk) gk[(c * co + o) * P + p] += go * xp[(b * ci + c) * S + s];
              }
            }
    });
  }
  return out;
}

// ---- rotary position transform ---------------------------------------------------

template <typename T>
TensorT<T> rope(const TensorT<T>& x, int64_t pos0, double base) {
  require(x.rank() == 4, ErrorCode::internal,
          "rope: expects [B,H,S,Dh], got " + shape_str(x.shape()));
  int64_t dh = x.dim(3);
  require(dh % 2 == 0, ErrorCode::usage, "rope: head dimension must be even, got " +
                                             std::to_string(dh));
  int64_t B = x.dim(0), H = x.dim(1), S = x.dim(2), half = dh / 2;
  auto cos_t = std::make_shared<std::vector<T>>(static_cast<size_t>(S * half));
  auto sin_t = std::make_shared<std::vector<T>>(static_cast<size_t>(S * half));
  for (int64_t s = 0; s < S; ++s)
    for (int64_t j = 0; j < half; ++j) {
      double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dh));
      double angle = static_cast<double>(pos0 + s) * freq;
      (*cos_t)[static_cast<size_t>(s * half + j)] = static_cast<T>(std::cos(angle));
      (*sin_t)[static_cast<size_t>(s * half + j)] = static_cast<T>(std::sin(angle));
    }
  TensorT<T> out(x.shape(), grad_needed<T>({&x}));
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t bh = 0; bh < B * H; ++bh)
    for (int64_t s = 0; s < S; ++s) {
      const T* xr = xp + (bh * S + s) * dh;
      T* orow = op + (bh * S + s) * dh;
      const T* cr = cos_t->data() + s * half;
      const T* sr = sin_t->data() + s * half;
      for (int64_t j = 0; j < half; ++j) {
        T a = xr[2 * j], b = xr[2 * j + 1];
        orow[2 * j] = a * cr[j] - b * sr[j];
        orow[2 * j + 1] = a * sr[j] + b * cr[j];
      }
    }
  if (out.requires_grad()) {
    record<T>([x = x, out = out, cos_t = cos_t, sin_t = sin_t, B = B, H = H, S = S, dh = dh, half = half]() mutable {
      const T* g = out.grad();
      T* gx = x.grad();
      for (int64_t bh = 0; bh < B * H; ++bh)
        for (int64_t s = 0; s < S; ++s) {
          const T* grow = g + (bh * S + s) * dh;
          T* gxrow = gx + (bh * S + s) * dh;
          const T* cr = cos_t->data() + s * half;
          const T* sr = sin_t->data() + s * half;
          for (int64_t j = 0; j < half; ++j) {
            T d0 = grow[2 * j], d1 = grow[2 * j + 1];
            gxrow[2 * j] += d0 * cr[j] + d1 * sr[j];
            gxrow[2 * j + 1] += -d0 * sr[j] + d1 * cr[j];
          }
        }
    });
  }
  return out;
}

// ---- top-k / dispatch -------------------------------------------------------------

template <typename T>
TopKResult<T> top_k(const TensorT<T>& scores, int64_t k) {
  require(scores.rank() == 2, ErrorCode::internal,
          "top_k: expects [M,N], got " + shape_str(scores.shape()));
  int64_t m = scores.dim(0), n = scores.dim(1);
  require(k >= 1 && k <= n, ErrorCode::usage,
          "top_k: k=" + std::to_string(k) + " out of range for " + std::to_string(n) +
              " entries");
  TopKResult<T> res;
  res.gates = TensorT<T>(scores.shape(), grad_needed<T>({&scores}));
  res.indices.resize(static_cast<size_t>(m * k));
  const T* sp = scores.data();
  T* gp = res.gates.data();
  std::vector<int32_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < m; ++i) {
    const T* row = sp + i * n;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [row](int32_t a, int32_t b) {
                        if (row[a] != row[b]) return row[a] > row[b];
                        return a < b;  // ties -> lowest expert index
                      });
    for (int64_t j = 0; j < k; ++j) {
      int32_t e = order[static_cast<size_t>(j)];
      res.indices[static_cast<size_t>(i * k + j)] = e;
      gp[i * n + e] = row[e];
    }
  }
  if (res.gates.requires_grad()) {
    auto idx = std::make_shared<std::vector<int32_t>>(res.indices);
    TensorT<T> gates = res.gates;
    record<T>([scores = scores, gates = gates, idx = idx, m = m, n = n, k = k]() mutable {
      const T* g = gates.grad();
      T* gs = scores.grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < k; ++j) {
          int64_t e = (*idx)[static_cast<size_t>(i * k + j)];
          gs[i * n + e] += g[i * n + e];
        }
    });
  }
  return res;
}

template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int64_t>& idx) {
  require(x.rank() == 2, ErrorCode::internal,
          "gather_rows: expects [M,D], got " + shape_str(x.shape()));
  int64_t m = x.dim(0), d = x.dim(1), n = static_cast<int64_t>(idx.size());
  for (int64_t j : idx)
    require(j >= 0 && j < m, ErrorCode::internal, "gather_rows: index out of range");
  TensorT<T> out({n, d}, grad_needed<T>({&x}));
  const T* xp = x.data();
  T* op = out.data();
  for (int64_t j = 0; j < n; ++j) std::copy_n(xp + idx[static_cast<size_t>(j)] * d, d, op + j * d);
  if (out.requires_grad()) {
    auto ids = std::make_shared<std::vector<int64_t>>(idx);
    record<T>([x = x, out = out, ids = ids, n = n, d = d]() mutable {
      const T* g = out.grad();
      T* gx = x.grad();
      for (int64_t j = 0; j < n; ++j) {
        T* dst = gx + (*ids)[static_cast<size_t>(j)] * d;
        const T* src = g + j * d;
        for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> index_add_rows(const TensorT<T>& base, const std::vector<int64_t>& idx,
                          const TensorT<T>& rows) {
  require(base.rank() == 2 && rows.rank() == 2 && base.dim(1) == rows.dim(1),
          ErrorCode::internal, "index_add_rows: shape mismatch " + shape_str(base.shape()) +
                                   " vs " + shape_str(rows.shape()));
  int64_t m = base.dim(0), d = base.dim(1), n = rows.dim(0);
  require(static_cast<int64_t>(idx.size()) == n, ErrorCode::internal,
          "index_add_rows: index count mismatch");
  for (int64_t j : idx)
    require(j >= 0 && j < m, ErrorCode::internal, "index_add_rows: index out of range");
  TensorT<T> out(base.shape(), grad_needed<T>({&base, &rows}));
  std::copy_n(base.data(), base.size(), out.data());
  const T* rp = rows.data();
  T* op = out.data();
  for (int64_t j = 0; j < n; ++j) {
    T* dst = op + idx[static_cast<size_t>(j)] * d;
    const T* src = rp + j * d;
    for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
  }
  if (out.requires_grad()) {
    auto ids = std::make_shared<std::vector<int64_t>>(idx);
    record<T>([base = base, rows = rows, out = out, ids = ids, n = n, d = d]() mutable {
      const T* g = out.grad();
      if (base.requires_grad()) {
        T* gb = base.grad();
        for (int64_t i = 0; i < base.size(); ++i) gb[i] += g[i];
      }
      if (rows.requires_grad()) {
        T* gr = rows.grad();
        for (int64_t j = 0; j < n; ++j) {
          const T* src = g + (*ids)[static_cast<size_t>(j)] * d;
          T* dst = gr + j * d;
          for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
        }
      }
    });
  }
  return out;
}

// ---- losses ---------------------------------------------------------------------

template <typename T>
TensorT<T> huber_loss(const TensorT<T>& pred, const TensorT<T>& target, T delta) {
  require(pred.shape() == target.shape(), ErrorCode::internal,
          "huber_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
              shape_str(target.shape()));
  require(delta > T(0), ErrorCode::usage, "huber_loss: delta must be positive");
  int64_t n = pred.size();
  TensorT<T> out({1}, grad_needed<T>({&pred}));
  const T* pp = pred.data();
  const T* tp = target.data();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) {
    T e = tp[i] - pp[i];
    T ae = std::abs(e);
    acc += (ae <= delta) ? T(0.5) * e * e : delta * (ae - T(0.5) * delta);
  }
  out.data()[0] = acc / static_cast<T>(n);
  if (out.requires_grad()) {
    record<T>([pred = pred, target = target, out = out, delta = delta, n = n]() mutable {
      T g = out.grad()[0] / static_cast<T>(n);
      const T* pp = pred.data();
      const T* tp = target.data();
      T* gp = pred.grad();
      for (int64_t i = 0; i < n; ++i) {
        T e = tp[i] - pp[i];
        T clipped = std::clamp(e, -delta, delta);
        gp[i] += -g * clipped;
      }
    });
  }
  return out;
}

// ---- initialization fills ----------------------------------------------------------

template <typename T>
void fill_xavier_uniform(TensorT<T>& t, int64_t fan_in, int64_t fan_out, Rng& rng) {
  require(fan_in > 0 && fan_out > 0, ErrorCode::internal, "fill_xavier_uniform: bad fans");
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  T* p = t.data();
  for (int64_t i = 0; i < t.size(); ++i) p[i] = static_cast<T>(rng.uniform(-a, a));
}

template <typename T>
void fill_normal(TensorT<T>& t, Rng& rng, double stddev) {
  T* p = t.data();
  for (int64_t i = 0; i < t.size(); ++i) p[i] = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
void fill_constant(TensorT<T>& t, T value) {
  T* p = t.data();
  for (int64_t i = 0; i < t.size(); ++i) p[i] = value;
}

// ---- explicit instantiations ---------------------------------------------------------

#define MOHETS_INSTANTIATE_OPS(T)                                                              \
  template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                               \
  template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                               \
  template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);                               \
  template TensorT<T> div(const TensorT<T>&, const TensorT<T>&);                               \
  template TensorT<T> neg(const TensorT<T>&);                                                  \
  template TensorT<T> add_scalar(const TensorT<T>&, T);                                        \
  template TensorT<T> mul_scalar(const TensorT<T>&, T);                                        \
  template TensorT<T> exp(const TensorT<T>&);                                                  \
  template TensorT<T> log(const TensorT<T>&);                                                  \
  template TensorT<T> sqrt(const TensorT<T>&);                                                 \
  template TensorT<T> sin(const TensorT<T>&);                                                  \
  template TensorT<T> cos(const TensorT<T>&);                                                  \
  template TensorT<T> sigmoid(const TensorT<T>&);                                              \
  template TensorT<T> gelu(const TensorT<T>&);                                                 \
  template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);                            \
  template TensorT<T> bmm(const TensorT<T>&, const TensorT<T>&);                               \
  template TensorT<T> permute(const TensorT<T>&, const std::vector<int>&);                     \
  template TensorT<T> slice(const TensorT<T>&, int, int64_t, int64_t);                         \
  template TensorT<T> concat(const std::vector<TensorT<T>>&, int);                             \
  template TensorT<T> softmax_lastdim(const TensorT<T>&);                                      \
  template TensorT<T> rms_norm(const TensorT<T>&, const TensorT<T>&, T);                       \
  template TensorT<T> layer_norm(const TensorT<T>&, const TensorT<T>&, T);                     \
  template TensorT<T> group_norm1(const TensorT<T>&, const TensorT<T>&, T);                    \
  template TensorT<T> layer_norm_channels(const TensorT<T>&, const TensorT<T>&, T);            \
  template TensorT<T> rms_norm_channels(const TensorT<T>&, const TensorT<T>&, T);              \
  template TensorT<T> mean_all(const TensorT<T>&);                                             \
  template TensorT<T> sum_all(const TensorT<T>&);                                              \
  template TensorT<T> mean_lastdim(const TensorT<T>&);                                         \
  template TensorT<T> var_lastdim(const TensorT<T>&);                                          \
  template TensorT<T> mean_axis0(const TensorT<T>&);                                           \
  template TensorT<T> dropout(const TensorT<T>&, double, Rng&, bool);                          \
  template TensorT<T> drop_path(const TensorT<T>&, double, Rng&, bool);                        \
  template TensorT<T> depthwise_conv1d(const TensorT<T>&, const TensorT<T>&);                  \
  template TensorT<T> pointwise_conv1d(const TensorT<T>&, const TensorT<T>&);                  \
  template TensorT<T> transpose_conv1d(const TensorT<T>&, const TensorT<T>&);                  \
  template TensorT<T> rope(const TensorT<T>&, int64_t, double);                                \
  template TopKResult<T> top_k(const TensorT<T>&, int64_t);                                    \
  template TensorT<T> gather_rows(const TensorT<T>&, const std::vector<int64_t>&);             \
  template TensorT<T> index_add_rows(const TensorT<T>&, const std::vector<int64_t>&,           \
                                     const TensorT<T>&);                                       \
  template TensorT<T> huber_loss(const TensorT<T>&, const TensorT<T>&, T);                     \
  template void fill_xavier_uniform(TensorT<T>&, int64_t, int64_t, Rng&);                      \
  template void fill_normal(TensorT<T>&, Rng&, double);                                        \
  template void fill_constant(TensorT<T>&, T);

MOHETS_INSTANTIATE_OPS(float)
MOHETS_INSTANTIATE_OPS(double)

#undef MOHETS_INSTANTIATE_OPS

}  // namespace mohets
