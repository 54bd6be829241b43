#include "tabformer/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace tabformer {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const auto r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(a);
}

std::size_t prod(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= s[i];
  return n;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

// Output shape of a leading-dim broadcast, and the repetition count of each side.
struct Broadcast {
  Shape shape;
  std::size_t reps_a = 1;
  std::size_t reps_b = 1;
};

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast out;
  if (a == b) {
    out.shape = a;
  } else if (is_suffix(b, a)) {
    out.shape = a;
    out.reps_b = shape_numel(a) / shape_numel(b);
  } else if (is_suffix(a, b)) {
    out.shape = b;
    out.reps_a = shape_numel(b) / shape_numel(a);
  } else {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
  }
  return out;
}

// Sums a gradient of size reps*n into n slots.
template <typename T>
std::vector<T> reduce_reps(std::span<const T> g, std::size_t reps) {
  std::size_t n = g.size() / reps;
  std::vector<T> out(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n));
  for (std::size_t r = 1; r < reps; ++r) {
    const T* src = g.data() + r * n;
    for (std::size_t i = 0; i < n; ++i) out[i] += src[i];
  }
  return out;
}

template <typename T>
T gelu_value(T x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  T inner = k * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
  constexpr T k = T(0.7978845608028654);
  T inner = k * (x + T(0.044715) * x * x * x);
  T t = std::tanh(inner);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * k * (T(1) + T(3) * T(0.044715) * x * x);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Broadcast bc = broadcast(a.shape(), b.shape(), "add");
  std::size_t n = shape_numel(bc.shape);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(n);
  const std::size_t an = ad.size(), bn = bd.size();
  for (std::size_t base = 0; base < n; base += std::min(an, bn)) {
    std::size_t len = std::min(an, bn);
    const T* pa = ad.data() + (an == n ? base : 0);
    const T* pb = bd.data() + (bn == n ? base : 0);
    T* po = out.data() + base;
    for (std::size_t i = 0; i < len; ++i) po[i] = pa[i] + pb[i];
  }
  return Tensor<T>::make_result(bc.shape, std::move(out), {a, b}, [bc](auto& self) {
    std::span<const T> g = self.grad;
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      if (bc.reps_a == 1) accumulate_grad<T>(pa, g);
      else accumulate_grad<T>(pa, reduce_reps(g, bc.reps_a));
    }
    if (pb.requires_grad) {
      if (bc.reps_b == 1) accumulate_grad<T>(pb, g);
      else accumulate_grad<T>(pb, reduce_reps(g, bc.reps_b));
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, scale(b, T(-1)));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Broadcast bc = broadcast(a.shape(), b.shape(), "mul");
  std::size_t n = shape_numel(bc.shape);
  auto ad = a.data();
  auto bd = b.data();
  const std::size_t an = ad.size(), bn = bd.size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[an == n ? i : i % an] * bd[bn == n ? i : i % bn];
  return Tensor<T>::make_result(bc.shape, std::move(out), {a, b}, [bc, n](auto& self) {
    std::span<const T> g = self.grad;
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& ad = pa.data;
    const auto& bd = pb.data;
    const std::size_t an = ad.size(), bn = bd.size();
    if (pa.requires_grad) {
      std::vector<T> ga(n);
      for (std::size_t i = 0; i < n; ++i) ga[i] = g[i] * bd[bn == n ? i : i % bn];
      accumulate_grad<T>(pa, bc.reps_a == 1 ? ga : reduce_reps<T>(ga, bc.reps_a));
    }
    if (pb.requires_grad) {
      std::vector<T> gb(n);
      for (std::size_t i = 0; i < n; ++i) gb[i] = g[i] * ad[an == n ? i : i % an];
      accumulate_grad<T>(pb, bc.reps_b == 1 ? gb : reduce_reps<T>(gb, bc.reps_b));
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v *= factor;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [factor](auto& self) {
    std::vector<T> g(self.grad.begin(), self.grad.end());
    for (T& v : g) v *= factor;
    accumulate_grad<T>(*self.parents[0], g);
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v += value;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a},
                                [](auto& self) { accumulate_grad<T>(*self.parents[0], self.grad); });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(as) + " and " + shape_str(bs));
  }
  const std::size_t m = as[as.size() - 2], k = as.back();
  const std::size_t kb = bs[bs.size() - 2], n = bs.back();
  if (k != kb) throw ShapeError("matmul: inner dims differ in " + shape_str(as) + " x " + shape_str(bs));
  Shape lead_a(as.begin(), as.end() - 2);
  Shape lead_b(bs.begin(), bs.end() - 2);
  if (!lead_a.empty() && !lead_b.empty() && lead_a != lead_b) {
    throw ShapeError("matmul: leading dims differ in " + shape_str(as) + " x " + shape_str(bs));
  }
  const Shape& lead = lead_a.empty() ? lead_b : lead_a;
  const std::size_t batch = shape_numel(lead);
  const bool a_shared = lead_a.empty() && !lead_b.empty();
  const bool b_shared = lead_b.empty();
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(batch * m * n);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  if (b_shared) {
    // One large GEMM over the flattened leading dims of a. Eigen's remainder
    // kernels round differently from its full-block kernels, so a row's result
    // would depend on how many rows share the call. Padding the row count to a
    // multiple of 16 keeps each row bit-identical whatever the batch holds.
    const std::size_t rows = batch * m;
    const std::size_t padded = (rows + 15) / 16 * 16;
    if (padded == rows) {
      MapM<T>(out.data(), Eigen::Index(rows), Eigen::Index(n)).noalias() =
          MapC<T>(ad, Eigen::Index(rows), Eigen::Index(k)) * MapC<T>(bd, Eigen::Index(k), Eigen::Index(n));
    } else {
      RowMat<T> a_pad = RowMat<T>::Zero(Eigen::Index(padded), Eigen::Index(k));
      a_pad.topRows(Eigen::Index(rows)) = MapC<T>(ad, Eigen::Index(rows), Eigen::Index(k));
      RowMat<T> c = a_pad * MapC<T>(bd, Eigen::Index(k), Eigen::Index(n));
      MapM<T>(out.data(), Eigen::Index(rows), Eigen::Index(n)) = c.topRows(Eigen::Index(rows));
    }
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      const T* ai = ad + (a_shared ? 0 : i * m * k);
      MapM<T>(out.data() + i * m * n, Eigen::Index(m), Eigen::Index(n)).noalias() =
          MapC<T>(ai, Eigen::Index(m), Eigen::Index(k)) * MapC<T>(bd + i * k * n, Eigen::Index(k), Eigen::Index(n));
    }
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a, b},
                                [batch, m, k, n, a_shared, b_shared](auto& self) {
    const T* g = self.grad.data();
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T* ad = pa.data.data();
    const T* bd = pb.data.data();
    const auto M = Eigen::Index(m), K = Eigen::Index(k), N = Eigen::Index(n);
    if (b_shared) {
      const auto BM = Eigen::Index(batch * m);
      if (pa.requires_grad) {
        MapM<T>(pa.grad_buffer().data(), BM, K).noalias() += MapC<T>(g, BM, N) * MapC<T>(bd, K, N).transpose();
      }
      if (pb.requires_grad) {
        MapM<T>(pb.grad_buffer().data(), K, N).noalias() += MapC<T>(ad, BM, K).transpose() * MapC<T>(g, BM, N);
      }
      return;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      const T* gi = g + i * m * n;
      const std::size_t a_off = a_shared ? 0 : i * m * k;
      if (pa.requires_grad) {
        MapM<T>(pa.grad_buffer().data() + a_off, M, K).noalias() +=
            MapC<T>(gi, M, N) * MapC<T>(bd + i * k * n, K, N).transpose();
      }
      if (pb.requires_grad) {
        MapM<T>(pb.grad_buffer().data() + i * k * n, K, N).noalias() +=
            MapC<T>(ad + a_off, M, K).transpose() * MapC<T>(gi, M, N);
      }
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t r = a.rank();
  if (r < 2) throw ShapeError("transpose: rank must be >= 2");
  std::vector<std::size_t> order(r);
  for (std::size_t i = 0; i < r; ++i) order[i] = i;
  std::swap(order[r - 1], order[r - 2]);
  return permute(a, order);
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order) {
  const Shape& s = a.shape();
  const std::size_t r = s.size();
  if (order.size() != r) throw ShapeError("permute: order length does not match rank");
  std::vector<bool> seen(r, false);
  for (std::size_t o : order) {
    if (o >= r || seen[o]) throw ShapeError("permute: order is not a permutation");
    seen[o] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  // Stride in the input for each output axis.
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = s[order[i]];
    src_strides[i] = in_strides[order[i]];
  }
  const std::size_t n = a.numel();
  // map[out_flat] = in_flat
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        src += src_strides[ax];
        break;
      }
      src -= src_strides[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  auto ad = a.data();
  std::vector<T> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = ad[map[o]];
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a}, [map = std::move(map)](auto& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto ga = pa.grad_buffer();
    for (std::size_t o = 0; o < map.size(); ++o) ga[map[o]] += self.grad[o];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::make_result(std::move(shape), std::move(out), {a},
                                [](auto& self) { accumulate_grad<T>(*self.parents[0], self.grad); });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = norm_axis(axis, s0.size(), "concat");
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != s0[i]) {
        throw ShapeError("concat: shapes " + shape_str(s0) + " and " + shape_str(s) + " differ off-axis");
      }
    }
    lens.push_back(s[ax]);
    total += s[ax];
  }
  const std::size_t outer = prod(s0, 0, ax);
  const std::size_t inner = prod(s0, ax + 1, s0.size());
  Shape out_shape = s0;
  out_shape[ax] = total;
  std::vector<T> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pd = parts[p].data();
    const std::size_t block = lens[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.data() + o * block, block, out.data() + (o * total + offset) * inner);
    }
    offset += lens[p];
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), parts,
                                [lens, outer, inner, total](auto& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < lens.size(); ++p) {
      auto& pp = *self.parents[p];
      const std::size_t block = lens[p] * inner;
      if (pp.requires_grad) {
        auto gp = pp.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + (o * total + offset) * inner;
          T* dst = gp.data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += lens[p];
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  const std::size_t ax = norm_axis(axis, s.size(), "slice");
  if (begin >= end || end > s[ax]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                     shape_str(s));
  }
  const std::size_t outer = prod(s, 0, ax);
  const std::size_t inner = prod(s, ax + 1, s.size());
  const std::size_t len = end - begin;
  const std::size_t full = s[ax];
  Shape out_shape = s;
  out_shape[ax] = len;
  std::vector<T> out(outer * len * inner);
  auto ad = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(ad.data() + (o * full + begin) * inner, len * inner, out.data() + o * len * inner);
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a},
                                [outer, inner, len, full, begin](auto& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto ga = pa.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = self.grad.data() + o * len * inner;
      T* dst = ga.data() + (o * full + begin) * inner;
      for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& a, std::span<const std::size_t> rows) {
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("index_select: scalar input");
  if (rows.empty()) throw ShapeError("index_select: empty index list");
  const std::size_t inner = prod(s, 1, s.size());
  for (std::size_t r : rows) {
    if (r >= s[0]) throw std::out_of_range("index_select: row " + std::to_string(r) + " out of range");
  }
  Shape out_shape = s;
  out_shape[0] = rows.size();
  std::vector<T> out(rows.size() * inner);
  auto ad = a.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(ad.data() + rows[i] * inner, inner, out.data() + i * inner);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a}, [idx = std::move(idx), inner](auto& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto ga = pa.grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* src = self.grad.data() + i * inner;
      T* dst = ga.data() + idx[i] * inner;
      for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  const Shape& s = a.shape();
  const std::size_t ax = norm_axis(axis, s.size(), "softmax");
  const std::size_t outer = prod(s, 0, ax);
  const std::size_t len = s[ax];
  const std::size_t inner = prod(s, ax + 1, s.size());
  auto ad = a.data();
  std::vector<T> out(ad.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, ad[base + l * inner]);
      T total = 0;
      for (std::size_t l = 0; l < len; ++l) {
        T e = std::exp(ad[base + l * inner] - mx);
        out[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= total;
    }
  }
  return Tensor<T>::make_result(s, std::move(out), {a}, [outer, len, inner](auto& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto ga = pa.grad_buffer();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = 0;
        for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t i = base + l * inner;
          ga[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, const std::vector<std::uint8_t>& allowed) {
  const Shape& s = scores.shape();
  if (s.size() < 2) throw ShapeError("masked_softmax: rank must be >= 2");
  const std::size_t lq = s[s.size() - 2], lk = s.back();
  if (allowed.size() != lq * lk) {
    throw ShapeError("masked_softmax: mask has " + std::to_string(allowed.size()) + " entries, expected " +
                     std::to_string(lq * lk));
  }
  for (std::size_t q = 0; q < lq; ++q) {
    bool any = false;
    for (std::size_t k = 0; k < lk; ++k) any = any || allowed[q * lk + k];
    if (!any) throw std::invalid_argument("masked_softmax: query " + std::to_string(q) + " has every key masked");
  }
  auto sd = scores.data();
  const std::size_t rows = sd.size() / lk;
  std::vector<T> out(sd.size(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* m = allowed.data() + (r % lq) * lk;
    const T* x = sd.data() + r * lk;
    T* y = out.data() + r * lk;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < lk; ++k) {
      if (m[k]) mx = std::max(mx, x[k]);
    }
    T total = 0;
    for (std::size_t k = 0; k < lk; ++k) {
      if (m[k]) {
        y[k] = std::exp(x[k] - mx);
        total += y[k];
      }
    }
    for (std::size_t k = 0; k < lk; ++k) y[k] /= total;
  }
  return Tensor<T>::make_result(s, std::move(out), {scores}, [rows, lk](auto& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto ga = pa.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * lk;
      const T* g = self.grad.data() + r * lk;
      T dot = 0;
      for (std::size_t k = 0; k < lk; ++k) dot += g[k] * y[k];
      // Masked entries have y == 0 and receive no gradient.
      for (std::size_t k = 0; k < lk; ++k) ga[r * lk + k] += y[k] * (g[k] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = s.back();
  if (gain.numel() != d || bias.numel() != d) throw ShapeError("layer_norm: gain/bias size mismatch");
  const std::size_t rows = x.numel() / d;
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  std::vector<T> out(xd.size());
  std::vector<T> xhat(xd.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xd.data() + r * d;
    T mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= T(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      T h = (xr[i] - mu) * is;
      xhat[r * d + i] = h;
      out[r * d + i] = h * gd[i] + bd[i];
    }
  }
  return Tensor<T>::make_result(s, std::move(out), {x, gain, bias},
                                [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](auto& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const auto& g = self.grad;
    if (pg.requires_grad || pb.requires_grad) {
      std::vector<T> dg(d, T(0)), db(d, T(0));
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
          dg[i] += g[r * d + i] * xhat[r * d + i];
          db[i] += g[r * d + i];
        }
      }
      accumulate_grad<T>(pg, dg);
      accumulate_grad<T>(pb, db);
    }
    if (!px.requires_grad) return;
    auto gx = px.grad_buffer();
    const auto& gain = pg.data;
    for (std::size_t r = 0; r < rows; ++r) {
      T mean_dh = 0, mean_dh_h = 0;
      for (std::size_t i = 0; i < d; ++i) {
        T dh = g[r * d + i] * gain[i];
        mean_dh += dh;
        mean_dh_h += dh * xhat[r * d + i];
      }
      mean_dh /= T(d);
      mean_dh_h /= T(d);
      for (std::size_t i = 0; i < d; ++i) {
        T dh = g[r * d + i] * gain[i];
        gx[r * d + i] += inv_std[r] * (dh - mean_dh - xhat[r * d + i] * mean_dh_h);
      }
    }
  });
}

namespace {

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  auto ad = a.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [deriv](auto& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto ga = pa.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * deriv(pa.data[i], self.data[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  return unary(a, [](T x) { return gelu_value(x); }, [](T x, T) { return gelu_grad(x); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, T p, Rng& rng) {
  if (p < T(0) || p >= T(1)) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (p == T(0)) return a;
  const T keep_scale = T(1) / (T(1) - p);
  std::vector<T> mask(a.numel());
  for (T& m : mask) m = rng.uniform() < double(p) ? T(0) : keep_scale;
  return mul(a, Tensor<T>(a.shape(), std::move(mask)));
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids, const Shape& ids_shape) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be (vocab, dim)");
  if (shape_numel(ids_shape) != ids.size()) throw ShapeError("embedding_lookup: ids do not match ids_shape");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                              std::to_string(vocab));
    }
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  std::vector<T> out(ids.size() * d);
  auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {table}, [idv = std::move(idv), d](auto& self) {
    auto& pt = *self.parents[0];
    if (!pt.requires_grad) return;
    auto gt = pt.grad_buffer();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      T* dst = gt.data() + static_cast<std::size_t>(idv[i]) * d;
      const T* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets, std::int32_t ignore_id) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be (rows, classes)");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != rows) throw ShapeError("cross_entropy: target count does not match rows");
  std::size_t count = 0;
  for (std::int32_t t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(classes) +
                              " classes");
    }
    ++count;
  }
  auto ld = logits.data();
  std::vector<T> probs(ld.size(), T(0));
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_id) continue;
    const T* x = ld.data() + r * classes;
    T mx = *std::max_element(x, x + classes);
    T z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(x[c] - mx);
    const T lse = mx + std::log(z);
    total += lse - x[targets[r]];
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(x[c] - lse);
  }
  const T loss = count ? total / T(count) : T(0);
  std::vector<std::int32_t> tv(targets.begin(), targets.end());
  return Tensor<T>::make_result(Shape{}, {loss}, {logits},
                                [probs = std::move(probs), tv = std::move(tv), classes, count, ignore_id](auto& self) {
    auto& pl = *self.parents[0];
    if (!pl.requires_grad || count == 0) return;
    auto gl = pl.grad_buffer();
    const T g = self.grad[0] / T(count);
    for (std::size_t r = 0; r < tv.size(); ++r) {
      if (tv[r] == ignore_id) continue;
      for (std::size_t c = 0; c < classes; ++c) gl[r * classes + c] += g * probs[r * classes + c];
      gl[r * classes + static_cast<std::size_t>(tv[r])] -= g;
    }
  });
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets) {
  if (logits.numel() != targets.size()) throw ShapeError("bce_with_logits: target count mismatch");
  auto x = logits.data();
  const std::size_t n = x.size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    // max(x,0) - x*y + log(1 + exp(-|x|))
    total += std::max(x[i], T(0)) - x[i] * targets[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  std::vector<T> tv(targets.begin(), targets.end());
  return Tensor<T>::make_result(Shape{}, {total / T(n)}, {logits}, [tv = std::move(tv)](auto& self) {
    auto& pl = *self.parents[0];
    if (!pl.requires_grad) return;
    auto gl = pl.grad_buffer();
    const T g = self.grad[0] / T(tv.size());
    for (std::size_t i = 0; i < tv.size(); ++i) {
      T xi = pl.data[i];
      T p = xi >= T(0) ? T(1) / (T(1) + std::exp(-xi)) : std::exp(xi) / (T(1) + std::exp(xi));
      gl[i] += g * (p - tv[i]);
    }
  });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, std::span<const T> targets) {
  if (prediction.numel() != targets.size()) throw ShapeError("mse_loss: target count mismatch");
  auto x = prediction.data();
  T total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (x[i] - targets[i]) * (x[i] - targets[i]);
  std::vector<T> tv(targets.begin(), targets.end());
  return Tensor<T>::make_result(Shape{}, {total / T(x.size())}, {prediction}, [tv = std::move(tv)](auto& self) {
    auto& pp = *self.parents[0];
    if (!pp.requires_grad) return;
    auto gp = pp.grad_buffer();
    const T g = self.grad[0] * T(2) / T(tv.size());
    for (std::size_t i = 0; i < tv.size(); ++i) gp[i] += g * (pp.data[i] - tv[i]);
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return Tensor<T>::make_result(Shape{}, {total}, {a}, [](auto& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    for (T& g : pa.grad_buffer()) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / T(a.numel()));
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, int axis) {
  const Shape& s = a.shape();
  const std::size_t ax = norm_axis(axis, s.size(), "mean_axis");
  const std::size_t outer = prod(s, 0, ax);
  const std::size_t len = s[ax];
  const std::size_t inner = prod(s, ax + 1, s.size());
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != ax) out_shape.push_back(s[i]);
  }
  auto ad = a.data();
  std::vector<T> out(outer * inner, T(0));
  const T inv = T(1) / T(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const T* src = ad.data() + (o * len + l) * inner;
      T* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] *= inv;
  }
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {a}, [outer, len, inner, inv](auto& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto ga = pa.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      const T* g = self.grad.data() + o * inner;
      for (std::size_t l = 0; l < len; ++l) {
        T* dst = ga.data() + (o * len + l) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i] * inv;
      }
    }
  });
}

#define TABFORMER_INSTANTIATE_OPS(T)                                                                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                           \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> transpose(const Tensor<T>&);                                                          \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                           \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                               \
  template Tensor<T> index_select(const Tensor<T>&, std::span<const std::size_t>);                         \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                       \
  template Tensor<T> masked_softmax(const Tensor<T>&, const std::vector<std::uint8_t>&);                   \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                  \
  template Tensor<T> gelu(const Tensor<T>&);                                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                               \
  template Tensor<T> tanh(const Tensor<T>&);                                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                            \
  template Tensor<T> dropout(const Tensor<T>&, T, Rng&);                                                   \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const std::int32_t>, const Shape&);      \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>, std::int32_t);         \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const T>);                                \
  template Tensor<T> mse_loss(const Tensor<T>&, std::span<const T>);                                       \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> mean(const Tensor<T>&);                                                               \
  template Tensor<T> mean_axis(const Tensor<T>&, int);

TABFORMER_INSTANTIATE_OPS(float)
TABFORMER_INSTANTIATE_OPS(double)

}  // namespace tabformer
