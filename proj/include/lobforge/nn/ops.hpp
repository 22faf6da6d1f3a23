#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lobforge/core/error.hpp"
#include "lobforge/nn/tensor.hpp"

// Differentiable primitives. Every op validates shapes, computes its value,
// rejects non-finite results and registers a backward closure that
// accumulates into the gradients of inputs that require them.

namespace lobforge::nn {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw InvariantError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

inline Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

// b broadcasts over a when b's shape is a suffix of a's shape.
inline bool is_suffix(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw InvariantError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

template <typename F, typename G>
Tensor unary(const Tensor& x, const char* op, F forward, G derivative_from_output) {
  std::vector<double> out(x.size());
  const auto& in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return make_result(x.shape(), std::move(out), {x}, op, [derivative_from_output](Node& n) {
    auto& p = parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * derivative_from_output(n.value[i], p.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. The second operand may broadcast over leading axes.

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!detail::is_suffix(a.shape(), b.shape())) detail::shape_error("add", a.shape(), b.shape());
  const std::size_t nb = b.size();
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i % nb];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [nb](Node& n) {
    auto& pa = detail::parent(n, 0);
    auto& pb = detail::parent(n, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % nb] += n.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (!detail::is_suffix(a.shape(), b.shape())) detail::shape_error("sub", a.shape(), b.shape());
  const std::size_t nb = b.size();
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i % nb];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [nb](Node& n) {
    auto& pa = detail::parent(n, 0);
    auto& pb = detail::parent(n, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % nb] -= n.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (!detail::is_suffix(a.shape(), b.shape())) detail::shape_error("mul", a.shape(), b.shape());
  const std::size_t nb = b.size();
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i % nb];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [nb](Node& n) {
    auto& pa = detail::parent(n, 0);
    auto& pb = detail::parent(n, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.value[i % nb];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % nb] += n.grad[i] * pa.value[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, "sigmoid", [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double y, double) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double y, double) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double, double in) { return in > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra.

// a: [..., M, K]; b: [K, N] (shared across leading axes) or [..., K, N].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) detail::shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape().back();
  const std::size_t kb = b.shape()[b.rank() - 2];
  const std::size_t nn = b.shape().back();
  if (k != kb) detail::shape_error("matmul", a.shape(), b.shape());
  const std::size_t batch = a.size() / (m * k);
  const bool shared_b = b.rank() == 2;
  if (!shared_b && (b.rank() != a.rank() || b.size() / (k * nn) != batch ||
                    !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))) {
    detail::shape_error("matmul", a.shape(), b.shape());
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(nn);
  std::vector<double> out(batch * m * nn);
  if (shared_b) {
    detail::MapMat(out.data(), batch * m, nn).noalias() =
        detail::CMapMat(a.values().data(), batch * m, k) * detail::CMapMat(b.values().data(), k, nn);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      detail::MapMat(out.data() + i * m * nn, m, nn).noalias() =
          detail::CMapMat(a.values().data() + i * m * k, m, k) * detail::CMapMat(b.values().data() + i * k * nn, k, nn);
    }
  }
  return make_result(std::move(out_shape), std::move(out), {a, b}, "matmul", [=](Node& n) {
    auto& pa = detail::parent(n, 0);
    auto& pb = detail::parent(n, 1);
    if (shared_b) {
      detail::CMapMat dc(n.grad.data(), batch * m, nn);
      if (pa.requires_grad) {
        detail::MapMat(pa.ensure_grad().data(), batch * m, k).noalias() +=
            dc * detail::CMapMat(pb.value.data(), k, nn).transpose();
      }
      if (pb.requires_grad) {
        detail::MapMat(pb.ensure_grad().data(), k, nn).noalias() +=
            detail::CMapMat(pa.value.data(), batch * m, k).transpose() * dc;
      }
      return;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      detail::CMapMat dc(n.grad.data() + i * m * nn, m, nn);
      if (pa.requires_grad) {
        detail::MapMat(pa.ensure_grad().data() + i * m * k, m, k).noalias() +=
            dc * detail::CMapMat(pb.value.data() + i * k * nn, k, nn).transpose();
      }
      if (pb.requires_grad) {
        detail::MapMat(pb.ensure_grad().data() + i * k * nn, k, nn).noalias() +=
            detail::CMapMat(pa.value.data() + i * m * k, m, k).transpose() * dc;
      }
    }
  });
}

// Swaps the last two axes.
inline Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw InvariantError("transpose needs rank >= 2");
  const std::size_t r = x.shape()[x.rank() - 2];
  const std::size_t c = x.shape().back();
  const std::size_t batch = x.size() / (r * c);
  Shape s = x.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = x.values()[b * r * c + i * c + j];
  return make_result(std::move(s), std::move(out), {x}, "transpose", [=](Node& n) {
    auto& p = detail::parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[b * r * c + i * c + j] += n.grad[b * r * c + j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation.

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) detail::shape_error("reshape", x.shape(), shape);
  return make_result(std::move(shape), x.values(), {x}, "reshape", [](Node& n) {
    auto& p = detail::parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

inline Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) throw InvariantError("concat of zero tensors");
  Shape s = xs[0].shape();
  if (axis >= s.size()) throw InvariantError("concat: axis out of range");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.rank() != s.size()) detail::shape_error("concat", s, x.shape());
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && x.shape()[d] != s[d]) detail::shape_error("concat", s, x.shape());
    }
    widths.push_back(x.shape()[axis]);
    total += x.shape()[axis];
  }
  s[axis] = total;
  const auto split = detail::split_axis(s, axis);
  std::vector<double> out(numel(s));
  std::size_t offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const std::size_t w = widths[t];
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(xs[t].values().data() + o * w * split.inner, w * split.inner,
                  out.data() + (o * total + offset) * split.inner);
    }
    offset += w;
  }
  return make_result(std::move(s), std::move(out), xs, "concat", [=](Node& n) {
    std::size_t off = 0;
    for (std::size_t t = 0; t < widths.size(); ++t) {
      auto& p = detail::parent(n, t);
      const std::size_t w = widths[t];
      if (p.requires_grad) {
        auto& g = p.ensure_grad();
        for (std::size_t o = 0; o < split.outer; ++o) {
          const double* src = n.grad.data() + (o * total + off) * split.inner;
          double* dst = g.data() + o * w * split.inner;
          for (std::size_t i = 0; i < w * split.inner; ++i) dst[i] += src[i];
        }
      }
      off += w;
    }
  });
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto split = detail::split_axis(x.shape(), axis);
  if (start + length > split.n || length == 0) {
    throw InvariantError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
                         to_string(x.shape()));
  }
  Shape s = x.shape();
  s[axis] = length;
  std::vector<double> out(numel(s));
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(x.values().data() + (o * split.n + start) * split.inner, length * split.inner,
                out.data() + o * length * split.inner);
  }
  return make_result(std::move(s), std::move(out), {x}, "slice", [=](Node& n) {
    auto& p = detail::parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t o = 0; o < split.outer; ++o) {
      const double* src = n.grad.data() + o * length * split.inner;
      double* dst = g.data() + (o * split.n + start) * split.inner;
      for (std::size_t i = 0; i < length * split.inner; ++i) dst[i] += src[i];
    }
  });
}

// Selects index `i` along `axis` and drops that axis.
inline Tensor select(const Tensor& x, std::size_t axis, std::size_t i) {
  Shape s = x.shape();
  auto out = slice(x, axis, i, 1);
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  if (s.empty()) s = {1};
  return reshape(out, std::move(s));
}

// ---------------------------------------------------------------------------
// Reductions.

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({1}, {total}, {x}, "sum", [](Node& n) {
    auto& p = detail::parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (auto& v : g) v += n.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// Mean over one axis; the axis is removed.
inline Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const auto split = detail::split_axis(x.shape(), axis);
  Shape s = x.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  if (s.empty()) s = {1};
  std::vector<double> out(split.outer * split.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(split.n);
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t j = 0; j < split.n; ++j)
      for (std::size_t i = 0; i < split.inner; ++i)
        out[o * split.inner + i] += x.values()[(o * split.n + j) * split.inner + i] * inv;
  return make_result(std::move(s), std::move(out), {x}, "mean_axis", [=](Node& n) {
    auto& p = detail::parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t j = 0; j < split.n; ++j)
        for (std::size_t i = 0; i < split.inner; ++i)
          g[(o * split.n + j) * split.inner + i] += n.grad[o * split.inner + i] * inv;
  });
}

// ---------------------------------------------------------------------------
// Softmax over the last axis. An optional keep-mask of shape [rows, cols]
// (the trailing two axes) zeroes masked entries; rows with no kept entry are
// an error.

using Mask = std::vector<std::uint8_t>;

inline Mask causal_mask(std::size_t n) {
  Mask m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 1;
  return m;
}

inline Tensor softmax(const Tensor& x, const Mask& mask = {}) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  const std::size_t mask_rows = mask.empty() ? 0 : mask.size() / cols;
  if (!mask.empty() && (mask.size() % cols != 0 || x.rank() < 2 || mask_rows != x.shape()[x.rank() - 2])) {
    throw InvariantError("softmax: mask shape does not match trailing axes of " + to_string(x.shape()));
  }
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.values().data() + r * cols;
    double* o = out.data() + r * cols;
    const std::uint8_t* keep = mask.empty() ? nullptr : mask.data() + (r % mask_rows) * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (!keep || keep[c]) mx = std::max(mx, in[c]);
    if (mx == -std::numeric_limits<double>::infinity()) throw InvariantError("softmax: fully masked row");
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (keep && !keep[c]) continue;
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return make_result(x.shape(), std::move(out), {x}, "softmax", [=](Node& n) {
    auto& p = detail::parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = n.value.data() + r * cols;
      const double* dy = n.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += y[c] * dy[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and sequence ops.

// Normalizes over the last axis, then applies per-feature gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) detail::shape_error("layer_norm", x.shape(), gain.shape());
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.values().data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += in[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (in[i] - mu) * inv_std[r];
      out[r * d + i] = xhat[r * d + i] * gain.values()[i] + bias.values()[i];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
                     [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                       auto& px = detail::parent(n, 0);
                       auto& pg = detail::parent(n, 1);
                       auto& pb = detail::parent(n, 2);
                       const double dd = static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* dy = n.grad.data() + r * d;
                         const double* xh = xhat.data() + r * d;
                         if (pg.requires_grad) {
                           auto& g = pg.ensure_grad();
                           for (std::size_t i = 0; i < d; ++i) g[i] += dy[i] * xh[i];
                         }
                         if (pb.requires_grad) {
                           auto& g = pb.ensure_grad();
                           for (std::size_t i = 0; i < d; ++i) g[i] += dy[i];
                         }
                         if (px.requires_grad) {
                           double s1 = 0.0, s2 = 0.0;
                           for (std::size_t i = 0; i < d; ++i) {
                             const double dxh = dy[i] * pg.value[i];
                             s1 += dxh;
                             s2 += dxh * xh[i];
                           }
                           auto& g = px.ensure_grad();
                           for (std::size_t i = 0; i < d; ++i) {
                             const double dxh = dy[i] * pg.value[i];
                             g[r * d + i] += inv_std[r] * (dxh - s1 / dd - xh[i] * s2 / dd);
                           }
                         }
                       }
                     });
}

// Centered moving average along `axis` with replicate padding of
// (window-1)/2 on both ends; output has the input's shape.
inline Tensor moving_average(const Tensor& x, std::size_t window, std::size_t axis) {
  if (window == 0 || window % 2 == 0) {
    throw ConfigError("moving average window must be odd and positive, got " + std::to_string(window));
  }
  const auto split = detail::split_axis(x.shape(), axis);
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto len = static_cast<std::ptrdiff_t>(split.n);
  const double inv = 1.0 / static_cast<double>(window);
  auto clamp = [len](std::ptrdiff_t j) { return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, len - 1)); };
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::ptrdiff_t t = 0; t < len; ++t)
      for (std::size_t i = 0; i < split.inner; ++i) {
        // deviations from the centre value, so a flat window averages to
        // exactly that value and the remainder of a constant is exactly 0
        const std::size_t at = (o * split.n + static_cast<std::size_t>(t)) * split.inner + i;
        const double centre = x.values()[at];
        double acc = 0.0;
        for (std::ptrdiff_t j = t - half; j <= t + half; ++j)
          acc += x.values()[(o * split.n + clamp(j)) * split.inner + i] - centre;
        out[at] = centre + acc * inv;
      }
  return make_result(x.shape(), std::move(out), {x}, "moving_average", [=](Node& n) {
    auto& p = detail::parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::ptrdiff_t t = 0; t < len; ++t)
        for (std::size_t i = 0; i < split.inner; ++i) {
          const double dy = n.grad[(o * split.n + static_cast<std::size_t>(t)) * split.inner + i] * inv;
          for (std::ptrdiff_t j = t - half; j <= t + half; ++j) g[(o * split.n + clamp(j)) * split.inner + i] += dy;
        }
  });
}

// Gathers rows of `table` [V, D]; output shape is `index_shape` + [D].
inline Tensor embedding(const Tensor& table, const std::vector<std::size_t>& indices, Shape index_shape) {
  if (table.rank() != 2) throw InvariantError("embedding table must be rank 2");
  if (numel(index_shape) != indices.size()) throw InvariantError("embedding: index shape mismatch");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(indices.size() * d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= v) throw InvariantError("embedding index out of range");
    std::copy_n(table.values().data() + indices[i] * d, d, out.data() + i * d);
  }
  index_shape.push_back(d);
  return make_result(std::move(index_shape), std::move(out), {table}, "embedding", [=](Node& n) {
    auto& p = detail::parent(n, 0);
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[indices[i] * d + j] += n.grad[i * d + j];
  });
}

// ---------------------------------------------------------------------------
// Losses.

inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.size() != target.size() || pred.size() == 0) detail::shape_error("mse_loss", pred.shape(), target.shape());
  const double inv = 1.0 / static_cast<double>(pred.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred.values()[i] - target.values()[i];
    total += e * e;
  }
  return make_result({1}, {total * inv}, {pred, target}, "mse_loss", [inv](Node& n) {
    auto& pp = detail::parent(n, 0);
    auto& pt = detail::parent(n, 1);
    for (std::size_t i = 0; i < pp.value.size(); ++i) {
      const double d = 2.0 * inv * n.grad[0] * (pp.value[i] - pt.value[i]);
      if (pp.requires_grad) pp.ensure_grad()[i] += d;
      if (pt.requires_grad) pt.ensure_grad()[i] -= d;
    }
  });
}

// Mean negative log-likelihood of integer labels under softmax(logits);
// logits are [B, C]. Fused with log-softmax for stability.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw InvariantError("cross_entropy: logits must be [B, C] with B labels, got " + to_string(logits.shape()));
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
      throw DataError("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    }
    const double* z = logits.values().data() + r * c;
    const double mx = *std::max_element(z, z + c);
    double se = 0.0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(z[j] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(z[j] - lse);
    total += lse - z[labels[r]];
  }
  const double inv = 1.0 / static_cast<double>(b);
  return make_result({1}, {total * inv}, {logits}, "cross_entropy",
                     [=, probs = std::move(probs)](Node& n) {
                       auto& p = detail::parent(n, 0);
                       if (!p.requires_grad) return;
                       auto& g = p.ensure_grad();
                       for (std::size_t r = 0; r < b; ++r)
                         for (std::size_t j = 0; j < c; ++j) {
                           const double onehot = static_cast<int>(j) == labels[r] ? 1.0 : 0.0;
                           g[r * c + j] += n.grad[0] * inv * (probs[r * c + j] - onehot);
                         }
                     });
}

}  // namespace lobforge::nn
