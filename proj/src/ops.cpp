#include "dragsaw/ops.hpp"

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dragsaw/errors.hpp"

namespace dragsaw {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

/// Gradient buffer of input `i`, or an empty span when it takes no gradient.
std::span<double> grad_of(const InputList& inputs, std::size_t i) {
  auto& impl = *inputs[i];
  if (!impl.requires_grad) return {};
  return impl.grad_buffer();
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

/// Walks every element of `out_shape`, passing the flat offsets into the
/// output and into two operands addressed with the given strides (0 on
/// broadcast axes).
template <typename F>
void for_each_strided(const Shape& out_shape, const std::vector<std::size_t>& sa,
                      const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t rank = out_shape.size();
  const std::size_t total = shape_numel(out_shape);
  if (total == 0) return;
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  const std::size_t inner = out_shape[rank - 1];
  const std::size_t ia_step = sa[rank - 1];
  const std::size_t ib_step = sb[rank - 1];
  std::size_t io = 0;
  while (io < total) {
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t d = 0; d + 1 < rank; ++d) {
      ia += idx[d] * sa[d];
      ib += idx[d] * sb[d];
    }
    for (std::size_t j = 0; j < inner; ++j) f(io + j, ia + j * ia_step, ib + j * ib_step);
    io += inner;
    for (std::size_t d = rank - 1; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ConfigError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  BroadcastPlan plan;
  plan.out.resize(a.size());
  auto ca = contiguous_strides(a);
  auto cb = contiguous_strides(b);
  plan.stride_a.resize(a.size());
  plan.stride_b.resize(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (a[d] != b[d] && a[d] != 1 && b[d] != 1) {
      throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    plan.out[d] = std::max(a[d], b[d]);
    plan.stride_a[d] = a[d] == 1 ? 0 : ca[d];
    plan.stride_b[d] = b[d] == 1 ? 0 : cb[d];
  }
  return plan;
}

/// Elementwise binary op with broadcasting. `fwd(a,b)` gives the value,
/// `da(a,b)` and `db(a,b)` its partial derivatives.
template <typename Fwd, typename Da, typename Db>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Da da, Db db) {
  auto plan = broadcast_plan(a.shape(), b.shape(), name);
  Buffer out(shape_numel(plan.out));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_strided(plan.out, plan.stride_a, plan.stride_b,
                   [&](std::size_t io, std::size_t ia, std::size_t ib) { out[io] = fwd(av[ia], bv[ib]); });
  return detail::make_result(
      plan.out, std::move(out), name, {a, b}, [plan, fwd, da, db](const TensorImpl& o, const InputList& in) {
        const auto& g = o.grad;
        const auto& av = in[0]->data;
        const auto& bv = in[1]->data;
        auto ga = grad_of(in, 0);
        auto gb = grad_of(in, 1);
        for_each_strided(plan.out, plan.stride_a, plan.stride_b, [&](std::size_t io, std::size_t ia, std::size_t ib) {
          if (!ga.empty()) ga[ia] += g[io] * da(av[ia], bv[ib]);
          if (!gb.empty()) gb[ib] += g[io] * db(av[ia], bv[ib]);
        });
      });
}

/// Elementwise unary op; `deriv(x, y)` receives the input and output value.
template <typename Fwd, typename Deriv>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto xv = x.data();
  Buffer out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return detail::make_result(x.shape(), std::move(out), name, {x}, [deriv](const TensorImpl& o, const InputList& in) {
    auto gx = grad_of(in, 0);
    if (gx.empty()) return;
    const auto& xv = in[0]->data;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * deriv(xv[i], o.data[i]);
  });
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
  }
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
struct AxisSplit {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ConfigError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& x) {
  return unary_op(
      x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor div_scalar(const Tensor& x, double divisor) {
  return unary_op(
      x, "div_scalar", [divisor](double v) { return v / divisor; }, [divisor](double, double) { return 1.0 / divisor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary_op(
      x, "add_scalar", [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor xlogx(const Tensor& x) {
  return unary_op(
      x, "xlogx", [](double v) { return v == 0.0 ? 0.0 : v * std::log(v); },
      [](double v, double) { return v == 0.0 ? 0.0 : std::log(v) + 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ConfigError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Buffer out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), "reshape", {x},
                             [](const TensorImpl& o, const InputList& in) {
                               auto gx = grad_of(in, 0);
                               for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
                             });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  double total = 0.0;
  for (double v : xv) total += v;
  return detail::make_result(Shape{}, Buffer{total}, "sum", {x}, [](const TensorImpl& o, const InputList& in) {
    auto gx = grad_of(in, 0);
    for (double& g : gx) g += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ConfigError("mean of an empty tensor");
  return div_scalar(sum(x), static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, std::vector<std::size_t> axes, bool keepdim) {
  const Shape& in_shape = x.shape();
  Shape kept = in_shape;
  std::vector<bool> reduced(in_shape.size(), false);
  for (std::size_t a : axes) {
    if (a >= in_shape.size()) {
      throw ConfigError("sum: axis " + std::to_string(a) + " out of range for " + shape_str(in_shape));
    }
    reduced[a] = true;
    kept[a] = 1;
  }
  auto kept_strides = contiguous_strides(kept);
  std::vector<std::size_t> out_stride(in_shape.size());
  for (std::size_t d = 0; d < in_shape.size(); ++d) out_stride[d] = reduced[d] ? 0 : kept_strides[d];
  auto in_stride = contiguous_strides(in_shape);

  Buffer out(shape_numel(kept), 0.0);
  const auto xv = x.data();
  for_each_strided(in_shape, in_stride, out_stride,
                   [&](std::size_t, std::size_t ix, std::size_t io) { out[io] += xv[ix]; });

  Shape out_shape;
  if (keepdim) {
    out_shape = kept;
  } else {
    for (std::size_t d = 0; d < in_shape.size(); ++d)
      if (!reduced[d]) out_shape.push_back(in_shape[d]);
  }
  return detail::make_result(
      std::move(out_shape), std::move(out), "sum_axes", {x},
      [in_shape, in_stride, out_stride](const TensorImpl& o, const InputList& in) {
        auto gx = grad_of(in, 0);
        if (gx.empty()) return;
        for_each_strided(in_shape, in_stride, out_stride,
                         [&](std::size_t, std::size_t ix, std::size_t io) { gx[ix] += o.grad[io]; });
      });
}

Tensor mean(const Tensor& x, std::vector<std::size_t> axes, bool keepdim) {
  std::size_t count = 1;
  for (std::size_t a : axes) count *= x.dim(a);
  if (count == 0) throw ConfigError("mean over an empty axis");
  return div_scalar(sum(x, std::move(axes), keepdim), static_cast<double>(count));
}

Tensor l2_norm(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto s = split_axis(x.shape(), axis, "l2_norm");
  const auto xv = x.data();
  Buffer out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double v = xv[(o * s.extent + k) * s.inner + i];
        acc += v * v;
      }
      out[o * s.inner + i] = std::sqrt(acc);
    }
  }
  return detail::make_result(reduced_shape(x.shape(), axis, keepdim), std::move(out), "l2_norm", {x},
                             [s](const TensorImpl& o, const InputList& in) {
                               auto gx = grad_of(in, 0);
                               if (gx.empty()) return;
                               const auto& xv = in[0]->data;
                               for (std::size_t a = 0; a < s.outer; ++a) {
                                 for (std::size_t i = 0; i < s.inner; ++i) {
                                   const double n = o.data[a * s.inner + i];
                                   if (n == 0.0) continue;
                                   const double g = o.grad[a * s.inner + i] / n;
                                   for (std::size_t k = 0; k < s.extent; ++k) {
                                     const std::size_t idx = (a * s.extent + k) * s.inner + i;
                                     gx[idx] += g * xv[idx];
                                   }
                                 }
                               }
                             });
}

Tensor logsumexp(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto s = split_axis(x.shape(), axis, "logsumexp");
  if (s.extent == 0) throw ConfigError("logsumexp over an empty axis");
  const auto xv = x.data();
  Buffer out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) m = std::max(m, xv[(o * s.extent + k) * s.inner + i]);
      double acc = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) acc += std::exp(xv[(o * s.extent + k) * s.inner + i] - m);
      out[o * s.inner + i] = m + std::log(acc);
    }
  }
  return detail::make_result(reduced_shape(x.shape(), axis, keepdim), std::move(out), "logsumexp", {x},
                             [s](const TensorImpl& o, const InputList& in) {
                               auto gx = grad_of(in, 0);
                               if (gx.empty()) return;
                               const auto& xv = in[0]->data;
                               for (std::size_t a = 0; a < s.outer; ++a) {
                                 for (std::size_t i = 0; i < s.inner; ++i) {
                                   const double lse = o.data[a * s.inner + i];
                                   const double g = o.grad[a * s.inner + i];
                                   for (std::size_t k = 0; k < s.extent; ++k) {
                                     const std::size_t idx = (a * s.extent + k) * s.inner + i;
                                     gx[idx] += g * std::exp(xv[idx] - lse);
                                   }
                                 }
                               }
                             });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ConfigError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Buffer out(m * n);
  const auto ei = [](auto s) { return static_cast<Eigen::Index>(s); };
  MatMap(out.data(), ei(m), ei(n)).noalias() =
      ConstMatMap(a.data().data(), ei(m), ei(k)) * ConstMatMap(b.data().data(), ei(k), ei(n));
  return detail::make_result(Shape{m, n}, std::move(out), "matmul", {a, b},
                             [m, k, n, ei](const TensorImpl& o, const InputList& in) {
                               ConstMatMap g(o.grad.data(), ei(m), ei(n));
                               auto ga = grad_of(in, 0);
                               auto gb = grad_of(in, 1);
                               if (!ga.empty()) {
                                 MatMap(ga.data(), ei(m), ei(k)).noalias() +=
                                     g * ConstMatMap(in[1]->data.data(), ei(k), ei(n)).transpose();
                               }
                               if (!gb.empty()) {
                                 MatMap(gb.data(), ei(k), ei(n)).noalias() +=
                                     ConstMatMap(in[0]->data.data(), ei(m), ei(k)).transpose() * g;
                               }
                             });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto xv = x.data();
  Buffer out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return detail::make_result(Shape{c, r}, std::move(out), "transpose", {x}, [r, c](const TensorImpl& o, const InputList& in) {
    auto gx = grad_of(in, 0);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += o.grad[j * r + i];
  });
}

namespace {

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, k, stride, pad, oh, ow;
  std::size_t col_rows() const { return cin * k * k; }
  std::size_t col_cols() const { return oh * ow; }
  bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* image, const ConvGeometry& g, double* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* plane = image + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* image) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* plane = image + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dParams params) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (params.stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = params.stride;
  g.pad = params.padding;
  if (weight.dim(1) != g.cin) {
    throw ConfigError("conv2d: input has " + std::to_string(g.cin) + " channels but weight expects " +
                      std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != g.k) throw ConfigError("conv2d: only square kernels are supported");
  if (g.k > g.h + 2 * g.pad || g.k > g.w + 2 * g.pad) {
    throw ConfigError("conv2d: kernel " + std::to_string(g.k) + " larger than padded input " +
                      shape_str(input.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw ConfigError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " + std::to_string(g.cout) +
                      " output channels");
  }
  g.oh = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  const auto ei = [](std::size_t s) { return static_cast<Eigen::Index>(s); };
  const std::size_t in_plane = g.cin * g.h * g.w;
  const std::size_t out_plane = g.cout * g.oh * g.ow;
  Buffer out(g.batch * out_plane);
  Buffer col(g.is_pointwise() ? 0 : g.col_rows() * g.col_cols());
  ConstMatMap wmat(weight.data().data(), ei(g.cout), ei(g.col_rows()));
  const auto in_data = input.data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* src = in_data.data() + b * in_plane;
    if (!g.is_pointwise()) im2col(src, g, col.data());
    const double* cptr = g.is_pointwise() ? src : col.data();
    MatMap omat(out.data() + b * out_plane, ei(g.cout), ei(g.col_cols()));
    omat.noalias() = wmat * ConstMatMap(cptr, ei(g.col_rows()), ei(g.col_cols()));
    if (bias.defined()) {
      const auto bv = bias.data();
      for (std::size_t c = 0; c < g.cout; ++c) omat.row(ei(c)).array() += bv[c];
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result(
      Shape{g.batch, g.cout, g.oh, g.ow}, std::move(out), "conv2d", std::move(inputs),
      [g, ei](const TensorImpl& o, const InputList& in) {
        auto gin = grad_of(in, 0);
        auto gw = grad_of(in, 1);
        std::span<double> gb;
        if (in.size() > 2) gb = grad_of(in, 2);
        const std::size_t in_plane = g.cin * g.h * g.w;
        const std::size_t out_plane = g.cout * g.oh * g.ow;
        const auto& x = in[0]->data;
        ConstMatMap wmat(in[1]->data.data(), ei(g.cout), ei(g.col_rows()));
        Buffer col(g.is_pointwise() ? 0 : g.col_rows() * g.col_cols());
        Buffer dcol(gin.empty() || g.is_pointwise() ? 0 : g.col_rows() * g.col_cols());
        for (std::size_t b = 0; b < g.batch; ++b) {
          ConstMatMap gout(o.grad.data() + b * out_plane, ei(g.cout), ei(g.col_cols()));
          if (!gw.empty()) {
            const double* cptr = x.data() + b * in_plane;
            if (!g.is_pointwise()) {
              im2col(cptr, g, col.data());
              cptr = col.data();
            }
            MatMap(gw.data(), ei(g.cout), ei(g.col_rows())).noalias() +=
                gout * ConstMatMap(cptr, ei(g.col_rows()), ei(g.col_cols())).transpose();
          }
          if (!gin.empty()) {
            if (g.is_pointwise()) {
              MatMap(gin.data() + b * in_plane, ei(g.col_rows()), ei(g.col_cols())).noalias() +=
                  wmat.transpose() * gout;
            } else {
              MatMap(dcol.data(), ei(g.col_rows()), ei(g.col_cols())).noalias() = wmat.transpose() * gout;
              col2im_add(dcol.data(), g, gin.data() + b * in_plane);
            }
          }
          if (!gb.empty()) {
            for (std::size_t c = 0; c < g.cout; ++c) gb[c] += gout.row(ei(c)).sum();
          }
        }
      });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                   BatchNormOptions options) {
  require_rank(x, 4, "batchnorm2d");
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.numel() != channels || beta.numel() != channels || state.running_mean.size() != channels ||
      state.running_var.size() != channels) {
    throw ConfigError("batchnorm2d: parameter size does not match " + std::to_string(channels) + " channels");
  }
  const std::size_t count = batch * plane;
  if (mode == Mode::kTrain && count < 2) {
    throw ConfigError("batchnorm2d: train mode needs at least 2 values per channel");
  }
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();

  std::vector<double> mean_c(channels), inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double m, var;
    if (mode == Mode::kTrain) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = xv.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      m = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = xv.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      var = sq / static_cast<double>(count);
      state.running_mean[c] = options.momentum * state.running_mean[c] + (1.0 - options.momentum) * m;
      state.running_var[c] = options.momentum * state.running_var[c] + (1.0 - options.momentum) * var;
    } else {
      m = state.running_mean[c];
      var = state.running_var[c];
    }
    mean_c[c] = m;
    inv_std[c] = 1.0 / std::sqrt(var + options.eps);
  }

  Buffer out(xv.size());
  Buffer xhat(xv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[base + i] = (xv[base + i] - mean_c[c]) * inv_std[c];
        out[base + i] = gv[c] * xhat[base + i] + bv[c];
      }
    }
  }

  const bool train = mode == Mode::kTrain;
  return detail::make_result(
      x.shape(), std::move(out), "batchnorm2d", {x, gamma, beta},
      [batch, channels, plane, count, train, inv_std, xhat = std::move(xhat)](const TensorImpl& o,
                                                                              const InputList& in) {
        auto gx = grad_of(in, 0);
        auto gg = grad_of(in, 1);
        auto gbeta = grad_of(in, 2);
        const auto& gamma = in[1]->data;
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += o.grad[base + i];
              sum_gx += o.grad[base + i] * xhat[base + i];
            }
          }
          if (!gg.empty()) gg[c] += sum_gx;
          if (!gbeta.empty()) gbeta[c] += sum_g;
          if (gx.empty()) continue;
          const double n = static_cast<double>(count);
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double dxhat = o.grad[base + i] * gamma[c];
              if (train) {
                gx[base + i] += inv_std[c] / n *
                                (n * dxhat - gamma[c] * sum_g - xhat[base + i] * gamma[c] * sum_gx);
              } else {
                gx[base + i] += dxhat * inv_std[c];
              }
            }
          }
        }
      });
}

Tensor channel_softmax(const Tensor& x) {
  require_rank(x, 4, "channel_softmax");
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (channels < 1) throw ConfigError("channel_softmax: needs at least one channel");
  const auto xv = x.data();
  Buffer out(xv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * channels * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      double m = xv[base + i];
      for (std::size_t c = 1; c < channels; ++c) m = std::max(m, xv[base + c * plane + i]);
      double total = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const double e = std::exp(xv[base + c * plane + i] - m);
        out[base + c * plane + i] = e;
        total += e;
      }
      for (std::size_t c = 0; c < channels; ++c) out[base + c * plane + i] /= total;
    }
  }
  return detail::make_result(x.shape(), std::move(out), "channel_softmax", {x},
                             [batch, channels, plane](const TensorImpl& o, const InputList& in) {
                               auto gx = grad_of(in, 0);
                               if (gx.empty()) return;
                               for (std::size_t b = 0; b < batch; ++b) {
                                 const std::size_t base = b * channels * plane;
                                 for (std::size_t i = 0; i < plane; ++i) {
                                   double dot = 0.0;
                                   for (std::size_t c = 0; c < channels; ++c) {
                                     dot += o.grad[base + c * plane + i] * o.data[base + c * plane + i];
                                   }
                                   for (std::size_t c = 0; c < channels; ++c) {
                                     const std::size_t idx = base + c * plane + i;
                                     gx[idx] += o.data[idx] * (o.grad[idx] - dot);
                                   }
                                 }
                               }
                             });
}

Tensor channel_log_softmax(const Tensor& x) {
  require_rank(x, 4, "channel_log_softmax");
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (channels < 1) throw ConfigError("channel_log_softmax: needs at least one channel");
  const auto xv = x.data();
  Buffer out(xv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * channels * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      double m = xv[base + i];
      for (std::size_t c = 1; c < channels; ++c) m = std::max(m, xv[base + c * plane + i]);
      double total = 0.0;
      for (std::size_t c = 0; c < channels; ++c) total += std::exp(xv[base + c * plane + i] - m);
      const double lse = m + std::log(total);
      for (std::size_t c = 0; c < channels; ++c) out[base + c * plane + i] = xv[base + c * plane + i] - lse;
    }
  }
  return detail::make_result(x.shape(), std::move(out), "channel_log_softmax", {x},
                             [batch, channels, plane](const TensorImpl& o, const InputList& in) {
                               auto gx = grad_of(in, 0);
                               if (gx.empty()) return;
                               for (std::size_t b = 0; b < batch; ++b) {
                                 const std::size_t base = b * channels * plane;
                                 for (std::size_t i = 0; i < plane; ++i) {
                                   double total = 0.0;
                                   for (std::size_t c = 0; c < channels; ++c) total += o.grad[base + c * plane + i];
                                   for (std::size_t c = 0; c < channels; ++c) {
                                     const std::size_t idx = base + c * plane + i;
                                     gx[idx] += o.grad[idx] - std::exp(o.data[idx]) * total;
                                   }
                                 }
                               }
                             });
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_rank(x, 4, "upsample_nearest2x");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = 2 * h, ow = 2 * w;
  const auto xv = x.data();
  Buffer out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = xv[(p * h + y / 2) * w + xx / 2];
  return detail::make_result(Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), "upsample_nearest2x", {x},
                             [planes, h, w](const TensorImpl& o, const InputList& in) {
                               auto gx = grad_of(in, 0);
                               if (gx.empty()) return;
                               const std::size_t oh = 2 * h, ow = 2 * w;
                               for (std::size_t p = 0; p < planes; ++p)
                                 for (std::size_t y = 0; y < oh; ++y)
                                   for (std::size_t xx = 0; xx < ow; ++xx)
                                     gx[(p * h + y / 2) * w + xx / 2] += o.grad[(p * oh + y) * ow + xx];
                             });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("concat_channels: nothing to concatenate");
  for (const auto& p : parts) require_rank(p, 4, "concat_channels");
  const std::size_t batch = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  std::size_t channels = 0;
  std::vector<std::size_t> part_channels;
  for (const auto& p : parts) {
    if (p.dim(0) != batch || p.dim(2) != h || p.dim(3) != w) {
      throw ConfigError("concat_channels: " + shape_str(p.shape()) + " does not match " +
                        shape_str(parts[0].shape()));
    }
    part_channels.push_back(p.dim(1));
    channels += p.dim(1);
  }
  const std::size_t plane = h * w;
  Buffer out(batch * channels * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto src = parts[k].data().subspan(b * part_channels[k] * plane, part_channels[k] * plane);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>((b * channels + offset) * plane));
      offset += part_channels[k];
    }
  }
  return detail::make_result(Shape{batch, channels, h, w}, std::move(out), "concat_channels", parts,
                             [batch, channels, plane, part_channels](const TensorImpl& o, const InputList& in) {
                               for (std::size_t b = 0; b < batch; ++b) {
                                 std::size_t offset = 0;
                                 for (std::size_t k = 0; k < in.size(); ++k) {
                                   auto gk = grad_of(in, k);
                                   const std::size_t n = part_channels[k] * plane;
                                   if (!gk.empty()) {
                                     const double* src = o.grad.data() + (b * channels + offset) * plane;
                                     double* dst = gk.data() + b * n;
                                     for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
                                   }
                                   offset += part_channels[k];
                                 }
                               }
                             });
}

Tensor gather_spatial(const Tensor& x, std::size_t batch, std::span<const SpatialCoord> coords) {
  require_rank(x, 4, "gather_spatial");
  const std::size_t channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (batch >= x.dim(0)) throw ConfigError("gather_spatial: batch index out of range");
  for (const auto& c : coords) {
    if (c.y >= h || c.x >= w) throw ConfigError("gather_spatial: coordinate out of range for " + shape_str(x.shape()));
  }
  std::vector<SpatialCoord> saved(coords.begin(), coords.end());
  const auto xv = x.data();
  Buffer out(coords.size() * channels);
  const std::size_t base = batch * channels * h * w;
  for (std::size_t i = 0; i < saved.size(); ++i)
    for (std::size_t c = 0; c < channels; ++c) out[i * channels + c] = xv[base + (c * h + saved[i].y) * w + saved[i].x];
  return detail::make_result(Shape{saved.size(), channels}, std::move(out), "gather_spatial", {x},
                             [saved, base, channels, h, w](const TensorImpl& o, const InputList& in) {
                               auto gx = grad_of(in, 0);
                               if (gx.empty()) return;
                               for (std::size_t i = 0; i < saved.size(); ++i)
                                 for (std::size_t c = 0; c < channels; ++c)
                                   gx[base + (c * h + saved[i].y) * w + saved[i].x] += o.grad[i * channels + c];
                             });
}

Tensor slice_batch(const Tensor& x, std::size_t batch) {
  if (x.rank() < 1 || batch >= x.dim(0)) throw ConfigError("slice_batch: index out of range");
  const std::size_t item = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = 1;
  const auto src = x.data().subspan(batch * item, item);
  Buffer out(src.begin(), src.end());
  return detail::make_result(std::move(shape), std::move(out), "slice_batch", {x},
                             [batch, item](const TensorImpl& o, const InputList& in) {
                               auto gx = grad_of(in, 0);
                               if (gx.empty()) return;
                               for (std::size_t i = 0; i < item; ++i) gx[batch * item + i] += o.grad[i];
                             });
}

}  // namespace dragsaw
