#include "oneshot/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "oneshot/errors.hpp"

namespace oneshot {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

template <class Fwd, class Partials>
Tensor binary_op(Tape& tape, std::string_view name, const Tensor& x, const Tensor& y, Fwd f, Partials partials) {
  const bool same = x.shape() == y.shape();
  const bool x_scalar = x.size() == 1;
  const bool y_scalar = y.size() == 1;
  if (!same && !x_scalar && !y_scalar) {
    throw ShapeError(std::string(name) + ": shape mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  const Shape out_shape = same ? x.shape() : (y_scalar ? x.shape() : y.shape());
  const std::size_t n = shape_size(out_shape);
  const std::size_t sx = (x.size() == n) ? 1 : 0;
  const std::size_t sy = (y.size() == n) ? 1 : 0;

  std::vector<double> out(n);
  auto xv = x.values();
  auto yv = y.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(xv[i * sx], yv[i * sy]);
  require_finite(name, out);
  Tensor result(out_shape, std::move(out));

  if (tape.should_record({&x, &y})) {
    tape.record(name, {x, y}, result, [x, y, n, sx, sy, partials](std::span<const double> g) {
      auto gx = grad_target(x);
      auto gy = grad_target(y);
      auto xv = x.values();
      auto yv = y.values();
      for (std::size_t i = 0; i < n; ++i) {
        const auto [dx, dy] = partials(xv[i * sx], yv[i * sy]);
        if (!gx.empty()) gx[i * sx] += g[i] * dx;
        if (!gy.empty()) gy[i * sy] += g[i] * dy;
      }
    });
  }
  return result;
}

// `derivative(x, y)` receives the input and the forward output.
template <class Fwd, class Deriv>
Tensor unary_op(Tape& tape, std::string_view name, const Tensor& x, Fwd f, Deriv derivative) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(xv[i]);
  require_finite(name, out);
  Tensor result(x.shape(), std::move(out));

  if (tape.should_record({&x})) {
    // The closure holds the output's values through a detached handle to avoid a cycle.
    Tensor y = result.detach();
    tape.record(name, {x}, result, [x, y, n, derivative](std::span<const double> g) {
      auto gx = grad_target(x);
      auto xv = x.values();
      auto yv = y.values();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * derivative(xv[i], yv[i]);
    });
  }
  return result;
}

struct Axis {
  std::size_t outer, len, inner;
};

Axis split_axis(const Shape& shape, std::size_t axis, std::string_view op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " + to_string(shape));
  }
  Axis a{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) a.inner *= shape[i];
  if (a.len == 0) throw ShapeError(std::string(op) + ": empty axis");
  return a;
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

}  // namespace

Tensor add(Tape& tape, const Tensor& x, const Tensor& y) {
  return binary_op(
      tape, "add", x, y, [](double a, double b) { return a + b; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(Tape& tape, const Tensor& x, const Tensor& y) {
  return binary_op(
      tape, "sub", x, y, [](double a, double b) { return a - b; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(Tape& tape, const Tensor& x, const Tensor& y) {
  return binary_op(
      tape, "mul", x, y, [](double a, double b) { return a * b; },
      [](double a, double b) { return std::pair{b, a}; });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
  return unary_op(
      tape, "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor square(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  return unary_op(
      tape, "scale", x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

void prepare_threads() { Eigen::initParallel(); }

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor c(Shape{m, n});
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  MatMap(c.mutable_values().data(), M, N).noalias() =
      ConstMatMap(a.values().data(), M, K) * ConstMatMap(b.values().data(), K, N);
  require_finite("matmul", c.values());

  if (tape.should_record({&a, &b})) {
    tape.record("matmul", {a, b}, c, [a, b, M, K, N](std::span<const double> g) {
      ConstMatMap G(g.data(), M, N);
      if (auto ga = grad_target(a); !ga.empty()) {
        MatMap(ga.data(), M, K).noalias() += G * ConstMatMap(b.values().data(), K, N).transpose();
      }
      if (auto gb = grad_target(b); !gb.empty()) {
        MatMap(gb.data(), K, N).noalias() += ConstMatMap(a.values().data(), M, K).transpose() * G;
      }
    });
  }
  return c;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match axis 1 of " +
                     to_string(x.shape()));
  }
  const Axis ax = split_axis(x.shape(), 1, "add_bias");
  std::vector<double> out(x.values().begin(), x.values().end());
  auto bv = bias.values();
  for (std::size_t o = 0; o < ax.outer; ++o)
    for (std::size_t c = 0; c < ax.len; ++c) {
      double* row = out.data() + (o * ax.len + c) * ax.inner;
      for (std::size_t i = 0; i < ax.inner; ++i) row[i] += bv[c];
    }
  require_finite("add_bias", out);
  Tensor result(x.shape(), std::move(out));

  if (tape.should_record({&x, &bias})) {
    tape.record("add_bias", {x, bias}, result, [x, bias, ax](std::span<const double> g) {
      if (auto gx = grad_target(x); !gx.empty()) {
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
      }
      if (auto gb = grad_target(bias); !gb.empty()) {
        for (std::size_t o = 0; o < ax.outer; ++o)
          for (std::size_t c = 0; c < ax.len; ++c) {
            const double* row = g.data() + (o * ax.len + c) * ax.inner;
            double s = 0.0;
            for (std::size_t i = 0; i < ax.inner; ++i) s += row[i];
            gb[c] += s;
          }
      }
    });
  }
  return result;
}

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  const Axis ax = split_axis(x.shape(), axis, "softmax");
  auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < ax.outer; ++o)
    for (std::size_t i = 0; i < ax.inner; ++i) {
      const std::size_t base = o * ax.len * ax.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < ax.len; ++k) mx = std::max(mx, xv[base + k * ax.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < ax.len; ++k) {
        const double e = std::exp(xv[base + k * ax.inner] - mx);
        out[base + k * ax.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < ax.len; ++k) out[base + k * ax.inner] /= total;
    }
  require_finite("softmax", out);
  Tensor result(x.shape(), std::move(out));

  if (tape.should_record({&x})) {
    Tensor y = result.detach();
    tape.record("softmax", {x}, result, [x, y, ax](std::span<const double> g) {
      auto gx = grad_target(x);
      auto yv = y.values();
      for (std::size_t o = 0; o < ax.outer; ++o)
        for (std::size_t i = 0; i < ax.inner; ++i) {
          const std::size_t base = o * ax.len * ax.inner + i;
          double dot = 0.0;
          for (std::size_t k = 0; k < ax.len; ++k) dot += g[base + k * ax.inner] * yv[base + k * ax.inner];
          for (std::size_t k = 0; k < ax.len; ++k) {
            const std::size_t idx = base + k * ax.inner;
            gx[idx] += yv[idx] * (g[idx] - dot);
          }
        }
    });
  }
  return result;
}

Tensor log_softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  const Axis ax = split_axis(x.shape(), axis, "log_softmax");
  auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < ax.outer; ++o)
    for (std::size_t i = 0; i < ax.inner; ++i) {
      const std::size_t base = o * ax.len * ax.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < ax.len; ++k) mx = std::max(mx, xv[base + k * ax.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < ax.len; ++k) total += std::exp(xv[base + k * ax.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t k = 0; k < ax.len; ++k) out[base + k * ax.inner] = xv[base + k * ax.inner] - lse;
    }
  require_finite("log_softmax", out);
  Tensor result(x.shape(), std::move(out));

  if (tape.should_record({&x})) {
    Tensor y = result.detach();
    tape.record("log_softmax", {x}, result, [x, y, ax](std::span<const double> g) {
      auto gx = grad_target(x);
      auto yv = y.values();
      for (std::size_t o = 0; o < ax.outer; ++o)
        for (std::size_t i = 0; i < ax.inner; ++i) {
          const std::size_t base = o * ax.len * ax.inner + i;
          double gsum = 0.0;
          for (std::size_t k = 0; k < ax.len; ++k) gsum += g[base + k * ax.inner];
          for (std::size_t k = 0; k < ax.len; ++k) {
            const std::size_t idx = base + k * ax.inner;
            gx[idx] += g[idx] - std::exp(yv[idx]) * gsum;
          }
        }
    });
  }
  return result;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  require_finite("sum", std::span<const double>(&s, 1));
  Tensor result = Tensor::scalar(s);
  if (tape.should_record({&x})) {
    tape.record("sum", {x}, result, [x](std::span<const double> g) {
      auto gx = grad_target(x);
      for (double& v : gx) v += g[0];
    });
  }
  return result;
}

Tensor mean(Tape& tape, const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.size()));
}

Tensor vector_norm(Tape& tape, const Tensor& x, double eps) {
  if (x.rank() == 0) throw ShapeError("vector_norm needs rank >= 1");
  const std::size_t d = x.shape().back();
  if (d == 0) throw ShapeError("vector_norm over empty axis");
  const std::size_t rows = x.size() / d;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> out(rows);
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += xv[r * d + k] * xv[r * d + k];
    out[r] = std::sqrt(s);
  }
  require_finite("vector_norm", out);
  Tensor result(out_shape, std::move(out));

  if (tape.should_record({&x})) {
    Tensor y = result.detach();
    tape.record("vector_norm", {x}, result, [x, y, d, rows, eps](std::span<const double> g) {
      auto gx = grad_target(x);
      auto xv = x.values();
      auto yv = y.values();
      for (std::size_t r = 0; r < rows; ++r) {
        const double f = g[r] / (yv[r] + eps);
        for (std::size_t k = 0; k < d; ++k) gx[r * d + k] += f * xv[r * d + k];
      }
    });
  }
  return result;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  if (tape.should_record({&x})) {
    tape.record("reshape", {x}, result, [x](std::span<const double> g) {
      auto gx = grad_target(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

Tensor pick(Tape& tape, const Tensor& x, std::span<const std::size_t> index) {
  require_rank(x, 2, "pick");
  const std::size_t b = x.dim(0), k = x.dim(1);
  if (index.size() != b) throw ShapeError("pick: index count differs from batch size");
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (idx[i] >= k) throw IndexError("pick: index " + std::to_string(idx[i]) + " >= " + std::to_string(k));
    out[i] = x.values()[i * k + idx[i]];
  }
  Tensor result(Shape{b}, std::move(out));
  if (tape.should_record({&x})) {
    tape.record("pick", {x}, result, [x, idx, k](std::span<const double> g) {
      auto gx = grad_target(x);
      for (std::size_t i = 0; i < idx.size(); ++i) gx[i * k + idx[i]] += g[i];
    });
  }
  return result;
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ConfigError("stride must be >= 1");
  if (kernel == 0 || in + 2 * padding < kernel) {
    throw ShapeError("window " + std::to_string(kernel) + " does not fit extent " + std::to_string(in) +
                     " with padding " + std::to_string(padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

struct ConvDims {
  std::size_t n, c, h, w, o, kh, kw, oh, ow, stride, pad;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

// cols[(ci*kh + ky)*kw + kx][oy*ow + ox] = x[ci][oy*s + ky - p][ox*s + kx - p]
void im2col(const double* x, const ConvDims& d, double* cols) {
  for (std::size_t ci = 0; ci < d.c; ++ci)
    for (std::size_t ky = 0; ky < d.kh; ++ky)
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        double* row = cols + ((ci * d.kh + ky) * d.kw + kx) * d.pixels();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + ky) - static_cast<long>(d.pad);
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * d.stride + kx) - static_cast<long>(d.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(d.h) && ix < static_cast<long>(d.w);
            row[oy * d.ow + ox] = inside ? x[(ci * d.h + iy) * d.w + ix] : 0.0;
          }
        }
      }
}

void col2im(const double* cols, const ConvDims& d, double* x) {
  for (std::size_t ci = 0; ci < d.c; ++ci)
    for (std::size_t ky = 0; ky < d.kh; ++ky)
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        const double* row = cols + ((ci * d.kh + ky) * d.kw + kx) * d.pixels();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + ky) - static_cast<long>(d.pad);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * d.stride + kx) - static_cast<long>(d.pad);
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            x[(ci * d.h + iy) * d.w + ix] += row[oy * d.ow + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dGeometry geometry) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, layer expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) throw ShapeError("conv2d: bias shape mismatch");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0,
             geometry.stride, geometry.padding};
  d.oh = conv_output_extent(d.h, d.kh, d.stride, d.pad);
  d.ow = conv_output_extent(d.w, d.kw, d.stride, d.pad);

  const auto O = static_cast<Eigen::Index>(d.o), P = static_cast<Eigen::Index>(d.patch()),
             Q = static_cast<Eigen::Index>(d.pixels());
  Tensor out(Shape{d.n, d.o, d.oh, d.ow});
  detail::Buffer cols(d.patch() * d.pixels());
  ConstMatMap W(weight.values().data(), O, P);
  Eigen::Map<const Eigen::VectorXd> B(bias.values().data(), O);
  for (std::size_t s = 0; s < d.n; ++s) {
    im2col(x.values().data() + s * d.c * d.h * d.w, d, cols.data());
    MatMap Y(out.mutable_values().data() + s * d.o * d.pixels(), O, Q);
    Y.noalias() = W * ConstMatMap(cols.data(), P, Q);
    Y.colwise() += B;
  }
  require_finite("conv2d", out.values());

  if (tape.should_record({&x, &weight, &bias})) {
    tape.record("conv2d", {x, weight, bias}, out, [x, weight, bias, d, O, P, Q](std::span<const double> g) {
      auto gx = grad_target(x);
      auto gw = grad_target(weight);
      auto gb = grad_target(bias);
      detail::Buffer cols(d.patch() * d.pixels());
      detail::Buffer dcols(gx.empty() ? 0 : cols.size());
      ConstMatMap W(weight.values().data(), O, P);
      for (std::size_t s = 0; s < d.n; ++s) {
        ConstMatMap G(g.data() + s * d.o * d.pixels(), O, Q);
        if (!gw.empty()) {
          im2col(x.values().data() + s * d.c * d.h * d.w, d, cols.data());
          MatMap(gw.data(), O, P).noalias() += G * ConstMatMap(cols.data(), P, Q).transpose();
        }
        if (!gb.empty()) Eigen::Map<Eigen::VectorXd>(gb.data(), O) += G.rowwise().sum();
        if (!gx.empty()) {
          MatMap(dcols.data(), P, Q).noalias() = W.transpose() * G;
          col2im(dcols.data(), d, gx.data() + s * d.c * d.h * d.w);
        }
      }
    });
  }
  return out;
}

Tensor maxpool2d(Tape& tape, const Tensor& x, std::size_t window, std::size_t stride) {
  require_rank(x, 4, "maxpool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = conv_output_extent(h, window, stride, 0);
  const std::size_t ow = conv_output_extent(w, window, stride, 0);
  Tensor out(Shape{n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t in_base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = in_base + (oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = in_base + (oy * stride + ky) * w + ox * stride + kx;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        ov[o] = xv[best];
        argmax[o] = best;
      }
  }
  if (tape.should_record({&x})) {
    tape.record("maxpool2d", {x}, out, [x, argmax = std::move(argmax)](std::span<const double> g) {
      auto gx = grad_target(x);
      for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
    });
  }
  return out;
}

}  // namespace oneshot
