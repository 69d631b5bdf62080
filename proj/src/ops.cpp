#include "unetseg/ops.hpp"

#include <algorithm>
#include <cmath>

#include "gemm.hpp"
#include "unetseg/error.hpp"

namespace unetseg::ops {
namespace {

template <typename Real>
void require_rank4(const Tensor<Real>& t, const char* op) {
  if (!t.defined() || t.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected an NCHW tensor, got " +
                     (t.defined() ? shape_string(t.shape()) : std::string("undefined")));
  }
}

template <typename Real>
using StoragePtr = std::shared_ptr<detail::TensorStorage<Real>>;

template <typename Real>
void accumulate(const StoragePtr<Real>& target, const std::vector<Real>& delta) {
  if (!target->requires_grad) return;
  target->ensure_grad();
  Real* g = target->grad.data();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

struct Geometry {
  std::size_t channels, height, width, kernel, stride, padding, out_h, out_w;
};

// col[(c*k + ky)*k + kx][oy*out_w + ox]
template <typename Real>
void im2col(const Real* in, const Geometry& g, Real* col) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const Real* src = in + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        Real* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          Real* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(row, row + g.out_w, Real(0));
            continue;
          }
          const Real* srow = src + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                          ? Real(0)
                          : srow[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Transposed layout: row[oy*out_w + ox][(c*k + ky)*k + kx]
template <typename Real>
void im2row(const Real* in, const Geometry& g, Real* rows) {
  const std::size_t ckk = g.channels * g.kernel * g.kernel;
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      Real* dst = rows + (oy * g.out_w + ox) * ckk;
      for (std::size_t c = 0; c < g.channels; ++c) {
        const Real* src = in + c * g.height * g.width;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width);
            *dst++ = inside ? src[static_cast<std::size_t>(iy) * g.width +
                                  static_cast<std::size_t>(ix)]
                            : Real(0);
          }
        }
      }
    }
  }
}

template <typename Real>
void col2im_add(const Real* col, const Geometry& g, Real* out) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    Real* dst = out + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const Real* src = col + ((c * g.kernel + ky) * g.kernel + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          Real* drow = dst + static_cast<std::size_t>(iy) * g.width;
          const Real* srow = src + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            drow[static_cast<std::size_t>(ix)] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  const bool same = a.shape() == b.shape();
  const bool channel_broadcast =
      !same && a.rank() == 4 && b.rank() == 1 && b.dim(0) == a.dim(1);
  if (!same && !channel_broadcast) {
    throw ShapeError("add: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  std::vector<Real> out(a.data().begin(), a.data().end());
  const std::size_t plane = channel_broadcast ? a.dim(2) * a.dim(3) : 0;
  const std::size_t channels = channel_broadcast ? a.dim(1) : 0;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[(i / plane) % channels];
  }
  Tensor<Real> result(a.shape(), std::move(out));
  if (Tape<Real>* tape = detail::recording_tape<Real>({&a, &b})) {
    auto sa = a.storage(), sb = b.storage(), so = result.storage();
    tape->record("add", {&a, &b}, result, [sa, sb, so, plane, channels, same] {
      accumulate(sa, so->grad);
      if (!sb->requires_grad) return;
      if (same) {
        accumulate(sb, so->grad);
        return;
      }
      std::vector<Real> reduced(channels, Real(0));
      for (std::size_t i = 0; i < so->grad.size(); ++i) {
        reduced[(i / plane) % channels] += so->grad[i];
      }
      accumulate(sb, reduced);
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor<Real> result(a.shape(), std::move(out));
  if (Tape<Real>* tape = detail::recording_tape<Real>({&a, &b})) {
    auto sa = a.storage(), sb = b.storage(), so = result.storage();
    tape->record("mul", {&a, &b}, result, [sa, sb, so] {
      const std::size_t n = so->grad.size();
      if (sa->requires_grad) {
        std::vector<Real> d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = so->grad[i] * sb->data[i];
        accumulate(sa, d);
      }
      if (sb->requires_grad) {
        std::vector<Real> d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = so->grad[i] * sa->data[i];
        accumulate(sb, d);
      }
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  Tensor<Real> result = Tensor<Real>::scalar(total);
  if (Tape<Real>* tape = detail::recording_tape<Real>({&a})) {
    auto sa = a.storage(), so = result.storage();
    tape->record("sum", {&a}, result, [sa, so] {
      accumulate(sa, std::vector<Real>(sa->data.size(), so->grad[0]));
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > Real(0) ? a.data()[i] : Real(0);
  Tensor<Real> result(a.shape(), std::move(out));
  if (Tape<Real>* tape = detail::recording_tape<Real>({&a})) {
    auto sa = a.storage(), so = result.storage();
    tape->record("relu", {&a}, result, [sa, so] {
      std::vector<Real> d(so->grad.size());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = sa->data[i] > Real(0) ? so->grad[i] : Real(0);
      accumulate(sa, d);
    });
  }
  return result;
}

template <typename Real>
Real stable_sigmoid(Real x) {
  if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(a.data()[i]);
  Tensor<Real> result(a.shape(), std::move(out));
  if (Tape<Real>* tape = detail::recording_tape<Real>({&a})) {
    auto sa = a.storage(), so = result.storage();
    tape->record("sigmoid", {&a}, result, [sa, so] {
      std::vector<Real> d(so->grad.size());
      for (std::size_t i = 0; i < d.size(); ++i) {
        const Real s = so->data[i];
        d[i] = so->grad[i] * s * (Real(1) - s);
      }
      accumulate(sa, d);
    });
  }
  return result;
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  const std::size_t padded = in + 2 * padding;
  if (kernel == 0 || stride == 0 || padded < kernel) {
    throw ShapeError("conv2d: padded extent " + std::to_string(padded) +
                     " smaller than kernel " + std::to_string(kernel));
  }
  return (padded - kernel) / stride + 1;
}

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight,
                    const Tensor<Real>& bias, Conv2dOptions options) {
  require_rank4(input, "conv2d");
  require_rank4(weight, "conv2d weight");
  if (weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d: kernel must be square, got " + shape_string(weight.shape()));
  }
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d: input " + shape_string(input.shape()) + " has " +
                     std::to_string(input.dim(1)) + " channels but weight " +
                     shape_string(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
  }
  const std::size_t out_channels = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_channels)) {
    throw ShapeError("conv2d: bias " + shape_string(bias.shape()) + " does not match " +
                     std::to_string(out_channels) + " output channels");
  }
  Geometry g{};
  g.channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.kernel = weight.dim(2);
  g.stride = options.stride;
  g.padding = options.padding;
  g.out_h = conv_output_extent(g.height, g.kernel, g.stride, g.padding);
  g.out_w = conv_output_extent(g.width, g.kernel, g.stride, g.padding);

  const std::size_t batch = input.dim(0);
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t ckk = g.channels * g.kernel * g.kernel;
  const std::size_t in_stride = g.channels * g.height * g.width;
  const bool direct = g.kernel == 1 && g.stride == 1 && g.padding == 0;

  std::vector<Real> out(batch * out_channels * plane, Real(0));
  std::vector<Real> col(direct ? 0 : ckk * plane);
  for (std::size_t n = 0; n < batch; ++n) {
    const Real* in_n = input.data().data() + n * in_stride;
    const Real* cols = in_n;
    if (!direct) {
      im2col(in_n, g, col.data());
      cols = col.data();
    }
    Real* out_n = out.data() + n * out_channels * plane;
    detail::gemm_nn(out_channels, plane, ckk, weight.data().data(), cols, out_n);
    if (bias.defined()) {
      for (std::size_t o = 0; o < out_channels; ++o) {
        const Real b = bias.data()[o];
        Real* row = out_n + o * plane;
        for (std::size_t j = 0; j < plane; ++j) row[j] += b;
      }
    }
  }
  Tensor<Real> result(Shape{batch, out_channels, g.out_h, g.out_w}, std::move(out));
  detail::check_finite(result, "conv2d");

  if (Tape<Real>* tape = detail::recording_tape<Real>({&input, &weight, &bias})) {
    auto si = input.storage(), sw = weight.storage(), so = result.storage();
    StoragePtr<Real> sb = bias.defined() ? bias.storage() : nullptr;
    tape->record("conv2d", {&input, &weight, &bias}, result,
                 [si, sw, sb, so, g, batch, out_channels, plane, ckk, in_stride, direct] {
      const bool want_w = sw->requires_grad;
      const bool want_i = si->requires_grad;
      const bool want_b = sb && sb->requires_grad;
      std::vector<Real> dw(want_w ? sw->data.size() : 0, Real(0));
      std::vector<Real> di(want_i ? si->data.size() : 0, Real(0));
      std::vector<Real> db(want_b ? out_channels : 0, Real(0));
      std::vector<Real> rows(want_w ? plane * ckk : 0);
      std::vector<Real> dcol(want_i ? ckk * plane : 0);
      for (std::size_t n = 0; n < batch; ++n) {
        const Real* dout = so->grad.data() + n * out_channels * plane;
        const Real* in_n = si->data.data() + n * in_stride;
        if (want_w) {
          im2row(in_n, g, rows.data());
          detail::gemm_nn(out_channels, ckk, plane, dout, rows.data(), dw.data());
        }
        if (want_i) {
          if (direct) {
            detail::gemm_tn(ckk, plane, out_channels, sw->data.data(), dout,
                            di.data() + n * in_stride);
          } else {
            std::fill(dcol.begin(), dcol.end(), Real(0));
            detail::gemm_tn(ckk, plane, out_channels, sw->data.data(), dout, dcol.data());
            col2im_add(dcol.data(), g, di.data() + n * in_stride);
          }
        }
        if (want_b) {
          for (std::size_t o = 0; o < out_channels; ++o) {
            Real s = 0;
            for (std::size_t j = 0; j < plane; ++j) s += dout[o * plane + j];
            db[o] += s;
          }
        }
      }
      if (want_w) accumulate(sw, dw);
      if (want_i) accumulate(si, di);
      if (want_b) accumulate(sb, db);
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& input, std::size_t k) {
  require_rank4(input, "max_pool2d");
  if (k == 0 || input.dim(2) % k != 0 || input.dim(3) % k != 0) {
    throw ShapeError("max_pool2d: spatial extent of " + shape_string(input.shape()) +
                     " is not divisible by " + std::to_string(k));
  }
  const std::size_t nc = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h / k, ow = w / k;
  std::vector<Real> out(nc * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const Real* in = input.data().data();
  for (std::size_t p = 0; p < nc; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + (oy * k) * w + ox * k;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = p * h * w + (oy * k + dy) * w + ox * k + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  Tensor<Real> result(Shape{input.dim(0), input.dim(1), oh, ow}, std::move(out));
  if (Tape<Real>* tape = detail::recording_tape<Real>({&input})) {
    auto si = input.storage(), so = result.storage();
    tape->record("max_pool2d", {&input}, result, [si, so, argmax = std::move(argmax)] {
      std::vector<Real> d(si->data.size(), Real(0));
      for (std::size_t o = 0; o < argmax.size(); ++o) d[argmax[o]] += so->grad[o];
      accumulate(si, d);
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> upsample_nearest2x(const Tensor<Real>& input) {
  require_rank4(input, "upsample_nearest2x");
  const std::size_t nc = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  std::vector<Real> out(nc * 4 * h * w);
  const Real* in = input.data().data();
  for (std::size_t p = 0; p < nc; ++p) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      const Real* src = in + p * h * w + (y / 2) * w;
      Real* dst = out.data() + p * 4 * h * w + y * 2 * w;
      for (std::size_t x = 0; x < 2 * w; ++x) dst[x] = src[x / 2];
    }
  }
  Tensor<Real> result(Shape{input.dim(0), input.dim(1), 2 * h, 2 * w}, std::move(out));
  if (Tape<Real>* tape = detail::recording_tape<Real>({&input})) {
    auto si = input.storage(), so = result.storage();
    tape->record("upsample_nearest2x", {&input}, result, [si, so, nc, h, w] {
      std::vector<Real> d(si->data.size(), Real(0));
      for (std::size_t p = 0; p < nc; ++p) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const Real* g = so->grad.data() + p * 4 * h * w;
            const std::size_t top = (2 * y) * 2 * w + 2 * x;
            const std::size_t bottom = top + 2 * w;
            d[p * h * w + y * w + x] = g[top] + g[top + 1] + g[bottom] + g[bottom + 1];
          }
        }
      }
      accumulate(si, d);
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: batch/spatial mismatch between " +
                     shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = a.dim(2) * a.dim(3);
  std::vector<Real> out;
  out.reserve(batch * (ca + cb) * plane);
  for (std::size_t n = 0; n < batch; ++n) {
    auto ab = a.data().begin() + static_cast<std::ptrdiff_t>(n * ca * plane);
    out.insert(out.end(), ab, ab + static_cast<std::ptrdiff_t>(ca * plane));
    auto bb = b.data().begin() + static_cast<std::ptrdiff_t>(n * cb * plane);
    out.insert(out.end(), bb, bb + static_cast<std::ptrdiff_t>(cb * plane));
  }
  Tensor<Real> result(Shape{batch, ca + cb, a.dim(2), a.dim(3)}, std::move(out));
  if (Tape<Real>* tape = detail::recording_tape<Real>({&a, &b})) {
    auto sa = a.storage(), sb = b.storage(), so = result.storage();
    tape->record("concat_channels", {&a, &b}, result, [sa, sb, so, batch, ca, cb, plane] {
      std::vector<Real> da(sa->requires_grad ? sa->data.size() : 0);
      std::vector<Real> db(sb->requires_grad ? sb->data.size() : 0);
      for (std::size_t n = 0; n < batch; ++n) {
        const Real* g = so->grad.data() + n * (ca + cb) * plane;
        if (!da.empty()) std::copy(g, g + ca * plane, da.begin() + static_cast<std::ptrdiff_t>(n * ca * plane));
        if (!db.empty()) {
          std::copy(g + ca * plane, g + (ca + cb) * plane,
                    db.begin() + static_cast<std::ptrdiff_t>(n * cb * plane));
        }
      }
      if (!da.empty()) accumulate(sa, da);
      if (!db.empty()) accumulate(sb, db);
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> batch_norm2d(const Tensor<Real>& input, const Tensor<Real>& gamma,
                          const Tensor<Real>& beta, BatchNormState<Real>& state,
                          BatchNormMode mode, BatchNormOptions options) {
  require_rank4(input, "batch_norm2d");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  for (const Tensor<Real>* t : std::initializer_list<const Tensor<Real>*>{
           &gamma, &beta, &state.running_mean, &state.running_var}) {
    if (t->rank() != 1 || t->dim(0) != channels) {
      throw ShapeError("batch_norm2d: parameter " + shape_string(t->shape()) +
                       " does not match input " + shape_string(input.shape()));
    }
  }
  const std::size_t count = batch * plane;
  const bool training = mode == BatchNormMode::train;
  if (training && count < 2) {
    throw ContractError("batch_norm2d: degenerate variance, train mode needs batch*H*W >= 2, got " +
                        shape_string(input.shape()));
  }

  std::vector<Real> mean(channels), inv_std(channels);
  const Real* in = input.data().data();
  for (std::size_t c = 0; c < channels; ++c) {
    if (training) {
      double s = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const Real* p = in + (n * channels + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const Real* p = in + (n * channels + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = p[j] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<Real>(mu);
      inv_std[c] = static_cast<Real>(1.0 / std::sqrt(var + options.eps));
      if (options.update_running_stats) {
        const double m = options.momentum;
        Real& rm = state.running_mean.mutable_data()[c];
        Real& rv = state.running_var.mutable_data()[c];
        const double unbiased = ss / static_cast<double>(count - 1);
        rm = static_cast<Real>((1.0 - m) * rm + m * mu);
        rv = static_cast<Real>((1.0 - m) * rv + m * unbiased);
      }
    } else {
      mean[c] = state.running_mean.data()[c];
      inv_std[c] = static_cast<Real>(
          1.0 / std::sqrt(static_cast<double>(state.running_var.data()[c]) + options.eps));
    }
  }

  std::vector<Real> xhat(input.numel());
  std::vector<Real> out(input.numel());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * plane;
      const Real g = gamma.data()[c], b = beta.data()[c];
      for (std::size_t j = 0; j < plane; ++j) {
        const Real xh = (in[base + j] - mean[c]) * inv_std[c];
        xhat[base + j] = xh;
        out[base + j] = g * xh + b;
      }
    }
  }
  Tensor<Real> result(input.shape(), std::move(out));
  detail::check_finite(result, "batch_norm2d");

  if (Tape<Real>* tape = detail::recording_tape<Real>({&input, &gamma, &beta})) {
    auto si = input.storage(), sg = gamma.storage(), sb = beta.storage(), so = result.storage();
    tape->record("batch_norm2d", {&input, &gamma, &beta}, result,
                 [si, sg, sb, so, xhat = std::move(xhat), inv_std = std::move(inv_std), batch,
                  channels, plane, count, training] {
      const Real* dy = so->grad.data();
      std::vector<Real> dgamma(channels, Real(0)), dbeta(channels, Real(0));
      std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t base = (n * channels + c) * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            sum_dy[c] += dy[base + j];
            sum_dy_xhat[c] += static_cast<double>(dy[base + j]) * xhat[base + j];
          }
        }
      }
      for (std::size_t c = 0; c < channels; ++c) {
        dgamma[c] = static_cast<Real>(sum_dy_xhat[c]);
        dbeta[c] = static_cast<Real>(sum_dy[c]);
      }
      if (si->requires_grad) {
        std::vector<Real> dx(si->data.size());
        const double m = static_cast<double>(count);
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (n * channels + c) * plane;
            const double scale = static_cast<double>(sg->data[c]) * inv_std[c];
            for (std::size_t j = 0; j < plane; ++j) {
              if (training) {
                dx[base + j] = static_cast<Real>(
                    scale / m * (m * dy[base + j] - sum_dy[c] - xhat[base + j] * sum_dy_xhat[c]));
              } else {
                dx[base + j] = static_cast<Real>(scale * dy[base + j]);
              }
            }
          }
        }
        accumulate(si, dx);
      }
      accumulate(sg, dgamma);
      accumulate(sb, dbeta);
    });
  }
  return result;
}

#define UNETSEG_INSTANTIATE_OPS(Real)                                                         \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                        \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                        \
  template Tensor<Real> sum(const Tensor<Real>&);                                             \
  template Tensor<Real> relu(const Tensor<Real>&);                                            \
  template Tensor<Real> sigmoid(const Tensor<Real>&);                                         \
  template Real stable_sigmoid(Real);                                                         \
  template Tensor<Real> conv2d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, \
                               Conv2dOptions);                                                \
  template Tensor<Real> max_pool2d(const Tensor<Real>&, std::size_t);                         \
  template Tensor<Real> upsample_nearest2x(const Tensor<Real>&);                              \
  template Tensor<Real> concat_channels(const Tensor<Real>&, const Tensor<Real>&);            \
  template Tensor<Real> batch_norm2d(const Tensor<Real>&, const Tensor<Real>&,                \
                                     const Tensor<Real>&, BatchNormState<Real>&,              \
                                     BatchNormMode, BatchNormOptions);

UNETSEG_INSTANTIATE_OPS(float)
UNETSEG_INSTANTIATE_OPS(double)

}  // namespace unetseg::ops
