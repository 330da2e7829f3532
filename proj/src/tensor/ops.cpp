#include "ilgnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

namespace ilgnet {
namespace {

// Accumulation type: at least double, wider when T is.
template <typename T>
using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                     to_string(shape));
  }
}

std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0 || kernel == 0) throw ShapeError("conv2d: kernel and stride must be positive");
  if (in + 2 * pad < kernel) {
    throw ShapeError("conv2d: non-positive output extent (input " + std::to_string(in) + ", kernel " +
                     std::to_string(kernel) + ", pad " + std::to_string(pad) + ")");
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t pool_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad, bool ceil_mode) {
  if (stride == 0 || kernel == 0) throw ShapeError("maxpool2d: kernel and stride must be positive");
  if (in == 0) throw ShapeError("maxpool2d: empty input");
  const std::size_t span = in + 2 * pad;
  if (span < kernel) {
    if (!ceil_mode) throw ShapeError("maxpool2d: input extent smaller than kernel");
    return 1;
  }
  std::size_t out = ceil_mode ? (span - kernel + stride - 1) / stride + 1 : (span - kernel) / stride + 1;
  // The last window has to start inside the input or its leading pad.
  if (pad > 0 && (out - 1) * stride >= in + pad) --out;
  return out;
}

// Unfolds one sample (C,H,W) into a (C*kh*kw, OH*OW) matrix.
template <typename T>
void im2col(const T* image, const ConvSpec& s, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow, T* col) {
  const auto ph = static_cast<std::ptrdiff_t>(s.pad_h);
  const auto pw = static_cast<std::ptrdiff_t>(s.pad_w);
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
        T* row = col + ((c * s.kernel_h + ki) * s.kernel_w + kj) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * s.stride_h + ki) - ph;
          T* out = row + y * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(out, out + ow, T{0});
            continue;
          }
          const T* src = image + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * s.stride_w + kj) - pw;
            out[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvSpec& s, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow, T* image) {
  const auto ph = static_cast<std::ptrdiff_t>(s.pad_h);
  const auto pw = static_cast<std::ptrdiff_t>(s.pad_w);
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
        const T* row = col + ((c * s.kernel_h + ki) * s.kernel_w + kj) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * s.stride_h + ki) - ph;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = image + (c * h + static_cast<std::size_t>(iy)) * w;
          const T* in = row + y * ow;
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * s.stride_w + kj) - pw;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += in[x];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvSpec& s) {
  return s.kernel_h == 1 && s.kernel_w == 1 && s.stride_h == 1 && s.stride_w == 1 && s.pad_h == 0 && s.pad_w == 0;
}

template <typename T>
void check_conv_args(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, const ConvSpec& spec) {
  require_rank(input.shape(), 4, "conv2d input");
  if (input.dim(1) != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  if (weights.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight shape " + to_string(weights.shape()) + " does not match spec " +
                     to_string(spec.weight_shape()));
  }
  if (bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError("conv2d: bias shape " + to_string(bias.shape()) + " does not match out_channels");
  }
}

}  // namespace

std::size_t ConvSpec::out_h(std::size_t h) const { return conv_extent(h, kernel_h, stride_h, pad_h); }
std::size_t ConvSpec::out_w(std::size_t w) const { return conv_extent(w, kernel_w, stride_w, pad_w); }
std::size_t PoolSpec::out_h(std::size_t h) const { return pool_extent(h, kernel_h, stride_h, pad_h, ceil_mode); }
std::size_t PoolSpec::out_w(std::size_t w) const { return pool_extent(w, kernel_w, stride_w, pad_w, ceil_mode); }

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         const ConvSpec& spec) {
  check_conv_args(input, weights, bias, spec);
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  const std::size_t patch = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const std::size_t plane = oh * ow;

  Tensor<T> output({n, spec.out_channels, oh, ow});
  ConstMatrixMap<T> wmat(weights.raw(), spec.out_channels, patch);
  const bool pointwise = is_pointwise(spec);
  std::vector<T> col(pointwise ? 0 : patch * plane);

  for (std::size_t i = 0; i < n; ++i) {
    const T* image = input.raw() + i * spec.in_channels * h * w;
    const T* col_ptr = image;
    if (!pointwise) {
      im2col(image, spec, h, w, oh, ow, col.data());
      col_ptr = col.data();
    }
    MatrixMap<T> out(output.raw() + i * spec.out_channels * plane, spec.out_channels, plane);
    out.noalias() = wmat * ConstMatrixMap<T>(col_ptr, patch, plane);
    for (std::size_t o = 0; o < spec.out_channels; ++o) out.row(o).array() += bias[o];
  }
  return output;
}

template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_output,
                          const ConvSpec& spec, Tensor<T>& weight_grad, Tensor<T>& bias_grad) {
  check_conv_args(input, weights, bias_grad, spec);
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  if (grad_output.shape() != Shape{n, spec.out_channels, oh, ow}) {
    throw ShapeError("conv2d backward: gradient shape " + to_string(grad_output.shape()) + " mismatch");
  }
  if (weight_grad.shape() != weights.shape()) throw ShapeError("conv2d backward: weight_grad shape mismatch");
  const std::size_t patch = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const std::size_t plane = oh * ow;

  Tensor<T> grad_input(input.shape());
  ConstMatrixMap<T> wmat(weights.raw(), spec.out_channels, patch);
  MatrixMap<T> dw(weight_grad.raw(), spec.out_channels, patch);
  const bool pointwise = is_pointwise(spec);
  std::vector<T> col(pointwise ? 0 : patch * plane);
  std::vector<T> dcol(pointwise ? 0 : patch * plane);

  for (std::size_t i = 0; i < n; ++i) {
    const T* image = input.raw() + i * spec.in_channels * h * w;
    ConstMatrixMap<T> dy(grad_output.raw() + i * spec.out_channels * plane, spec.out_channels, plane);
    for (std::size_t o = 0; o < spec.out_channels; ++o) bias_grad[o] += dy.row(o).sum();

    T* dimage = grad_input.raw() + i * spec.in_channels * h * w;
    if (pointwise) {
      dw.noalias() += dy * ConstMatrixMap<T>(image, patch, plane).transpose();
      MatrixMap<T>(dimage, patch, plane).noalias() = wmat.transpose() * dy;
    } else {
      im2col(image, spec, h, w, oh, ow, col.data());
      dw.noalias() += dy * ConstMatrixMap<T>(col.data(), patch, plane).transpose();
      MatrixMap<T>(dcol.data(), patch, plane).noalias() = wmat.transpose() * dy;
      col2im(dcol.data(), spec, h, w, oh, ow, dimage);
    }
  }
#ifdef ILGNET_SABOTAGE_CONV_BACKWARD
  // Test hook: a deliberately wrong input gradient the gradient checker must catch.
  for (auto& v : grad_input.data()) v = -v;
#endif
  return grad_input;
}

// ---------------------------------------------------------------------------

template <typename T>
MaxPoolResult<T> maxpool2d_forward(const Tensor<T>& input, const PoolSpec& spec) {
  require_rank(input.shape(), 4, "maxpool2d input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);

  MaxPoolResult<T> result{Tensor<T>({n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
  std::size_t out_idx = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(y * spec.stride_h) - static_cast<std::ptrdiff_t>(spec.pad_h);
      const std::size_t ys = static_cast<std::size_t>(std::max<std::ptrdiff_t>(y0, 0));
      const std::size_t ye = static_cast<std::size_t>(
          std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(spec.kernel_h), static_cast<std::ptrdiff_t>(h)));
      for (std::size_t x = 0; x < ow; ++x, ++out_idx) {
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(x * spec.stride_w) - static_cast<std::ptrdiff_t>(spec.pad_w);
        const std::size_t xs = static_cast<std::size_t>(std::max<std::ptrdiff_t>(x0, 0));
        const std::size_t xe = static_cast<std::size_t>(
            std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(spec.kernel_w), static_cast<std::ptrdiff_t>(w)));
        if (ys >= ye || xs >= xe) throw ShapeError("maxpool2d: empty window");
        std::size_t best = base + ys * w + xs;
        for (std::size_t iy = ys; iy < ye; ++iy) {
          for (std::size_t ix = xs; ix < xe; ++ix) {
            const std::size_t idx = base + iy * w + ix;
            if (input[idx] > input[best]) best = idx;
          }
        }
        result.output[out_idx] = input[best];
        result.argmax[out_idx] = best;
      }
    }
  }
  return result;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                             const Tensor<T>& grad_output) {
  if (argmax.size() != grad_output.size()) throw ShapeError("maxpool2d backward: argmax/gradient size mismatch");
  Tensor<T> grad_input(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad_input[argmax[i]] += grad_output[i];
  return grad_input;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& input) {
  require_rank(input.shape(), 4, "global_avg_pool input");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  Tensor<T> output({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    Acc<T> sum = 0;
    const T* src = input.raw() + i * plane;
    for (std::size_t k = 0; k < plane; ++k) sum += src[k];
    output[i] = static_cast<T>(sum / static_cast<Acc<T>>(plane));
  }
  return output;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_output) {
  require_rank(input_shape, 4, "global_avg_pool backward");
  const std::size_t n = input_shape[0], c = input_shape[1], plane = input_shape[2] * input_shape[3];
  if (grad_output.shape() != Shape{n, c}) throw ShapeError("global_avg_pool backward: gradient shape mismatch");
  Tensor<T> grad_input(input_shape);
  const T scale = T{1} / static_cast<T>(plane);
  for (std::size_t i = 0; i < n * c; ++i) {
    T* dst = grad_input.raw() + i * plane;
    std::fill(dst, dst + plane, grad_output[i] * scale);
  }
  return grad_input;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = v < T{0} ? T{0} : v;  // NaN passes through
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output) {
  if (input.shape() != grad_output.shape()) throw ShapeError("relu backward: shape mismatch");
  Tensor<T> grad = grad_output;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > T{0})) grad[i] = T{0};
  }
  return grad;
}

// ---------------------------------------------------------------------------

namespace {

struct ChannelLayout {
  std::size_t batch, channels, plane;
};

ChannelLayout channel_layout(const Shape& shape) {
  if (shape.size() == 4) return {shape[0], shape[1], shape[2] * shape[3]};
  if (shape.size() == 2) return {shape[0], shape[1], 1};
  throw ShapeError("batchnorm: expected (N,C,H,W) or (N,C), got " + to_string(shape));
}

template <typename T>
void check_affine(const ChannelLayout& l, const Tensor<T>& gamma, const Tensor<T>& beta) {
  if (gamma.shape() != Shape{l.channels} || beta.shape() != Shape{l.channels}) {
    throw ShapeError("batchnorm: gamma/beta must have shape (" + std::to_string(l.channels) + ")");
  }
}

template <typename T>
Tensor<T> normalize_with(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                         const std::vector<Acc<T>>& mean, const std::vector<T>& inv_std, BatchNormCache<T>* cache,
                         Mode mode) {
  const auto l = channel_layout(input.shape());
  Tensor<T> out(input.shape());
  Tensor<T> x_hat(cache ? input.shape() : Shape{1});
  for (std::size_t n = 0; n < l.batch; ++n) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t base = (n * l.channels + c) * l.plane;
      for (std::size_t k = 0; k < l.plane; ++k) {
        const T xh = static_cast<T>((static_cast<Acc<T>>(input[base + k]) - mean[c]) * inv_std[c]);
        if (cache) x_hat[base + k] = xh;
        out[base + k] = gamma[c] * xh + beta[c];
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(x_hat);
    cache->inv_std = inv_std;
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const BatchNormState<T>& state, BatchNormCache<T>* cache) {
  const auto l = channel_layout(input.shape());
  check_affine(l, gamma, beta);
  if (state.running_mean.size() != l.channels || state.running_var.size() != l.channels) {
    throw ShapeError("batchnorm: running statistics do not match channel count");
  }
  std::vector<Acc<T>> mean(l.channels);
  std::vector<T> inv_std(l.channels);
  for (std::size_t c = 0; c < l.channels; ++c) {
    mean[c] = state.running_mean[c];
    inv_std[c] = static_cast<T>(1 / std::sqrt(static_cast<Acc<T>>(state.running_var[c]) + state.epsilon));
  }
  return normalize_with(input, gamma, beta, mean, inv_std, cache, Mode::infer);
}

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                            BatchNormState<T>& state, Mode mode, BatchNormCache<T>* cache) {
  if (mode == Mode::infer) return batchnorm_infer(input, gamma, beta, state, cache);

  const auto l = channel_layout(input.shape());
  check_affine(l, gamma, beta);
  const std::size_t count = l.batch * l.plane;
  if (count < 2) {
    throw ShapeError("batchnorm: train mode needs at least 2 values per channel, got " + std::to_string(count));
  }
  using A = Acc<T>;
  std::vector<A> mean(l.channels, 0), var(l.channels, 0);
  for (std::size_t c = 0; c < l.channels; ++c) {
    A sum = 0;
    for (std::size_t n = 0; n < l.batch; ++n) {
      const T* src = input.raw() + (n * l.channels + c) * l.plane;
      for (std::size_t k = 0; k < l.plane; ++k) sum += src[k];
    }
    mean[c] = sum / static_cast<A>(count);
    A sq = 0;
    for (std::size_t n = 0; n < l.batch; ++n) {
      const T* src = input.raw() + (n * l.channels + c) * l.plane;
      for (std::size_t k = 0; k < l.plane; ++k) {
        const A d = src[k] - mean[c];
        sq += d * d;
      }
    }
    var[c] = sq / static_cast<A>(count);
  }

  std::vector<T> inv_std(l.channels);
  const A m = state.momentum;
  const A unbias = static_cast<A>(count) / static_cast<A>(count - 1);
  for (std::size_t c = 0; c < l.channels; ++c) {
    inv_std[c] = static_cast<T>(1 / std::sqrt(var[c] + state.epsilon));
    state.running_mean[c] = static_cast<T>(m * state.running_mean[c] + (1 - m) * mean[c]);
    state.running_var[c] = static_cast<T>(m * state.running_var[c] + (1 - m) * var[c] * unbias);
  }
  return normalize_with(input, gamma, beta, mean, inv_std, cache, Mode::train);
}

template <typename T>
Tensor<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& grad_output,
                             Tensor<T>& gamma_grad, Tensor<T>& beta_grad) {
  const auto l = channel_layout(grad_output.shape());
  if (cache.normalized.shape() != grad_output.shape()) throw ShapeError("batchnorm backward: missing cache");
  const Tensor<T>& x_hat = cache.normalized;
  Tensor<T> grad_input(grad_output.shape());
  using A = Acc<T>;
  const A count = static_cast<A>(l.batch * l.plane);

  for (std::size_t c = 0; c < l.channels; ++c) {
    A sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t n = 0; n < l.batch; ++n) {
      const std::size_t base = (n * l.channels + c) * l.plane;
      for (std::size_t k = 0; k < l.plane; ++k) {
        sum_dy += grad_output[base + k];
        sum_dy_xhat += static_cast<A>(grad_output[base + k]) * x_hat[base + k];
      }
    }
    gamma_grad[c] += static_cast<T>(sum_dy_xhat);
    beta_grad[c] += static_cast<T>(sum_dy);

    const A scale = static_cast<A>(gamma[c]) * cache.inv_std[c];
    for (std::size_t n = 0; n < l.batch; ++n) {
      const std::size_t base = (n * l.channels + c) * l.plane;
      for (std::size_t k = 0; k < l.plane; ++k) {
        const A dy = grad_output[base + k];
        if (cache.mode == Mode::train) {
          grad_input[base + k] =
              static_cast<T>(scale * (dy - sum_dy / count - x_hat[base + k] * sum_dy_xhat / count));
        } else {
          grad_input[base + k] = static_cast<T>(scale * dy);
        }
      }
    }
  }
  return grad_input;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_forward(std::span<const Tensor<T>* const> inputs) {
  if (inputs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = inputs.front()->shape();
  if (first.size() < 2) throw ShapeError("concat: inputs must have rank >= 2");
  std::size_t axis_total = 0;
  for (const auto* t : inputs) {
    const Shape& s = t->shape();
    bool ok = s.size() == first.size() && s[0] == first[0];
    for (std::size_t d = 2; ok && d < s.size(); ++d) ok = s[d] == first[d];
    if (!ok) throw ShapeError("concat: mismatched extents " + to_string(s) + " vs " + to_string(first));
    axis_total += s[1];
  }
  Shape out_shape = first;
  out_shape[1] = axis_total;
  const std::size_t inner = element_count(first) / (first[0] * first[1]);
  Tensor<T> out(out_shape);
  for (std::size_t n = 0; n < first[0]; ++n) {
    T* dst = out.raw() + n * axis_total * inner;
    for (const auto* t : inputs) {
      const std::size_t chunk = t->dim(1) * inner;
      const T* src = t->raw() + n * chunk;
      dst = std::copy(src, src + chunk, dst);
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> concat_backward(const Tensor<T>& grad_output, std::span<const Shape> input_shapes) {
  std::vector<Tensor<T>> grads;
  grads.reserve(input_shapes.size());
  std::size_t axis_total = 0;
  for (const auto& s : input_shapes) {
    grads.emplace_back(s);
    axis_total += s.at(1);
  }
  if (input_shapes.empty() || grad_output.dim(1) != axis_total) {
    throw ShapeError("concat backward: gradient extent does not match inputs");
  }
  const std::size_t batch = grad_output.dim(0);
  const std::size_t inner = grad_output.size() / (batch * axis_total);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* src = grad_output.raw() + n * axis_total * inner;
    for (auto& g : grads) {
      const std::size_t chunk = g.dim(1) * inner;
      std::copy(src, src + chunk, g.raw() + n * chunk);
      src += chunk;
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  require_rank(input.shape(), 2, "linear input");
  require_rank(weights.shape(), 2, "linear weights");
  const std::size_t n = input.dim(0), d_in = input.dim(1), d_out = weights.dim(0);
  if (weights.dim(1) != d_in) {
    throw ShapeError("linear: input has " + std::to_string(d_in) + " features, weights expect " +
                     std::to_string(weights.dim(1)));
  }
  if (bias.shape() != Shape{d_out}) throw ShapeError("linear: bias shape mismatch");
  Tensor<T> out({n, d_out});
  // One matrix-vector product per sample: a batched GEMM picks kernels by N,
  // which would make a sample's logits depend on the batch it sits in.
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  ConstMatrixMap<T> w(weights.raw(), d_out, d_in);
  Eigen::Map<const Vec> b(bias.raw(), d_out);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Map<Vec> y(out.raw() + i * d_out, d_out);
    y.noalias() = w * Eigen::Map<const Vec>(input.raw() + i * d_in, d_in);
    y += b;
  }
  return out;
}

template <typename T>
Tensor<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_output,
                          Tensor<T>& weight_grad, Tensor<T>& bias_grad) {
  const std::size_t n = input.dim(0), d_in = input.dim(1), d_out = weights.dim(0);
  if (grad_output.shape() != Shape{n, d_out}) throw ShapeError("linear backward: gradient shape mismatch");
  ConstMatrixMap<T> x(input.raw(), n, d_in);
  ConstMatrixMap<T> dy(grad_output.raw(), n, d_out);
  MatrixMap<T>(weight_grad.raw(), d_out, d_in).noalias() += dy.transpose() * x;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_grad.raw(), d_out) += dy.colwise().sum();
  Tensor<T> grad_input({n, d_in});
  MatrixMap<T>(grad_input.raw(), n, d_in).noalias() = dy * ConstMatrixMap<T>(weights.raw(), d_out, d_in);
  return grad_input;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> probs(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.raw() + i * k;
    const Acc<T> zmax = *std::max_element(z, z + k);
    Acc<T> total = 0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(z[j] - zmax);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = static_cast<T>(std::exp(z[j] - zmax) / total);
  }
  return probs;
}

template <typename T>
SoftmaxXent<T> softmax_xent_forward(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_xent logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_xent: label count does not match batch size");
  SoftmaxXent<T> result{softmax(logits), 0.0};
  Acc<T> loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ShapeError("softmax_xent: label " + std::to_string(labels[i]) + " out of range [0," + std::to_string(k) + ")");
    }
    const T* z = logits.raw() + i * k;
    const Acc<T> zmax = *std::max_element(z, z + k);
    Acc<T> total = 0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(z[j] - zmax);
    loss += std::log(total) - (z[labels[i]] - zmax);
  }
  result.mean_loss = static_cast<double>(loss / static_cast<Acc<T>>(n));
  return result;
}

template <typename T>
Tensor<T> softmax_xent_backward(const Tensor<T>& probabilities, std::span<const int> labels) {
  const std::size_t n = probabilities.dim(0), k = probabilities.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_xent backward: label count mismatch");
  Tensor<T> grad = probabilities;
  const T inv_n = T{1} / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    grad[i * k + static_cast<std::size_t>(labels[i])] -= T{1};
    for (std::size_t j = 0; j < k; ++j) grad[i * k + j] *= inv_n;
  }
  return grad;
}

// ---------------------------------------------------------------------------

#define ILGNET_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&);    \
  template Tensor<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&,    \
                                     Tensor<T>&, Tensor<T>&);                                                  \
  template MaxPoolResult<T> maxpool2d_forward(const Tensor<T>&, const PoolSpec&);                              \
  template Tensor<T> maxpool2d_backward(const Shape&, std::span<const std::size_t>, const Tensor<T>&);         \
  template Tensor<T> global_avg_pool_forward(const Tensor<T>&);                                                \
  template Tensor<T> global_avg_pool_backward(const Shape&, const Tensor<T>&);                                 \
  template Tensor<T> relu_forward(const Tensor<T>&);                                                           \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> batchnorm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                   \
                                       BatchNormState<T>&, Mode, BatchNormCache<T>*);                          \
  template Tensor<T> batchnorm_infer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                     \
                                     const BatchNormState<T>&, BatchNormCache<T>*);                            \
  template Tensor<T> batchnorm_backward(const BatchNormCache<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                        Tensor<T>&, Tensor<T>&);                                               \
  template Tensor<T> concat_forward(std::span<const Tensor<T>* const>);                                        \
  template std::vector<Tensor<T>> concat_backward(const Tensor<T>&, std::span<const Shape>);                   \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,         \
                                     Tensor<T>&);                                                              \
  template Tensor<T> softmax(const Tensor<T>&);                                                                \
  template SoftmaxXent<T> softmax_xent_forward(const Tensor<T>&, std::span<const int>);                        \
  template Tensor<T> softmax_xent_backward(const Tensor<T>&, std::span<const int>);

ILGNET_INSTANTIATE_OPS(float)
ILGNET_INSTANTIATE_OPS(double)
// Extended precision backs the finite-difference side of the gradient checker.
ILGNET_INSTANTIATE_OPS(long double)

#undef ILGNET_INSTANTIATE_OPS

}  // namespace ilgnet
