#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ilgnet/tensor.hpp"

namespace ilgnet {

enum class Mode { train, infer };

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;

  static ConvSpec square(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                         std::size_t pad = 0) {
    return {in, out, kernel, kernel, stride, stride, pad, pad};
  }

  // Throws ShapeError when the window does not fit at least once.
  std::size_t out_h(std::size_t h) const;
  std::size_t out_w(std::size_t w) const;
  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
};

struct PoolSpec {
  std::size_t kernel_h = 2, kernel_w = 2;
  std::size_t stride_h = 2, stride_w = 2;
  std::size_t pad_h = 0, pad_w = 0;
  bool ceil_mode = false;

  static PoolSpec square(std::size_t kernel, std::size_t stride, bool ceil_mode = false,
                         std::size_t pad = 0) {
    return {kernel, kernel, stride, stride, pad, pad, ceil_mode};
  }

  std::size_t out_h(std::size_t h) const;
  std::size_t out_w(std::size_t w) const;
};

// --- convolution (cross-correlation, zero padding) ---------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         const ConvSpec& spec);

// Returns the input gradient and accumulates into weight_grad / bias_grad.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_output,
                          const ConvSpec& spec, Tensor<T>& weight_grad, Tensor<T>& bias_grad);

// --- max pooling -----------------------------------------------------------

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  // Flat input index of the selected cell for every output cell.
  std::vector<std::size_t> argmax;
};

// Padded cells never win; windows are clipped to the input. Ties go to the
// first (lowest) index in row-major window order.
template <typename T>
MaxPoolResult<T> maxpool2d_forward(const Tensor<T>& input, const PoolSpec& spec);

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                             const Tensor<T>& grad_output);

// --- global average pooling (N,C,H,W) -> (N,C) -------------------------------

template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& input);

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_output);

// --- relu --------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

// Gradient passes only where input > 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output);

// --- batch normalization (per channel over N,H,W) ----------------------------

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.9);

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean({channels}, T{0}), running_var({channels}, T{1}) {}
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::infer;
  Tensor<T> normalized;          // x_hat
  std::vector<T> inv_std;        // per channel
};

// Accepts (N,C,H,W) or (N,C). In train mode the running statistics are
// updated as running = momentum * running + (1 - momentum) * batch, with the
// unbiased batch variance.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                            BatchNormState<T>& state, Mode mode, BatchNormCache<T>* cache = nullptr);

// Same as batchnorm_forward in infer mode, without touching the state.
template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const BatchNormState<T>& state, BatchNormCache<T>* cache = nullptr);

template <typename T>
Tensor<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                             const Tensor<T>& grad_output, Tensor<T>& gamma_grad, Tensor<T>& beta_grad);

// --- concatenation along axis 1 (channels or features) ----------------------

template <typename T>
Tensor<T> concat_forward(std::span<const Tensor<T>* const> inputs);

template <typename T>
std::vector<Tensor<T>> concat_backward(const Tensor<T>& grad_output, std::span<const Shape> input_shapes);

// --- fully connected: y = x W^T + b, x is (N, D_in), W is (D_out, D_in) -----

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);

template <typename T>
Tensor<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_output,
                          Tensor<T>& weight_grad, Tensor<T>& bias_grad);

// --- softmax + cross entropy -------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

template <typename T>
struct SoftmaxXent {
  Tensor<T> probabilities;
  double mean_loss = 0.0;
};

template <typename T>
SoftmaxXent<T> softmax_xent_forward(const Tensor<T>& logits, std::span<const int> labels);

// (p - onehot) / N
template <typename T>
Tensor<T> softmax_xent_backward(const Tensor<T>& probabilities, std::span<const int> labels);

// --- parameter-level conveniences -------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Parameter<T>& weights, const Parameter<T>& bias,
                 const ConvSpec& spec) {
  return conv2d_forward(input, weights.value, bias.value, spec);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Parameter<T>& weights, const Parameter<T>& bias) {
  return linear_forward(input, weights.value, bias.value);
}

}  // namespace ilgnet
