#pragma once

#include <span>

#include "ilgnet/tensor.hpp"

namespace ilgnet {

struct SgdHyper {
  double lr = 0.0;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

// Caffe-style momentum SGD. For every unfrozen parameter:
//   g = grad + weight_decay * value;  buf = momentum * buf + g;  value -= lr * buf
// Gradients of all parameters are cleared afterwards.
template <typename T>
void sgd_step(std::span<Parameter<T>> params, const SgdHyper& hyper);

}  // namespace ilgnet
