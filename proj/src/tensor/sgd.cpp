#include "ilgnet/sgd.hpp"

namespace ilgnet {

template <typename T>
void sgd_step(std::span<Parameter<T>> params, const SgdHyper& hyper) {
  const T lr = static_cast<T>(hyper.lr);
  const T momentum = static_cast<T>(hyper.momentum);
  const T decay = static_cast<T>(hyper.weight_decay);
  for (auto& p : params) {
    if (!p.frozen) {
      auto value = p.value.data();
      auto grad = p.grad.data();
      auto buf = p.momentum_buffer.data();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const T g = grad[i] + decay * value[i];
        buf[i] = momentum * buf[i] + g;
        value[i] -= lr * buf[i];
      }
    }
    p.zero_grad();
  }
}

template void sgd_step(std::span<Parameter<float>>, const SgdHyper&);
template void sgd_step(std::span<Parameter<double>>, const SgdHyper&);

}  // namespace ilgnet
