#include "ilgnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ilgnet/init.hpp"

namespace ilgnet {

std::string_view variant_name(VariantKind kind) {
  switch (kind) {
    case VariantKind::ilgnet_inc_v1_bn:
      return "ilgnet-inc-v1-bn";
    case VariantKind::third_googlenet_v1_bn:
      return "third-googlenet-v1-bn";
    case VariantKind::ilgnet_without_inc:
      return "ilgnet-without-inc";
  }
  return "unknown";
}

VariantKind parse_variant(std::string_view name) {
  for (auto kind : {VariantKind::ilgnet_inc_v1_bn, VariantKind::third_googlenet_v1_bn, VariantKind::ilgnet_without_inc}) {
    if (name == variant_name(kind)) return kind;
  }
  throw ShapeError("invalid variant '" + std::string(name) +
                   "' (expected ilgnet-inc-v1-bn, third-googlenet-v1-bn or ilgnet-without-inc)");
}

void ArchVariant::validate() const {
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) {
    throw ShapeError("width_multiplier must be in (0, 1], got " + std::to_string(width_multiplier));
  }
  if (input_side == 0) throw ShapeError("input_side must be positive");
}

std::size_t ArchVariant::scale(std::size_t channels) const {
  // The small slack keeps products such as 0.3 * 10 from rounding up past an integer.
  const double scaled = std::ceil(width_multiplier * static_cast<double>(channels) - 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(scaled));
}

InceptionSpec InceptionSpec::scaled(const ArchVariant& v) const {
  return {v.scale(c1x1), v.scale(c3x3_reduce), v.scale(c3x3), v.scale(c5x5_reduce), v.scale(c5x5), v.scale(pool_proj)};
}

std::string tap_label(Tap tap) {
  return tap == Tap::concat ? "concat" : std::to_string(static_cast<int>(tap));
}

namespace {

std::size_t tap_slot(Tap tap) { return static_cast<std::size_t>(tap) - 1; }

std::uint64_t derive_seed(std::uint64_t seed, std::size_t index) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename T>
void accumulate(Tensor<T>& into, const Tensor<T>& grad) {
  if (into.empty()) {
    into = grad;
    return;
  }
  if (into.shape() != grad.shape()) throw ShapeError("backward: gradient shape mismatch");
  auto dst = into.data();
  auto src = grad.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Shape with_batch(std::size_t n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// construction

template <typename T>
std::size_t BasicNetwork<T>::push(Layer layer) {
  for (auto in : layer.inputs) {
    if (in >= layers_.size()) throw ShapeError("layer '" + layer.name + "' references an unknown input");
  }
  if (find_layer(layer.name)) throw ShapeError("duplicate layer name '" + layer.name + "'");
  layers_.push_back(std::move(layer));
  return layers_.size() - 1;
}

template <typename T>
std::size_t BasicNetwork<T>::add_parameter(std::string name, Tensor<T> value) {
  params_.emplace_back(std::move(name), std::move(value));
  return params_.size() - 1;
}

template <typename T>
std::size_t BasicNetwork<T>::add_input(Shape per_sample) {
  if (!layers_.empty()) throw ShapeError("input must be the first layer");
  Layer l;
  l.name = "input";
  l.kind = LayerKind::input;
  l.shape = std::move(per_sample);
  return push(std::move(l));
}

template <typename T>
std::size_t BasicNetwork<T>::add_conv(std::string name, std::size_t input, std::size_t out_channels, std::size_t kernel,
                                      std::size_t stride, std::size_t pad, std::uint64_t seed, std::string block,
                                      unsigned depth) {
  const Shape& in = layers_.at(input).shape;
  if (in.size() != 3) throw ShapeError("conv '" + name + "' needs a spatial input");
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::conv;
  l.inputs = {input};
  l.conv = ConvSpec::square(in[0], out_channels, kernel, stride, pad);
  l.shape = {out_channels, l.conv.out_h(in[1]), l.conv.out_w(in[2])};
  l.block = std::move(block);
  l.depth = depth;
  l.weight = add_parameter(l.name + "/weight", xavier_init(l.conv, derive_seed(seed, params_.size())).template cast<T>());
  l.bias = add_parameter(l.name + "/bias", Tensor<T>({out_channels}));
  return push(std::move(l));
}

template <typename T>
std::size_t BasicNetwork<T>::add_batchnorm(std::string name, std::size_t input) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::batchnorm;
  l.inputs = {input};
  l.shape = layers_.at(input).shape;
  const std::size_t channels = l.shape[0];
  l.weight = add_parameter(l.name + "/gamma", Tensor<T>({channels}, T{1}));
  l.bias = add_parameter(l.name + "/beta", Tensor<T>({channels}));
  bn_states_.emplace_back(channels);
  l.bn_state = bn_states_.size() - 1;
  return push(std::move(l));
}

template <typename T>
std::size_t BasicNetwork<T>::add_relu(std::string name, std::size_t input) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::relu;
  l.inputs = {input};
  l.shape = layers_.at(input).shape;
  return push(std::move(l));
}

template <typename T>
std::size_t BasicNetwork<T>::add_maxpool(std::string name, std::size_t input, PoolSpec spec, bool backbone) {
  const Shape& in = layers_.at(input).shape;
  if (in.size() != 3) throw ShapeError("maxpool '" + name + "' needs a spatial input");
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::maxpool;
  l.inputs = {input};
  l.pool = spec;
  l.shape = {in[0], spec.out_h(in[1]), spec.out_w(in[2])};
  l.backbone_pool = backbone;
  return push(std::move(l));
}

template <typename T>
std::size_t BasicNetwork<T>::add_global_avg_pool(std::string name, std::size_t input, bool backbone) {
  const Shape& in = layers_.at(input).shape;
  if (in.size() != 3) throw ShapeError("global_avg_pool '" + name + "' needs a spatial input");
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::global_avg_pool;
  l.inputs = {input};
  l.shape = {in[0]};
  l.backbone_pool = backbone;
  return push(std::move(l));
}

template <typename T>
std::size_t BasicNetwork<T>::add_linear(std::string name, std::size_t input, std::size_t out_features,
                                        std::uint64_t seed, std::string block) {
  const Shape& in = layers_.at(input).shape;
  if (in.size() != 1) throw ShapeError("linear '" + name + "' needs a vector input");
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::linear;
  l.inputs = {input};
  l.shape = {out_features};
  l.block = std::move(block);
  l.depth = 1;
  l.weight = add_parameter(l.name + "/weight",
                           xavier_init({out_features, in[0]}, in[0], out_features, derive_seed(seed, params_.size()))
                               .template cast<T>());
  l.bias = add_parameter(l.name + "/bias", Tensor<T>({out_features}));
  return push(std::move(l));
}

template <typename T>
std::size_t BasicNetwork<T>::add_concat(std::string name, std::vector<std::size_t> inputs) {
  if (inputs.empty()) throw ShapeError("concat '" + name + "' needs inputs");
  Shape shape = layers_.at(inputs.front()).shape;
  shape[0] = 0;
  for (auto in : inputs) {
    const Shape& s = layers_.at(in).shape;
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1)) {
      throw ShapeError("concat '" + name + "': mismatched input extents " + to_string(s));
    }
    shape[0] += s[0];
  }
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::concat;
  l.inputs = std::move(inputs);
  l.shape = std::move(shape);
  return push(std::move(l));
}

template <typename T>
void BasicNetwork<T>::set_tap(Tap tap, std::size_t layer) {
  if (layer >= layers_.size()) throw ShapeError("tap references an unknown layer");
  taps_[tap_slot(tap)] = layer;
}

// ---------------------------------------------------------------------------
// execution

template <typename T>
ForwardPass<T> BasicNetwork<T>::run(const Tensor<T>& batch, Mode mode, std::vector<BatchNormState<T>>* states) const {
  if (layers_.empty()) throw ShapeError("network has no layers");
  const Shape expected = with_batch(batch.rank() > 0 ? batch.dim(0) : 0, layers_.front().shape);
  if (batch.rank() != 4 || batch.shape() != expected) {
    throw ShapeError("network input must be (N," + std::to_string(layers_.front().shape[0]) + "," +
                     std::to_string(layers_.front().shape[1]) + "," + std::to_string(layers_.front().shape[2]) +
                     "), got " + to_string(batch.shape()));
  }

  ForwardPass<T> pass;
  pass.mode = mode;
  pass.outputs.resize(layers_.size());
  pass.argmax.resize(layers_.size());
  if (mode == Mode::train) pass.bn_cache.resize(layers_.size());

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    auto in = [&](std::size_t k = 0) -> const Tensor<T>& { return pass.outputs[l.inputs[k]]; };
    switch (l.kind) {
      case LayerKind::input:
        pass.outputs[i] = batch;
        break;
      case LayerKind::conv:
        pass.outputs[i] = conv2d_forward(in(), params_[l.weight].value, params_[l.bias].value, l.conv);
        break;
      case LayerKind::batchnorm:
        if (mode == Mode::train) {
          pass.outputs[i] = batchnorm_forward(in(), params_[l.weight].value, params_[l.bias].value,
                                              (*states)[l.bn_state], Mode::train, &pass.bn_cache[i]);
        } else {
          pass.outputs[i] =
              batchnorm_infer(in(), params_[l.weight].value, params_[l.bias].value, bn_states_[l.bn_state]);
        }
        break;
      case LayerKind::relu:
        pass.outputs[i] = relu_forward(in());
        break;
      case LayerKind::maxpool: {
        auto r = maxpool2d_forward(in(), l.pool);
        pass.outputs[i] = std::move(r.output);
        if (mode == Mode::train) pass.argmax[i] = std::move(r.argmax);
        break;
      }
      case LayerKind::global_avg_pool:
        pass.outputs[i] = global_avg_pool_forward(in());
        break;
      case LayerKind::linear:
        pass.outputs[i] = linear_forward(in(), params_[l.weight].value, params_[l.bias].value);
        break;
      case LayerKind::concat: {
        std::vector<const Tensor<T>*> parts;
        for (std::size_t k = 0; k < l.inputs.size(); ++k) parts.push_back(&in(k));
        pass.outputs[i] = concat_forward<T>(parts);
        break;
      }
    }
  }
  return pass;
}

template <typename T>
ForwardPass<T> BasicNetwork<T>::forward(const Tensor<T>& batch) const {
  return run(batch, Mode::infer, nullptr);
}

template <typename T>
ForwardPass<T> BasicNetwork<T>::forward_train(const Tensor<T>& batch) {
  return run(batch, Mode::train, &bn_states_);
}

template <typename T>
void BasicNetwork<T>::backward(const ForwardPass<T>& pass, const Tensor<T>& grad_logits) {
  if (pass.mode != Mode::train || pass.outputs.size() != layers_.size()) {
    throw ShapeError("backward needs a train-mode forward pass of this network");
  }
  if (grad_logits.shape() != pass.logits().shape()) throw ShapeError("backward: logits gradient shape mismatch");

  std::vector<Tensor<T>> grads(layers_.size());
  grads.back() = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 1;) {
    if (grads[i].empty()) continue;
    const Layer& l = layers_[i];
    const Tensor<T>& dy = grads[i];
    const Tensor<T>& x = pass.outputs[l.inputs.front()];
    Tensor<T>& dx = grads[l.inputs.front()];
    switch (l.kind) {
      case LayerKind::input:
        break;
      case LayerKind::conv:
        accumulate(dx, conv2d_backward(x, params_[l.weight].value, dy, l.conv, params_[l.weight].grad,
                                       params_[l.bias].grad));
        break;
      case LayerKind::batchnorm:
        accumulate(dx, batchnorm_backward(pass.bn_cache[i], params_[l.weight].value, dy, params_[l.weight].grad,
                                          params_[l.bias].grad));
        break;
      case LayerKind::relu:
        accumulate(dx, relu_backward(x, dy));
        break;
      case LayerKind::maxpool:
        accumulate(dx, maxpool2d_backward(x.shape(), pass.argmax[i], dy));
        break;
      case LayerKind::global_avg_pool:
        accumulate(dx, global_avg_pool_backward(x.shape(), dy));
        break;
      case LayerKind::linear:
        accumulate(dx, linear_backward(x, params_[l.weight].value, dy, params_[l.weight].grad, params_[l.bias].grad));
        break;
      case LayerKind::concat: {
        std::vector<Shape> shapes;
        for (auto in : l.inputs) shapes.push_back(pass.outputs[in].shape());
        auto parts = concat_backward<T>(dy, shapes);
        for (std::size_t k = 0; k < l.inputs.size(); ++k) accumulate(grads[l.inputs[k]], parts[k]);
        break;
      }
    }
    grads[i] = Tensor<T>();  // release as soon as it is consumed
  }
}

template <typename T>
Tensor<T> BasicNetwork<T>::classify(const Tensor<T>& batch) const {
  return softmax(forward(batch).logits());
}

// ---------------------------------------------------------------------------
// introspection

template <typename T>
std::optional<std::size_t> BasicNetwork<T>::find_layer(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  return std::nullopt;
}

template <typename T>
std::optional<std::size_t> BasicNetwork<T>::tap_layer(Tap tap) const {
  const std::size_t idx = taps_[tap_slot(tap)];
  if (idx == kNoIndex) return std::nullopt;
  return idx;
}

template <typename T>
std::vector<std::string> BasicNetwork<T>::bn_state_names() const {
  std::vector<std::string> names(bn_states_.size());
  for (const auto& l : layers_) {
    if (l.kind == LayerKind::batchnorm) names[l.bn_state] = l.name;
  }
  return names;
}

template <typename T>
Shape BasicNetwork<T>::input_shape() const {
  if (layers_.empty()) throw ShapeError("network has no layers");
  return layers_.front().shape;
}

template <typename T>
void BasicNetwork<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
LayerCountReport BasicNetwork<T>::count_layers() const {
  LayerCountReport report;
  // block -> deepest conv/linear level, in first-seen order
  std::vector<std::pair<std::string, unsigned>> blocks;
  for (const auto& l : layers_) {
    if (l.kind == LayerKind::conv || l.kind == LayerKind::linear) {
      auto it = std::find_if(blocks.begin(), blocks.end(), [&](const auto& b) { return b.first == l.block; });
      if (it == blocks.end()) {
        blocks.emplace_back(l.block, l.depth);
      } else {
        it->second = std::max(it->second, l.depth);
      }
    }
    if (l.backbone_pool) {
      report.pooling_listing.push_back(
          {l.block.empty() ? l.name : l.block, l.name, "backbone pool (tap and in-module pools excluded)"});
    }
  }
  for (const auto& [block, depth] : blocks) {
    for (unsigned d = 1; d <= depth; ++d) {
      report.parameter_listing.push_back(
          {block, block + " level " + std::to_string(d), "deepest conv/linear level per block; BN not counted"});
    }
  }
  report.parameter_layers = report.parameter_listing.size();
  report.pooling_layers = report.pooling_listing.size();
  return report;
}

template <typename T>
template <typename U>
BasicNetwork<U> BasicNetwork<T>::converted() const {
  BasicNetwork<U> out(variant_);
  out.layers_ = layers_;
  out.taps_ = taps_;
  for (const auto& p : params_) {
    Parameter<U> q(p.name, p.value.template cast<U>());
    q.frozen = p.frozen;
    out.params_.push_back(std::move(q));
  }
  for (const auto& s : bn_states_) {
    BatchNormState<U> t(s.running_mean.size());
    t.running_mean = s.running_mean.template cast<U>();
    t.running_var = s.running_var.template cast<U>();
    t.epsilon = static_cast<U>(s.epsilon);
    t.momentum = static_cast<U>(s.momentum);
    out.bn_states_.push_back(std::move(t));
  }
  out.channel_means = channel_means;
  out.iteration = iteration;
  out.seed = seed;
  return out;
}

template class BasicNetwork<float>;
template class BasicNetwork<double>;
template BasicNetwork<double> BasicNetwork<float>::converted<double>() const;
template BasicNetwork<float> BasicNetwork<double>::converted<float>() const;

// ---------------------------------------------------------------------------
// feature taps

const Tensor32& FeatureTaps::at(Tap tap) const {
  for (const auto& f : features) {
    if (f.tap == tap) return f.value;
  }
  throw DataError("tap " + tap_label(tap) + " was not extracted");
}

FeatureTaps tap_features(const Network& net, const Tensor32& image, std::span<const Tap> requested) {
  if (image.rank() != 4 || image.dim(0) != 1) throw ShapeError("tap_features expects a single image (1,3,S,S)");
  std::vector<Tap> taps(requested.begin(), requested.end());
  if (taps.empty()) {
    for (Tap t : kAllTaps) {
      if (net.tap_layer(t)) taps.push_back(t);
    }
  }
  for (Tap t : taps) {
    if (!net.tap_layer(t)) {
      throw DataError("tap " + tap_label(t) + " does not exist in variant " +
                      std::string(variant_name(net.variant().kind)));
    }
  }

  const auto pass = net.forward(image);
  FeatureTaps result;
  for (Tap t : taps) {
    const Tensor32& out = pass.outputs[*net.tap_layer(t)];
    Shape per_sample(out.shape().begin() + 1, out.shape().end());
    result.features.push_back({t, out.reshaped(per_sample)});
  }
  const auto density_layer = net.tap_layer(Tap::concat) ? net.tap_layer(Tap::concat) : net.tap_layer(Tap::global);
  if (density_layer) {
    const Tensor32& v = pass.outputs[*density_layer];
    const auto active = std::count_if(v.data().begin(), v.data().end(), [](float x) { return x > 0.0f; });
    result.activation_density = static_cast<double>(active) / static_cast<double>(v.size());
  }
  return result;
}

}  // namespace ilgnet
