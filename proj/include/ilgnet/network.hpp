#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ilgnet/ops.hpp"
#include "ilgnet/tensor.hpp"

namespace ilgnet {

enum class VariantKind {
  ilgnet_inc_v1_bn,       // inception backbone + connected local/global layer
  third_googlenet_v1_bn,  // same backbone, classifier on the pooled last inception only
  ilgnet_without_inc,     // each inception replaced by one 3x3 conv with the same channel interface
};

std::string_view variant_name(VariantKind kind);
// Accepts the names produced by variant_name. Throws ShapeError otherwise.
VariantKind parse_variant(std::string_view name);

struct ArchVariant {
  VariantKind kind = VariantKind::ilgnet_inc_v1_bn;
  double width_multiplier = 1.0;  // in (0, 1]
  std::size_t input_side = 224;

  void validate() const;
  // ceil(width_multiplier * channels), at least 1.
  std::size_t scale(std::size_t channels) const;
  bool operator==(const ArchVariant&) const = default;
};

struct InceptionSpec {
  std::size_t c1x1, c3x3_reduce, c3x3, c5x5_reduce, c5x5, pool_proj;

  constexpr std::size_t out_channels() const { return c1x1 + c3x3 + c5x5 + pool_proj; }
  InceptionSpec scaled(const ArchVariant& variant) const;
};

// GoogLeNet v1 widths for inception 3a, 3b and 4a.
inline constexpr InceptionSpec kInceptionA{64, 96, 128, 16, 32, 32};
inline constexpr InceptionSpec kInceptionB{128, 128, 192, 32, 96, 64};
inline constexpr InceptionSpec kInceptionC{192, 96, 208, 16, 48, 64};

inline constexpr std::size_t kLocalFeatureDim = 256;
inline constexpr std::size_t kGlobalFeatureDim = 512;
inline constexpr std::size_t kNumClasses = 2;  // 0 = low/bad, 1 = high/good

enum class LayerKind { input, conv, batchnorm, relu, maxpool, global_avg_pool, linear, concat };

inline constexpr std::size_t kNoIndex = std::numeric_limits<std::size_t>::max();

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::input;
  std::vector<std::size_t> inputs;
  Shape shape;  // per-sample output shape: (C, H, W) or (D)

  ConvSpec conv;
  PoolSpec pool;
  std::size_t weight = kNoIndex;  // conv/linear weights, batchnorm gamma
  std::size_t bias = kNoIndex;    // conv/linear bias, batchnorm beta
  std::size_t bn_state = kNoIndex;

  // Layer-count bookkeeping: parameter layers are counted as the deepest conv
  // or linear level within each block; only backbone pools are counted.
  std::string block;
  unsigned depth = 0;
  bool backbone_pool = false;
};

// Visualization tap points (1)-(7) plus the connected layer.
enum class Tap { stem = 1, inception_a, inception_b, inception_c, local_a, local_b, global, concat };

inline constexpr std::array<Tap, 8> kAllTaps{Tap::stem,    Tap::inception_a, Tap::inception_b, Tap::inception_c,
                                             Tap::local_a, Tap::local_b,     Tap::global,      Tap::concat};

// "1".."7" or "concat".
std::string tap_label(Tap tap);

template <typename T>
struct ForwardPass {
  Mode mode = Mode::infer;
  std::vector<Tensor<T>> outputs;                 // one per layer
  std::vector<std::vector<std::size_t>> argmax;   // maxpool layers only
  std::vector<BatchNormCache<T>> bn_cache;        // train mode only

  const Tensor<T>& logits() const { return outputs.back(); }
};

struct LayerCountEntry {
  std::string block;
  std::string layer;
  std::string convention;
};

struct LayerCountReport {
  std::size_t parameter_layers = 0;
  std::size_t pooling_layers = 0;
  std::vector<LayerCountEntry> parameter_listing;
  std::vector<LayerCountEntry> pooling_listing;
};

template <typename T>
class BasicNetwork {
 public:
  explicit BasicNetwork(ArchVariant variant = {}) : variant_(variant) {}

  // --- construction (used by assemble) ---
  std::size_t add_input(Shape per_sample);
  std::size_t add_conv(std::string name, std::size_t input, std::size_t out_channels, std::size_t kernel,
                       std::size_t stride, std::size_t pad, std::uint64_t seed, std::string block, unsigned depth);
  std::size_t add_batchnorm(std::string name, std::size_t input);
  std::size_t add_relu(std::string name, std::size_t input);
  std::size_t add_maxpool(std::string name, std::size_t input, PoolSpec spec, bool backbone);
  std::size_t add_global_avg_pool(std::string name, std::size_t input, bool backbone);
  std::size_t add_linear(std::string name, std::size_t input, std::size_t out_features, std::uint64_t seed,
                         std::string block);
  std::size_t add_concat(std::string name, std::vector<std::size_t> inputs);
  void set_tap(Tap tap, std::size_t layer);

  // --- execution ---
  // Inference mode; uses BN running statistics and never mutates the network,
  // so concurrent calls on a shared network are safe.
  ForwardPass<T> forward(const Tensor<T>& batch) const;
  // Train mode; BN uses batch statistics and updates its running statistics.
  ForwardPass<T> forward_train(const Tensor<T>& batch);
  // Accumulates parameter gradients for a train-mode pass.
  void backward(const ForwardPass<T>& pass, const Tensor<T>& grad_logits);
  // Inference-mode class probabilities, (N, 2).
  Tensor<T> classify(const Tensor<T>& batch) const;

  // --- introspection ---
  const ArchVariant& variant() const noexcept { return variant_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::optional<std::size_t> find_layer(std::string_view name) const;
  std::optional<std::size_t> tap_layer(Tap tap) const;
  std::span<Parameter<T>> parameters() noexcept { return params_; }
  std::span<const Parameter<T>> parameters() const noexcept { return params_; }
  std::vector<BatchNormState<T>>& bn_states() noexcept { return bn_states_; }
  const std::vector<BatchNormState<T>>& bn_states() const noexcept { return bn_states_; }
  // Name of the layer owning each BN state, in bn_states() order.
  std::vector<std::string> bn_state_names() const;
  LayerCountReport count_layers() const;
  Shape input_shape() const;
  void zero_grad();

  template <typename U>
  BasicNetwork<U> converted() const;

  // Carried through checkpoints.
  std::array<float, 3> channel_means{0.0f, 0.0f, 0.0f};
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;

 private:
  template <typename U>
  friend class BasicNetwork;

  ForwardPass<T> run(const Tensor<T>& batch, Mode mode, std::vector<BatchNormState<T>>* states) const;
  std::size_t push(Layer layer);
  std::size_t add_parameter(std::string name, Tensor<T> value);

  ArchVariant variant_;
  std::vector<Layer> layers_;
  std::vector<Parameter<T>> params_;
  std::vector<BatchNormState<T>> bn_states_;
  std::array<std::size_t, kAllTaps.size()> taps_{kNoIndex, kNoIndex, kNoIndex, kNoIndex,
                                                 kNoIndex, kNoIndex, kNoIndex, kNoIndex};
};

using Network = BasicNetwork<float>;

// Builds the requested variant with Xavier-uniform weights, zero biases/beta,
// unit gamma. Deterministic for a given seed.
template <typename T = float>
BasicNetwork<T> assemble(const ArchVariant& variant, std::uint64_t seed);

struct TapFeature {
  Tap tap;
  Tensor32 value;  // (C, H, W) or (D), batch axis dropped
};

struct FeatureTaps {
  std::vector<TapFeature> features;
  // Fraction of strictly positive entries in the concat layer (or in the
  // global vector when the variant has no concat layer).
  double activation_density = 0.0;

  const Tensor32& at(Tap tap) const;
};

// Taps of one image (1, 3, S, S) in inference mode. `requested` empty means
// every tap the variant has. Throws DataError for a tap absent in the variant.
FeatureTaps tap_features(const Network& net, const Tensor32& image, std::span<const Tap> requested = {});

}  // namespace ilgnet
