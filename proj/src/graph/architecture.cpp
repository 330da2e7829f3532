#include "ilgnet/network.hpp"

namespace ilgnet {
namespace {

template <typename T>
class Builder {
 public:
  Builder(BasicNetwork<T>& net, std::uint64_t seed) : net_(net), seed_(seed) {}

  // conv -> BN -> relu; returns the relu layer.
  std::size_t conv_bn_relu(const std::string& name, std::size_t input, std::size_t out, std::size_t kernel,
                           std::size_t stride, std::size_t pad, const std::string& block, unsigned depth,
                           const std::string& relu_name = {}) {
    const auto conv = net_.add_conv(name, input, out, kernel, stride, pad, seed_, block, depth);
    const auto bn = net_.add_batchnorm(name + "/bn", conv);
    return net_.add_relu(relu_name.empty() ? name + "/relu" : relu_name, bn);
  }

  std::size_t backbone_pool(const std::string& name, std::size_t input) {
    return net_.add_maxpool(name, input, PoolSpec::square(3, 2, /*ceil_mode=*/true), /*backbone=*/true);
  }

  std::size_t stem(std::size_t input, const ArchVariant& v) {
    auto x = conv_bn_relu("stem/conv1", input, v.scale(64), 7, 2, 3, "stem", 1);
    x = backbone_pool("stem/pool1", x);
    x = conv_bn_relu("stem/conv2_reduce", x, v.scale(64), 1, 1, 0, "stem", 2);
    x = conv_bn_relu("stem/conv2", x, v.scale(192), 3, 1, 1, "stem", 3);
    return backbone_pool("stem/pool2", x);
  }

  std::size_t inception(const std::string& block, std::size_t input, const InceptionSpec& s) {
    const auto b1 = conv_bn_relu(block + "/1x1", input, s.c1x1, 1, 1, 0, block, 1);
    auto b2 = conv_bn_relu(block + "/3x3_reduce", input, s.c3x3_reduce, 1, 1, 0, block, 1);
    b2 = conv_bn_relu(block + "/3x3", b2, s.c3x3, 3, 1, 1, block, 2);
    auto b3 = conv_bn_relu(block + "/5x5_reduce", input, s.c5x5_reduce, 1, 1, 0, block, 1);
    b3 = conv_bn_relu(block + "/5x5", b3, s.c5x5, 5, 1, 2, block, 2);
    auto b4 = net_.add_maxpool(block + "/pool", input, PoolSpec::square(3, 1, false, 1), false);
    b4 = conv_bn_relu(block + "/pool_proj", b4, s.pool_proj, 1, 1, 0, block, 1);
    return net_.add_concat(block + "/output", {b1, b2, b3, b4});
  }

  // The ablation: one 3x3 conv with the inception module's channel interface.
  std::size_t plain(const std::string& block, std::size_t input, const InceptionSpec& s) {
    return conv_bn_relu(block + "/conv", input, s.out_channels(), 3, 1, 1, block, 1, block + "/output");
  }

  std::size_t stage(VariantKind kind, const std::string& block, std::size_t input, const InceptionSpec& s) {
    return kind == VariantKind::ilgnet_without_inc ? plain(block, input, s) : inception(block, input, s);
  }

  // gap -> linear -> relu; returns the relu layer.
  std::size_t projection(const std::string& block, std::size_t input, std::size_t dim, bool backbone_gap) {
    const auto gap = net_.add_global_avg_pool(block + "/gap", input, backbone_gap);
    const auto proj = net_.add_linear(block + "/proj", gap, dim, seed_, block);
    return net_.add_relu(block + "/relu", proj);
  }

 private:
  BasicNetwork<T>& net_;
  std::uint64_t seed_;
};

}  // namespace

template <typename T>
BasicNetwork<T> assemble(const ArchVariant& variant, std::uint64_t seed) {
  variant.validate();
  BasicNetwork<T> net(variant);
  net.seed = seed;
  Builder<T> b(net, seed);

  const auto input = net.add_input({3, variant.input_side, variant.input_side});
  const auto stem = b.stem(input, variant);
  const auto inc_a = b.stage(variant.kind, "inc_a", stem, kInceptionA.scaled(variant));
  const auto inc_b = b.stage(variant.kind, "inc_b", inc_a, kInceptionB.scaled(variant));
  const auto pool3 = b.backbone_pool("pool3", inc_b);
  const auto inc_c = b.stage(variant.kind, "inc_c", pool3, kInceptionC.scaled(variant));

  net.set_tap(Tap::stem, stem);
  net.set_tap(Tap::inception_a, inc_a);
  net.set_tap(Tap::inception_b, inc_b);
  net.set_tap(Tap::inception_c, inc_c);

  if (variant.kind == VariantKind::third_googlenet_v1_bn) {
    const auto global = net.add_global_avg_pool("global/gap", inc_c, true);
    net.set_tap(Tap::global, global);
    net.add_linear("classifier", global, kNumClasses, seed, "classifier");
    return net;
  }

  const auto local_a = b.projection("local_a", inc_a, variant.scale(kLocalFeatureDim), false);
  const auto local_b = b.projection("local_b", inc_b, variant.scale(kLocalFeatureDim), false);
  const auto global = b.projection("global", inc_c, variant.scale(kGlobalFeatureDim), true);
  const auto concat = net.add_concat("concat", {local_a, local_b, global});
  net.set_tap(Tap::local_a, local_a);
  net.set_tap(Tap::local_b, local_b);
  net.set_tap(Tap::global, global);
  net.set_tap(Tap::concat, concat);
  net.add_linear("classifier", concat, kNumClasses, seed, "classifier");
  return net;
}

template BasicNetwork<float> assemble<float>(const ArchVariant&, std::uint64_t);
template BasicNetwork<double> assemble<double>(const ArchVariant&, std::uint64_t);

}  // namespace ilgnet
