#include "ilgnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ilgnet/ops.hpp"

namespace ilgnet {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& a : arguments) worst = std::max(worst, a.max_rel_error);
  return worst;
}

void GradCheckReport::merge(const GradCheckReport& other) {
  for (const auto& incoming : other.arguments) {
    auto it = std::find_if(arguments.begin(), arguments.end(),
                           [&](const ArgumentReport& a) { return a.name == incoming.name; });
    if (it == arguments.end()) {
      arguments.push_back(incoming);
      continue;
    }
    it->max_rel_error = std::max(it->max_rel_error, incoming.max_rel_error);
    it->checked += incoming.checked;
    it->skipped += incoming.skipped;
  }
}

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

template <typename E>
ArgumentReport check_argument(std::string name, Tensor<E>& value, const Tensor64& analytic,
                              const std::function<Tensor<E>()>& evaluate, const Tensor<E>& upstream,
                              const std::function<std::vector<std::size_t>()>& routing, double epsilon) {
  if (analytic.shape() != value.shape()) throw ShapeError("gradcheck: analytic gradient shape mismatch for " + name);
  ArgumentReport report{std::move(name)};
  const auto base_route = routing ? routing() : std::vector<std::size_t>{};

  for (std::size_t i = 0; i < value.size(); ++i) {
    const E saved = value[i];
    value[i] = saved + static_cast<E>(epsilon);
    const Tensor<E> plus = evaluate();
    const bool plus_kink = routing && routing() != base_route;
    value[i] = saved - static_cast<E>(epsilon);
    const Tensor<E> minus = evaluate();
    const bool minus_kink = routing && routing() != base_route;
    value[i] = saved;

    if (plus_kink || minus_kink) {
      ++report.skipped;
      continue;
    }
    // Differences are taken per output element before weighting, which keeps
    // cancellation error proportional to the touched outputs only.
    E numeric = 0;
    for (std::size_t k = 0; k < plus.size(); ++k) numeric += upstream[k] * (plus[k] - minus[k]);
    numeric /= 2 * static_cast<E>(epsilon);
    report.max_rel_error =
        std::max(report.max_rel_error, relative_error(analytic[i], static_cast<double>(numeric)));
    ++report.checked;
  }
  return report;
}

template ArgumentReport check_argument(std::string, Tensor<double>&, const Tensor64&,
                                       const std::function<Tensor<double>()>&, const Tensor<double>&,
                                       const std::function<std::vector<std::size_t>()>&, double);
template ArgumentReport check_argument(std::string, Tensor<long double>&, const Tensor64&,
                                       const std::function<Tensor<long double>()>&, const Tensor<long double>&,
                                       const std::function<std::vector<std::size_t>()>&, double);

namespace {

using Rng = std::mt19937_64;

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor64 random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

using Ext = long double;
using TensorX = Tensor<Ext>;

// Wraps a 64-bit argument and its extended-precision twin used by the oracle.
struct Arg {
  Tensor64 value;
  TensorX ext;

  explicit Arg(Tensor64 v) : value(std::move(v)), ext(value.cast<Ext>()) {}
};

ArgumentReport check(std::string name, Arg& arg, const Tensor64& analytic, const std::function<TensorX()>& f,
                     const TensorX& upstream, double eps, const std::function<std::vector<std::size_t>()>& route = {}) {
  return check_argument<Ext>(std::move(name), arg.ext, analytic, f, upstream, route, eps);
}

GradCheckReport check_conv2d(Rng& rng, double eps) {
  ConvSpec spec;
  spec.in_channels = draw(rng, 1, 3);
  spec.out_channels = draw(rng, 1, 3);
  const std::size_t kernel = 2 * draw(rng, 0, 2) + 1;  // 1, 3 or 5
  spec.kernel_h = spec.kernel_w = kernel;
  spec.stride_h = spec.stride_w = draw(rng, 1, 2);
  spec.pad_h = spec.pad_w = draw(rng, 0, kernel / 2);
  const std::size_t h = draw(rng, kernel, kernel + 3), w = draw(rng, kernel, kernel + 3);

  Arg x(random_tensor(rng, {draw(rng, 1, 2), spec.in_channels, h, w}));
  Arg weights(random_tensor(rng, spec.weight_shape()));
  Arg bias(random_tensor(rng, {spec.out_channels}));
  const Tensor64 y = conv2d_forward(x.value, weights.value, bias.value, spec);
  const Tensor64 upstream = random_tensor(rng, y.shape());

  Tensor64 dw(weights.value.shape()), db(bias.value.shape());
  const Tensor64 dx = conv2d_backward(x.value, weights.value, upstream, spec, dw, db);
  const TensorX up = upstream.cast<Ext>();
  auto f = [&] { return conv2d_forward(x.ext, weights.ext, bias.ext, spec); };
  return {"conv2d",
          {check("input", x, dx, f, up, eps), check("weights", weights, dw, f, up, eps), check("bias", bias, db, f, up, eps)}};
}

GradCheckReport check_maxpool2d(Rng& rng, double eps) {
  const std::size_t kernel = draw(rng, 2, 3);
  PoolSpec spec = PoolSpec::square(kernel, draw(rng, 1, 2), draw(rng, 0, 1) == 1, draw(rng, 0, kernel - 1));
  Arg x(random_tensor(rng, {draw(rng, 1, 2), draw(rng, 1, 2), draw(rng, kernel, 7), draw(rng, kernel, 7)}));
  const auto fwd = maxpool2d_forward(x.value, spec);
  const Tensor64 upstream = random_tensor(rng, fwd.output.shape());
  const Tensor64 dx = maxpool2d_backward(x.value.shape(), fwd.argmax, upstream);
  auto f = [&] { return maxpool2d_forward(x.ext, spec).output; };
  auto route = [&] { return maxpool2d_forward(x.ext, spec).argmax; };
  return {"maxpool2d", {check("input", x, dx, f, upstream.cast<Ext>(), eps, route)}};
}

GradCheckReport check_global_avg_pool(Rng& rng, double eps) {
  Arg x(random_tensor(rng, {draw(rng, 1, 3), draw(rng, 1, 4), draw(rng, 1, 5), draw(rng, 1, 5)}));
  const Tensor64 upstream = random_tensor(rng, {x.value.dim(0), x.value.dim(1)});
  const Tensor64 dx = global_avg_pool_backward(x.value.shape(), upstream);
  auto f = [&] { return global_avg_pool_forward(x.ext); };
  return {"global_avg_pool", {check("input", x, dx, f, upstream.cast<Ext>(), eps)}};
}

GradCheckReport check_relu(Rng& rng, double eps) {
  Tensor64 values({draw(rng, 1, 3), draw(rng, 1, 3), draw(rng, 1, 4), draw(rng, 1, 4)});
  // Keep inputs away from the kink at zero.
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : values.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  Arg x(std::move(values));
  const Tensor64 upstream = random_tensor(rng, x.value.shape());
  const Tensor64 dx = relu_backward(x.value, upstream);
  auto f = [&] { return relu_forward(x.ext); };
  auto route = [&] {
    std::vector<std::size_t> mask(x.ext.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = x.ext[i] > 0;
    return mask;
  };
  return {"relu", {check("input", x, dx, f, upstream.cast<Ext>(), eps, route)}};
}

GradCheckReport check_batchnorm(Rng& rng, double eps) {
  // At least 4 values per channel: with 2 the normalized output is +/-1 for any
  // input and the true input gradient vanishes.
  const std::size_t channels = draw(rng, 1, 3);
  Shape shape;
  if (draw(rng, 0, 3) == 0) {
    shape = {draw(rng, 4, 6), channels};
  } else {
    shape = {draw(rng, 2, 3), channels, draw(rng, 2, 3), draw(rng, 1, 3)};
  }
  Arg x(random_tensor(rng, shape, -2.0, 2.0));
  Arg gamma(random_tensor(rng, {channels}, 0.5, 1.5));
  Arg beta(random_tensor(rng, {channels}));
  BatchNormState<double> state(channels);
  BatchNormCache<double> cache;
  const Tensor64 y = batchnorm_forward(x.value, gamma.value, beta.value, state, Mode::train, &cache);
  const Tensor64 upstream = random_tensor(rng, y.shape());
  Tensor64 dgamma({channels}), dbeta({channels});
  const Tensor64 dx = batchnorm_backward(cache, gamma.value, upstream, dgamma, dbeta);
  const TensorX up = upstream.cast<Ext>();
  auto f = [&] {
    BatchNormState<Ext> scratch(channels);
    return batchnorm_forward(x.ext, gamma.ext, beta.ext, scratch, Mode::train);
  };
  return {"batchnorm",
          {check("input", x, dx, f, up, eps), check("gamma", gamma, dgamma, f, up, eps), check("beta", beta, dbeta, f, up, eps)}};
}

GradCheckReport check_concat(Rng& rng, double eps) {
  const bool spatial = draw(rng, 0, 1) == 1;
  const std::size_t n = draw(rng, 1, 3), h = draw(rng, 1, 3), w = draw(rng, 1, 3);
  std::vector<Arg> inputs;
  const std::size_t count = draw(rng, 1, 3);
  for (std::size_t i = 0; i < count; ++i) {
    inputs.emplace_back(spatial ? random_tensor(rng, {n, draw(rng, 1, 4), h, w}) : random_tensor(rng, {n, draw(rng, 1, 6)}));
  }
  std::vector<const Tensor64*> ptrs;
  std::vector<Shape> shapes;
  for (const auto& t : inputs) {
    ptrs.push_back(&t.value);
    shapes.push_back(t.value.shape());
  }
  const Tensor64 y = concat_forward<double>(ptrs);
  const Tensor64 upstream = random_tensor(rng, y.shape());
  const auto grads = concat_backward<double>(upstream, shapes);
  auto f = [&] {
    std::vector<const TensorX*> ext;
    for (const auto& t : inputs) ext.push_back(&t.ext);
    return concat_forward<Ext>(ext);
  };
  const TensorX up = upstream.cast<Ext>();
  GradCheckReport report{"concat", {}};
  for (std::size_t i = 0; i < count; ++i) {
    report.arguments.push_back(check("input" + std::to_string(i), inputs[i], grads[i], f, up, eps));
  }
  return report;
}

GradCheckReport check_linear(Rng& rng, double eps) {
  const std::size_t n = draw(rng, 1, 5), d_in = draw(rng, 1, 10), d_out = draw(rng, 1, 6);
  Arg x(random_tensor(rng, {n, d_in}));
  Arg weights(random_tensor(rng, {d_out, d_in}));
  Arg bias(random_tensor(rng, {d_out}));
  const Tensor64 upstream = random_tensor(rng, {n, d_out});
  Tensor64 dw(weights.value.shape()), db(bias.value.shape());
  const Tensor64 dx = linear_backward(x.value, weights.value, upstream, dw, db);
  const TensorX up = upstream.cast<Ext>();
  auto f = [&] { return linear_forward(x.ext, weights.ext, bias.ext); };
  return {"linear",
          {check("input", x, dx, f, up, eps), check("weights", weights, dw, f, up, eps), check("bias", bias, db, f, up, eps)}};
}

GradCheckReport check_softmax_xent(Rng& rng, double eps) {
  const std::size_t n = draw(rng, 1, 6), k = draw(rng, 2, 5);
  Arg logits(random_tensor(rng, {n, k}, -3.0, 3.0));
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(draw(rng, 0, k - 1));
  const auto fwd = softmax_xent_forward(logits.value, labels);
  const Tensor64 dlogits = softmax_xent_backward(fwd.probabilities, labels);
  auto f = [&] { return TensorX({1}, static_cast<Ext>(softmax_xent_forward(logits.ext, labels).mean_loss)); };
  return {"softmax_xent", {check("logits", logits, dlogits, f, TensorX({1}, 1), eps)}};
}

using CheckFn = GradCheckReport (*)(Rng&, double);

struct NamedCheck {
  const char* name;
  CheckFn fn;
};

constexpr NamedCheck kChecks[] = {
    {"conv2d", check_conv2d},   {"maxpool2d", check_maxpool2d}, {"global_avg_pool", check_global_avg_pool},
    {"relu", check_relu},       {"batchnorm", check_batchnorm}, {"concat", check_concat},
    {"linear", check_linear},   {"softmax_xent", check_softmax_xent},
};

}  // namespace

const std::vector<std::string>& gradcheck_op_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& c : kChecks) out.emplace_back(c.name);
    return out;
  }();
  return names;
}

GradCheckReport gradcheck_op(std::string_view op, std::uint64_t seed, const GradCheckConfig& config) {
  for (const auto& c : kChecks) {
    if (op == c.name) {
      Rng rng(seed);
      return c.fn(rng, config.epsilon);
    }
  }
  throw ShapeError("gradcheck: unknown op '" + std::string(op) + "'");
}

GradCheckReport gradcheck_op(std::string_view op, std::size_t trials, std::uint64_t seed,
                             const GradCheckConfig& config) {
  GradCheckReport merged{std::string(op), {}};
  for (std::size_t t = 0; t < trials; ++t) {
    merged.merge(gradcheck_op(op, seed * 1000003ULL + t, config));
  }
  return merged;
}

}  // namespace ilgnet
