#include <gtest/gtest.h>

#include "ilgnet/gradcheck.hpp"
#include "ilgnet/ops.hpp"
#include "support/gen.hpp"

using namespace ilgnet;

namespace {

using LD = long double;

Tensor<LD> widen(const Tensor64& t) { return t.cast<LD>(); }

}  // namespace

TEST(RelativeError, Definition) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-9 / 1e-8);
}

TEST(GradCheck, LinearOnFiveByFourInput) {
  testgen::Gen g(3);
  auto x = g.tensor<double>({5, 4});
  auto w = g.tensor<double>({3, 4});
  auto b = g.tensor<double>({3});
  auto up = g.tensor<double>({5, 3});
  Tensor64 dw(w.shape()), db(b.shape());
  auto dx = linear_backward(x, w, up, dw, db);

  auto X = widen(x), W = widen(w), B = widen(b), U = widen(up);
  auto eval = [&] { return linear_forward(X, W, B); };
  auto rx = check_argument<LD>("x", X, dx, eval, U, {}, 1e-5);
  auto rw = check_argument<LD>("w", W, dw, eval, U, {}, 1e-5);
  auto rb = check_argument<LD>("b", B, db, eval, U, {}, 1e-5);
  EXPECT_LT(rx.max_rel_error, 1e-6);
  EXPECT_LT(rw.max_rel_error, 1e-6);
  EXPECT_LT(rb.max_rel_error, 1e-6);
  EXPECT_EQ(rx.checked, 20u);
  EXPECT_EQ(rw.checked, 12u);
}

TEST(GradCheck, ConvPadOne) {
  testgen::Gen g(4);
  auto spec = ConvSpec::square(2, 3, 3, 1, 1);
  auto x = g.tensor<double>({2, 2, 5, 5});
  auto w = g.tensor<double>(spec.weight_shape());
  auto b = g.tensor<double>({3});
  auto up = g.tensor<double>({2, 3, 5, 5});
  Tensor64 dw(w.shape()), db(b.shape());
  auto dx = conv2d_backward(x, w, up, spec, dw, db);
  auto X = widen(x), W = widen(w), B = widen(b), U = widen(up);
  auto eval = [&] { return conv2d_forward(X, W, B, spec); };
  EXPECT_LT(check_argument<LD>("x", X, dx, eval, U, {}, 1e-5).max_rel_error, 1e-6);
  EXPECT_LT(check_argument<LD>("w", W, dw, eval, U, {}, 1e-5).max_rel_error, 1e-6);
  EXPECT_LT(check_argument<LD>("b", B, db, eval, U, {}, 1e-5).max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsAWrongGradient) {
  testgen::Gen g(5);
  auto x = g.tensor<double>({2, 3});
  auto w = g.tensor<double>({2, 3});
  auto b = g.tensor<double>({2});
  auto up = g.tensor<double>({2, 2});
  Tensor64 dw(w.shape()), db(b.shape());
  auto dx = linear_backward(x, w, up, dw, db);
  for (auto& v : dx.data()) v = -v;
  auto X = widen(x), W = widen(w), B = widen(b), U = widen(up);
  auto eval = [&] { return linear_forward(X, W, B); };
  EXPECT_GT(check_argument<LD>("x", X, dx, eval, U, {}, 1e-5).max_rel_error, 1.0);
}

TEST(GradCheck, KinkElementsAreSkipped) {
  Tensor64 x({1, 3}, std::vector<double>{-0.5, 2e-6, 0.75});
  Tensor64 up({1, 3}, 1.0);
  auto dx = relu_backward(x, up);
  auto X = widen(x), U = widen(up);
  auto eval = [&] { return relu_forward(X); };
  auto routing = [&] {
    std::vector<std::size_t> mask;
    for (auto v : X.data()) mask.push_back(v > 0 ? 1 : 0);
    return mask;
  };
  auto r = check_argument<LD>("x", X, dx, eval, U, routing, 1e-5);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.checked, 2u);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, PerturbationIsRestored) {
  testgen::Gen g(9);
  auto x = g.tensor<double>({2, 2});
  auto X = widen(x);
  auto copy = X;
  Tensor<LD> U({2, 2}, 1.0L);
  check_argument<LD>("x", X, x, [&] { return relu_forward(X); }, U, {}, 1e-5);
  EXPECT_EQ(X, copy);
}

TEST(GradCheck, EveryOpOverTenConfigurations) {
  for (const auto& op : gradcheck_op_names()) {
    auto r = gradcheck_op(op, std::size_t{10}, 2024);
    EXPECT_TRUE(r.passed(1e-6)) << op << " max rel error " << r.max_rel_error();
    EXPECT_FALSE(r.arguments.empty()) << op;
  }
}

TEST(GradCheck, BatchNormArgumentsCovered) {
  auto r = gradcheck_op("batchnorm", std::size_t{10}, 77);
  ASSERT_EQ(r.arguments.size(), 3u);
  for (const auto& a : r.arguments) {
    EXPECT_GT(a.checked, 0u) << a.name;
    EXPECT_LT(a.max_rel_error, 1e-6) << a.name;
  }
}

TEST(GradCheck, UnknownOpThrows) { EXPECT_THROW(gradcheck_op("dropout", 1), ShapeError); }

TEST(GradCheckProperty, ManySeedsStayWithinTolerance) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    for (const auto& op : gradcheck_op_names()) {
      auto r = gradcheck_op(op, seed);
      EXPECT_TRUE(r.passed(1e-6)) << op << " seed " << seed << " err " << r.max_rel_error();
    }
  }
}
