#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ilgnet/tensor.hpp"

namespace ilgnet {

struct GradCheckConfig {
  double epsilon = 1e-5;
  double tolerance = 1e-6;
};

struct ArgumentReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Elements whose finite-difference stencil crosses a relu/maxpool kink.
  std::size_t skipped = 0;
};

struct GradCheckReport {
  std::string op;
  std::vector<ArgumentReport> arguments;

  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
  // Folds another report of the same op into this one, keeping the worst error per argument.
  void merge(const GradCheckReport& other);
};

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

// Compares the 64-bit `analytic` gradient against central differences of
// L = sum(upstream * evaluate()) with respect to every element of `value`.
// The evaluation scalar E may be wider than double (the bundled checks use
// long double so that roundoff stays far below the tolerance).
// `routing` (optional) returns a discrete signature of the op's piecewise
// branch (relu mask, maxpool argmax); an element whose +/- epsilon perturbation
// changes it is skipped.
template <typename E>
ArgumentReport check_argument(std::string name, Tensor<E>& value, const Tensor64& analytic,
                              const std::function<Tensor<E>()>& evaluate, const Tensor<E>& upstream,
                              const std::function<std::vector<std::size_t>()>& routing, double epsilon);

// Ops covered by gradcheck_op: conv2d, maxpool2d, global_avg_pool, relu,
// batchnorm, concat, linear, softmax_xent.
const std::vector<std::string>& gradcheck_op_names();

// One randomly drawn configuration of `op` in 64-bit. Throws ShapeError for an unknown op.
GradCheckReport gradcheck_op(std::string_view op, std::uint64_t seed, const GradCheckConfig& config = {});

// `trials` independent configurations, merged.
GradCheckReport gradcheck_op(std::string_view op, std::size_t trials, std::uint64_t seed,
                             const GradCheckConfig& config = {});

}  // namespace ilgnet
