#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "xtf/numerics/dense.hpp"

namespace xtf {

using LossFn = std::function<double(const std::vector<Matrix>& params)>;
using GradFn = std::function<std::vector<Matrix>(const std::vector<Matrix>& params)>;

struct FiniteDiffOptions {
  double step = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample of this many
  // coordinates per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::vector<double> per_tensor;
};

// Central differences against an analytic gradient. The relative error of a
// tensor is ||analytic - central|| / (||analytic|| + ||central|| + 1e-12)
// over the checked coordinates; the report carries the max over tensors.
FiniteDiffReport finite_diff_check(const LossFn& loss, const std::vector<Matrix>& analytic,
                                   std::vector<Matrix> params, const FiniteDiffOptions& options = {});

double finite_diff_check(const LossFn& loss, const GradFn& grad, const std::vector<Matrix>& params,
                         double step);

}  // namespace xtf
