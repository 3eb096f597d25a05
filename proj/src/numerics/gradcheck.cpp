#include "xtf/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace xtf {

FiniteDiffReport finite_diff_check(const LossFn& loss, const std::vector<Matrix>& analytic,
                                   std::vector<Matrix> params, const FiniteDiffOptions& options) {
  if (!(options.step > 0.0)) throw ContractError("finite_diff_check: step must be positive");
  if (analytic.size() != params.size())
    throw DimensionError("finite_diff_check: one analytic gradient per parameter required");

  std::mt19937_64 rng(options.seed);
  FiniteDiffReport report;
  report.per_tensor.reserve(params.size());

  for (std::size_t t = 0; t < params.size(); ++t) {
    Matrix& p = params[t];
    if (analytic[t].rows() != p.rows() || analytic[t].cols() != p.cols())
      throw DimensionError("finite_diff_check: gradient shape differs from parameter " + std::to_string(t));

    std::vector<Eigen::Index> coords(static_cast<std::size_t>(p.size()));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }

    double diff2 = 0, an2 = 0, fd2 = 0;
    for (Eigen::Index flat : coords) {
      double& x = p.data()[flat];
      const double saved = x;
      x = saved + options.step;
      const double up = loss(params);
      x = saved - options.step;
      const double down = loss(params);
      x = saved;
      const double central = (up - down) / (2.0 * options.step);
      const double a = analytic[t].data()[flat];
      diff2 += (a - central) * (a - central);
      an2 += a * a;
      fd2 += central * central;
    }
    const double rel = std::sqrt(diff2) / (std::sqrt(an2) + std::sqrt(fd2) + 1e-12);
    report.per_tensor.push_back(rel);
    if (t == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_tensor = t;
    }
  }
  return report;
}

double finite_diff_check(const LossFn& loss, const GradFn& grad, const std::vector<Matrix>& params,
                         double step) {
  FiniteDiffOptions options;
  options.step = step;
  return finite_diff_check(loss, grad(params), params, options).max_rel_error;
}

}  // namespace xtf
