#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "xtf/numerics/dense.hpp"

namespace xtf {

enum class OptimizerMode { kSgd, kAdam };

struct OptimizerHyper {
  OptimizerMode mode = OptimizerMode::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
};

// In-place update. A non-finite gradient throws TrainingError carrying
// `context` (typically the offending sample id) and leaves params untouched.
void optimizer_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, OptimizerState& state,
                    const OptimizerHyper& hyper, std::string_view context = {});

OptimizerMode parse_optimizer_mode(std::string_view name);
std::string_view to_string(OptimizerMode mode);

}  // namespace xtf
