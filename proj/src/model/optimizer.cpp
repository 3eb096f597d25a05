#include "xtf/model/optimizer.hpp"

#include <cmath>
#include <string>

namespace xtf {

void optimizer_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, OptimizerState& state,
                    const OptimizerHyper& hyper, std::string_view context) {
  if (params.size() != grads.size())
    throw DimensionError("optimizer_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols())
      throw DimensionError("optimizer_step: gradient " + std::to_string(i) + " has shape " +
                           shape_string(grads[i].rows(), grads[i].cols()) + ", parameter has " +
                           shape_string(params[i].rows(), params[i].cols()));
    if (!all_finite(grads[i]))
      throw TrainingError("non-finite gradient in tensor " + std::to_string(i) +
                          (context.empty() ? std::string() : " (sample " + std::string(context) + ")"));
  }

  if (hyper.mode == OptimizerMode::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= hyper.learning_rate * grads[i];
    ++state.step;
    return;
  }

  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const Matrix& p : params) {
      state.first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * grads[i];
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * grads[i].cwiseAbs2();
    params[i].array() -=
        hyper.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + hyper.epsilon);
  }
}

OptimizerMode parse_optimizer_mode(std::string_view name) {
  if (name == "sgd") return OptimizerMode::kSgd;
  if (name == "adam") return OptimizerMode::kAdam;
  throw ConfigError("unknown optimizer mode '" + std::string(name) + "' (expected sgd or adam)");
}

std::string_view to_string(OptimizerMode mode) { return mode == OptimizerMode::kSgd ? "sgd" : "adam"; }

}  // namespace xtf
