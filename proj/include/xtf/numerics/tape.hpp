#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "xtf/numerics/dense.hpp"

namespace xtf {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Reverse-mode gradient tape for the fixed op set the tiny LM uses.
//
// Nodes are appended in execution order. A pullback receives the upstream
// gradient of its node and accumulates into the gradients of its inputs via
// `accumulate`. Leaves registered with `leaf()` are the trainable
// parameters; `backward()` returns one gradient per leaf in registration
// order, each with the leaf's shape.
class Tape {
 public:
  using Pullback = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value);
  Var constant(Matrix value);
  Var record(Matrix value, Pullback pullback);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t leaf_count() const { return leaves_.size(); }

  std::vector<Matrix> backward(Var loss);

  // Only meaningful inside a pullback during backward().
  void accumulate(Var target, const Matrix& delta);

 private:
  struct Node {
    Matrix value;
    Pullback pullback;
  };
  std::vector<Node> nodes_;
  std::vector<std::size_t> leaves_;
  std::vector<Matrix> grads_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

// Differentiable ops. All inputs must live on the same tape.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var a, Var row);  // broadcast a 1xn row over every row of a
Var matmul(Var a, Var b);
Var transpose(Var a);
Var gather_rows(Var table, std::span<const int> ids);
Var slice_cols(Var a, Eigen::Index first, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var gelu(Var x);
// Row-wise softmax restricted to columns <= row index; masked entries are
// exactly zero.
Var causal_softmax(Var scores);
Var sum(Var a);
// sum_r weight[r] * -log softmax(logits.row(r))[target[r]]; rows with zero
// weight contribute neither value nor gradient.
Var cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights);

// Forward kernels behind layer_norm, gelu and causal_softmax, exposed so
// tape-free inference computes bitwise-identical values.
Matrix layer_norm_values(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps = 1e-5,
                         Matrix* xhat = nullptr, Vector* inv_std = nullptr);
Matrix gelu_values(const Matrix& x);
// p[0..count) = softmax(s[0..count)).
void softmax_prefix(const double* s, double* p, Eigen::Index count);

}  // namespace xtf
