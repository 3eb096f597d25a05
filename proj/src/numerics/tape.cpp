#include "xtf/numerics/tape.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace xtf {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) +
                         " vs " + shape_string(b.rows(), b.cols()));
}

// Gradient kernels that keep the same fixed summation order as matmul.
Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double s = 0;
      for (Eigen::Index p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
      c(i, j) = s;
    }
  return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.cols(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index p = 0; p < a.cols(); ++p) {
      const double s = a(i, p);
      if (s != 0.0) c.row(p).noalias() += s * b.row(i);
    }
  return c;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var Tape::leaf(Matrix value) {
  Var v = record(std::move(value), nullptr);
  leaves_.push_back(v.id);
  return v;
}

Var Tape::constant(Matrix value) { return record(std::move(value), nullptr); }

Var Tape::record(Matrix value, Pullback pullback) {
  if (!all_finite(value))
    throw NumericError("tape: non-finite value produced at node " + std::to_string(nodes_.size()));
  nodes_.push_back(Node{std::move(value), std::move(pullback)});
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(Var target, const Matrix& delta) {
  Matrix& g = grads_[target.id];
  if (g.size() == 0)
    g = delta;
  else
    g += delta;
}

std::vector<Matrix> Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss was not recorded on this tape");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1)
    throw ContractError("backward: loss must be a scalar, got " + shape_string(lv.rows(), lv.cols()));

  grads_.assign(nodes_.size(), Matrix());
  grads_[loss.id] = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (grads_[i].size() == 0 || !nodes_[i].pullback) continue;
    nodes_[i].pullback(*this, grads_[i]);
  }

  std::vector<Matrix> out;
  out.reserve(leaves_.size());
  for (std::size_t id : leaves_) {
    if (grads_[id].size() == 0)
      out.push_back(Matrix::Zero(nodes_[id].value.rows(), nodes_[id].value.cols()));
    else
      out.push_back(std::move(grads_[id]));
  }
  grads_.clear();
  return out;
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  return a.tape->record(a.value() + b.value(), [a, b](Tape& t, const Matrix& up) {
    t.accumulate(a, up);
    t.accumulate(b, up);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  return a.tape->record(a.value().cwiseProduct(b.value()), [a, b](Tape& t, const Matrix& up) {
    t.accumulate(a, up.cwiseProduct(b.value()));
    t.accumulate(b, up.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double s) {
  return a.tape->record(a.value() * s, [a, s](Tape& t, const Matrix& up) { t.accumulate(a, up * s); });
}

Var add_row(Var a, Var row) {
  const Matrix& r = row.value();
  if (r.rows() != 1 || r.cols() != a.cols())
    throw DimensionError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
                         shape_string(r.rows(), r.cols()));
  Matrix out = a.value();
  out.rowwise() += r.row(0);
  return a.tape->record(std::move(out), [a, row](Tape& t, const Matrix& up) {
    t.accumulate(a, up);
    Matrix g = Matrix::Zero(1, up.cols());
    for (Eigen::Index i = 0; i < up.rows(); ++i) g.row(0) += up.row(i);
    t.accumulate(row, g);
  });
}

Var matmul(Var a, Var b) {
  Matrix out = matmul(a.value(), b.value());
  return a.tape->record(std::move(out), [a, b](Tape& t, const Matrix& up) {
    t.accumulate(a, matmul_a_bt(up, b.value()));
    t.accumulate(b, matmul_at_b(a.value(), up));
  });
}

Var transpose(Var a) {
  return a.tape->record(a.value().transpose(),
                        [a](Tape& t, const Matrix& up) { t.accumulate(a, up.transpose()); });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows())
      throw InputError("gather_rows: index " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(tv.rows()) + " rows");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape->record(std::move(out), [table, idx = std::move(idx)](Tape& t, const Matrix& up) {
    const Matrix& tv = table.value();
    Matrix g = Matrix::Zero(tv.rows(), tv.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += up.row(static_cast<Eigen::Index>(i));
    t.accumulate(table, g);
  });
}

Var slice_cols(Var a, Eigen::Index first, Eigen::Index count) {
  const Matrix& av = a.value();
  if (first < 0 || count < 0 || first + count > av.cols())
    throw DimensionError("slice_cols: range [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") outside " +
                         shape_string(av.rows(), av.cols()));
  return a.tape->record(av.middleCols(first, count), [a, first, count](Tape& t, const Matrix& up) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    g.middleCols(first, count) = up;
    t.accumulate(a, g);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), [inputs = std::move(inputs)](Tape& t, const Matrix& up) {
    Eigen::Index at = 0;
    for (const Var& p : inputs) {
      t.accumulate(p, up.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Matrix layer_norm_values(const Matrix& xv, const Matrix& gain, const Matrix& bias, double eps, Matrix* xhat_out,
                         Vector* inv_std_out) {
  const Eigen::Index n = xv.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  Matrix xhat(xv.rows(), n);
  Vector inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    double mean = 0;
    for (Eigen::Index j = 0; j < n; ++j) mean += xv(i, j);
    mean /= static_cast<double>(n);
    double var = 0;
    for (Eigen::Index j = 0; j < n; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(n);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    for (Eigen::Index j = 0; j < n; ++j) xhat(i, j) = (xv(i, j) - mean) * inv_std(i);
  }
  Matrix out(xv.rows(), n);
  for (Eigen::Index i = 0; i < xv.rows(); ++i)
    out.row(i) = xhat.row(i).cwiseProduct(gain.row(0)) + bias.row(0);
  if (xhat_out) *xhat_out = std::move(xhat);
  if (inv_std_out) *inv_std_out = std::move(inv_std);
  return out;
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Matrix xhat;
  Vector inv_std;
  Matrix out = layer_norm_values(x.value(), gain.value(), bias.value(), eps, &xhat, &inv_std);
  return x.tape->record(std::move(out), [x, gain, bias, xhat, inv_std](Tape& t, const Matrix& up) {
    const Eigen::Index rows = xhat.rows(), n = xhat.cols();
    const auto g = gain.value().row(0);
    Matrix dgain = Matrix::Zero(1, n), dbias = Matrix::Zero(1, n), dx(rows, n);
    for (Eigen::Index i = 0; i < rows; ++i) {
      dgain.row(0) += up.row(i).cwiseProduct(xhat.row(i));
      dbias.row(0) += up.row(i);
      const RowVector dxhat = up.row(i).cwiseProduct(g);
      double mean_d = 0, mean_dx = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        mean_d += dxhat(j);
        mean_dx += dxhat(j) * xhat(i, j);
      }
      mean_d /= static_cast<double>(n);
      mean_dx /= static_cast<double>(n);
      for (Eigen::Index j = 0; j < n; ++j)
        dx(i, j) = inv_std(i) * (dxhat(j) - mean_d - xhat(i, j) * mean_dx);
    }
    t.accumulate(x, dx);
    t.accumulate(gain, dgain);
    t.accumulate(bias, dbias);
  });
}

Matrix gelu_values(const Matrix& xv) {
  Matrix out(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.rows(); ++i)
    for (Eigen::Index j = 0; j < xv.cols(); ++j) {
      const double v = xv(i, j);
      out(i, j) = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
  return out;
}

Var gelu(Var x) {
  return x.tape->record(gelu_values(x.value()), [x](Tape& t, const Matrix& up) {
    const Matrix& xv = x.value();
    Matrix g(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i)
      for (Eigen::Index j = 0; j < xv.cols(); ++j) {
        const double v = xv(i, j);
        const double u = kGeluC * (v + kGeluA * v * v * v);
        const double th = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        g(i, j) = up(i, j) * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
      }
    t.accumulate(x, g);
  });
}

void softmax_prefix(const double* s, double* p, Eigen::Index count) {
  double mx = s[0];
  for (Eigen::Index k = 1; k < count; ++k) mx = std::max(mx, s[k]);
  double total = 0;
  for (Eigen::Index k = 0; k < count; ++k) {
    p[k] = std::exp(s[k] - mx);
    total += p[k];
  }
  for (Eigen::Index k = 0; k < count; ++k) p[k] /= total;
}

Var causal_softmax(Var scores) {
  const Matrix& s = scores.value();
  if (s.rows() != s.cols()) throw DimensionError("causal_softmax: scores must be square");
  const Eigen::Index n = s.rows();
  Matrix p = Matrix::Zero(n, n);
  for (Eigen::Index q = 0; q < n; ++q) softmax_prefix(&s(q, 0), &p(q, 0), q + 1);
  Matrix saved = p;
  return scores.tape->record(std::move(p), [scores, p = std::move(saved)](Tape& t, const Matrix& up) {
    const Eigen::Index n = p.rows();
    Matrix g = Matrix::Zero(n, n);
    for (Eigen::Index q = 0; q < n; ++q) {
      double dot = 0;
      for (Eigen::Index k = 0; k <= q; ++k) dot += p(q, k) * up(q, k);
      for (Eigen::Index k = 0; k <= q; ++k) g(q, k) = p(q, k) * (up(q, k) - dot);
    }
    t.accumulate(scores, g);
  });
}

Var sum(Var a) {
  const Matrix& av = a.value();
  double s = 0;
  for (Eigen::Index i = 0; i < av.rows(); ++i)
    for (Eigen::Index j = 0; j < av.cols(); ++j) s += av(i, j);
  return a.tape->record(Matrix::Constant(1, 1, s), [a](Tape& t, const Matrix& up) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), up(0, 0)));
  });
}

Var cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights) {
  const Matrix& z = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != z.rows() || weights.size() != targets.size())
    throw DimensionError("cross_entropy: need one target and one weight per logits row");
  Matrix probs = Matrix::Zero(z.rows(), z.cols());
  double loss = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double w = weights[static_cast<std::size_t>(r)];
    if (w == 0.0) continue;
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0 || tgt >= z.cols())
      throw InputError("cross_entropy: target " + std::to_string(tgt) + " outside vocabulary");
    const double mx = z.row(r).maxCoeff();
    double total = 0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      probs(r, j) = std::exp(z(r, j) - mx);
      total += probs(r, j);
    }
    probs.row(r) /= total;
    loss += w * -(z(r, tgt) - mx - std::log(total));
  }
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<double> wt(weights.begin(), weights.end());
  return logits.tape->record(
      Matrix::Constant(1, 1, loss),
      [logits, probs = std::move(probs), tg = std::move(tg), wt = std::move(wt)](Tape& t, const Matrix& up) {
        Matrix g = Matrix::Zero(probs.rows(), probs.cols());
        for (Eigen::Index r = 0; r < probs.rows(); ++r) {
          const double w = wt[static_cast<std::size_t>(r)];
          if (w == 0.0) continue;
          g.row(r) = probs.row(r) * (w * up(0, 0));
          g(r, tg[static_cast<std::size_t>(r)]) -= w * up(0, 0);
        }
        t.accumulate(logits, g);
      });
}

}  // namespace xtf
