#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "xtf/numerics/dense.hpp"

// Mixture/selector gradient geometry: alignment under an SPD preconditioner,
// the filtering gain and its bounds, one-step comparisons on quadratics, and
// score-norm bounds for high-confidence tokens of a softmax model.
//
// Everything is phrased over explicit finite populations of score vectors
// phi with weights, so expectations are weighted sums.

namespace xtf {

template <typename Scalar>
struct Population {
  std::vector<VectorX<Scalar>> phi;
  std::vector<Scalar> weights;

  Eigen::Index dim() const { return phi.empty() ? 0 : phi.front().size(); }

  void validate(const char* what) const {
    if (phi.empty()) throw InputError(std::string(what) + ": empty population");
    if (phi.size() != weights.size()) throw InputError(std::string(what) + ": phi/weight count mismatch");
    Scalar total = 0;
    for (std::size_t i = 0; i < phi.size(); ++i) {
      if (phi[i].size() != dim()) throw DimensionError(std::string(what) + ": ragged population");
      if (!(weights[i] > 0)) throw ConfigError(std::string(what) + ": weights must be positive");
      total += weights[i];
    }
    if (std::abs(total - Scalar(1)) > Scalar(1e-9)) throw ConfigError(std::string(what) + ": weights must sum to 1");
  }

  VectorX<Scalar> mean() const {
    VectorX<Scalar> m = VectorX<Scalar>::Zero(dim());
    for (std::size_t i = 0; i < phi.size(); ++i) m += weights[i] * phi[i];
    return m;
  }
};

// Weighted E[phi phi^T] + lambda I, symmetrized. With lambda == 0 a rank
// deficient population is rejected.
template <typename Scalar>
MatrixX<Scalar> damped_fisher(const Population<Scalar>& pop, Scalar lambda) {
  if (pop.phi.empty()) throw InputError("damped_fisher: empty population");
  if (lambda < 0) throw ConfigError("damped_fisher: damping must be >= 0");
  const Eigen::Index d = pop.dim();
  MatrixX<Scalar> f = MatrixX<Scalar>::Zero(d, d);
  for (std::size_t i = 0; i < pop.phi.size(); ++i) f.noalias() += pop.weights[i] * pop.phi[i] * pop.phi[i].transpose();
  f += lambda * MatrixX<Scalar>::Identity(d, d);
  const MatrixX<Scalar> sym = Scalar(0.5) * (f + f.transpose());
  if (lambda == 0) {
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(sym, Eigen::EigenvaluesOnly);
    const Scalar top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), Scalar(1));
    if (es.eigenvalues().minCoeff() <= top * Scalar(d) * std::numeric_limits<Scalar>::epsilon())
      throw GeometryError("damped_fisher: singular Fisher (rank-deficient population with zero damping)");
  }
  return sym;
}

// An SPD preconditioner M with a cached Cholesky factor. Inner products
// <u, v>_{M^-1} = u^T M^-1 v go through solves, never an explicit inverse.
template <typename Scalar>
class SpdGeometry {
 public:
  explicit SpdGeometry(MatrixX<Scalar> m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) throw GeometryError("preconditioner is not square: " + shape_string(m_.rows(), m_.cols()));
    const Scalar scale = std::max(m_.cwiseAbs().maxCoeff(), Scalar(1));
    if ((m_ - m_.transpose()).cwiseAbs().maxCoeff() > scale * Scalar(1e-12))
      throw GeometryError("preconditioner is not symmetric");
    llt_.compute(m_);
    if (llt_.info() != Eigen::Success) throw GeometryError("preconditioner is not positive definite");
  }

  static SpdGeometry identity(Eigen::Index d) { return SpdGeometry(MatrixX<Scalar>::Identity(d, d)); }

  const MatrixX<Scalar>& matrix() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }

  VectorX<Scalar> solve(const VectorX<Scalar>& v) const {
    if (v.size() != dim()) throw DimensionError("solve: vector of size " + std::to_string(v.size()));
    return llt_.solve(v);
  }
  Scalar inner(const VectorX<Scalar>& u, const VectorX<Scalar>& v) const { return u.dot(solve(v)); }
  Scalar norm_sq(const VectorX<Scalar>& u) const { return inner(u, u); }
  Scalar norm(const VectorX<Scalar>& u) const { return std::sqrt(std::max(norm_sq(u), Scalar(0))); }

  Scalar min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(m_, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

 private:
  MatrixX<Scalar> m_;
  Eigen::LLT<MatrixX<Scalar>> llt_;
};

enum class PreconditionerMode { kIdentity, kDampedFisher };

template <typename Scalar>
struct PreconditionerSpec {
  PreconditionerMode mode = PreconditionerMode::kIdentity;
  Scalar lambda = Scalar(1e-3);
  Population<Scalar> population;  // damped_fisher only
};

template <typename Scalar>
SpdGeometry<Scalar> make_preconditioner(const PreconditionerSpec<Scalar>& spec, Eigen::Index dim) {
  if (spec.mode == PreconditionerMode::kIdentity) return SpdGeometry<Scalar>::identity(dim);
  MatrixX<Scalar> f = damped_fisher(spec.population, spec.lambda);
  if (f.rows() != dim) throw DimensionError("preconditioner population has dimension " + std::to_string(f.rows()));
  return SpdGeometry<Scalar>(std::move(f));
}

// g_core^T M^-1 g.
template <typename Scalar>
Scalar alignment(const VectorX<Scalar>& g_core, const VectorX<Scalar>& g, const SpdGeometry<Scalar>& m) {
  return m.inner(g_core, g);
}

template <typename Scalar>
Scalar alignment(const VectorX<Scalar>& g_core, const VectorX<Scalar>& g, const MatrixX<Scalar>& m) {
  return alignment(g_core, g, SpdGeometry<Scalar>(m));
}

enum class SelectionModel { kStrongMar, kWeakBias };

template <typename Scalar>
struct MixtureSpec {
  Scalar epsilon = 0;  // noise fraction
  Scalar alpha = 0;    // core tokens wrongly removed
  Scalar beta = 0;     // noise tokens wrongly kept
  Scalar rho_c = 0;
  Scalar rho_n = 0;
  Population<Scalar> core;
  Population<Scalar> noise;
  std::uint64_t seed = 0;  // bias directions in weak-bias mode

  Scalar a() const { return 1 - epsilon; }
  Scalar b() const { return epsilon; }
  Scalar z_fil() const { return a() * (1 - alpha) + b() * beta; }
  bool skilled() const { return alpha + beta < 1; }

  void validate() const {
    if (!(epsilon >= 0 && epsilon < 1)) throw ConfigError("mixture: epsilon must lie in [0, 1)");
    if (!(alpha >= 0 && alpha <= 1 && beta >= 0 && beta <= 1)) throw ConfigError("mixture: alpha, beta must lie in [0, 1]");
    if (rho_c < 0 || rho_n < 0) throw ConfigError("mixture: bias magnitudes must be >= 0");
    core.validate("core population");
    noise.validate("noise population");
    if (core.dim() != noise.dim()) throw DimensionError("mixture: core and noise dimensions differ");
  }
};

template <typename Scalar>
struct MixtureGradients {
  VectorX<Scalar> g_core;
  VectorX<Scalar> g_noise;
  VectorX<Scalar> g_core_sel;  // kept-core mean (equals g_core under strong MAR)
  VectorX<Scalar> g_noise_sel;
  VectorX<Scalar> g_train;
  VectorX<Scalar> g_fil;
  Scalar a = 0;
  Scalar b = 0;
  Scalar z_fil = 0;
};

// A seeded random direction scaled to M^-1 norm `length`.
template <typename Scalar>
VectorX<Scalar> random_direction(std::mt19937_64& rng, const SpdGeometry<Scalar>& m, Scalar length) {
  std::normal_distribution<double> n(0.0, 1.0);
  VectorX<Scalar> u(m.dim());
  for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = static_cast<Scalar>(n(rng));
  const Scalar nu = m.norm(u);
  if (nu == 0) return VectorX<Scalar>::Zero(m.dim());
  return (length / nu) * u;
}

template <typename Scalar>
MixtureGradients<Scalar> mixture_gradients(const MixtureSpec<Scalar>& spec, const SpdGeometry<Scalar>& m,
                                           SelectionModel model = SelectionModel::kStrongMar) {
  spec.validate();
  MixtureGradients<Scalar> g;
  g.a = spec.a();
  g.b = spec.b();
  g.z_fil = spec.z_fil();
  if (!(g.z_fil > 0)) throw DegenerateError("mixture: Z_fil = 0, the selector keeps nothing");
  g.g_core = spec.core.mean();
  g.g_noise = spec.noise.mean();
  g.g_core_sel = g.g_core;
  g.g_noise_sel = g.g_noise;
  if (model == SelectionModel::kWeakBias) {
    std::mt19937_64 rng(spec.seed);
    const Scalar scale = m.norm(g.g_core);
    g.g_core_sel += random_direction(rng, m, spec.rho_c * scale);
    g.g_noise_sel += random_direction(rng, m, spec.rho_n * scale);
  }
  g.g_train = g.a * g.g_core + g.b * g.g_noise;
  g.g_fil = (g.a * (1 - spec.alpha) * g.g_core_sel + g.b * spec.beta * g.g_noise_sel) / g.z_fil;
  return g;
}

template <typename Scalar>
struct GainExact {
  Scalar formula = 0;
  Scalar direct = 0;
  Scalar align_train = 0;
  Scalar align_fil = 0;
};

// Closed form ab(1-alpha-beta)/Z (|g_c|^2 - <g_c, g_n>) next to the direct
// difference of alignments.
template <typename Scalar>
GainExact<Scalar> alignment_gain_exact(const MixtureSpec<Scalar>& spec, const SpdGeometry<Scalar>& m) {
  const MixtureGradients<Scalar> g = mixture_gradients(spec, m);
  GainExact<Scalar> r;
  r.align_train = alignment(g.g_core, g.g_train, m);
  r.align_fil = alignment(g.g_core, g.g_fil, m);
  r.direct = r.align_fil - r.align_train;
  r.formula = g.a * g.b * (1 - spec.alpha - spec.beta) / g.z_fil * (m.norm_sq(g.g_core) - m.inner(g.g_core, g.g_noise));
  return r;
}

// zeta_M = <g_c, g_n> / |g_c|^2, all in M^-1.
template <typename Scalar>
Scalar coherence(const VectorX<Scalar>& g_core, const VectorX<Scalar>& g_noise, const SpdGeometry<Scalar>& m) {
  const Scalar n2 = m.norm_sq(g_core);
  if (!(n2 > 0)) throw DegenerateError("coherence: g_core is zero");
  return m.inner(g_core, g_noise) / n2;
}

template <typename Scalar>
struct GainLowerBound {
  Scalar zeta = 0;
  Scalar bound = 0;
  Scalar gain = 0;
  bool holds = false;
};

template <typename Scalar>
GainLowerBound<Scalar> alignment_gain_lower_bound(const MixtureSpec<Scalar>& spec, const SpdGeometry<Scalar>& m,
                                                  Scalar tolerance = Scalar(1e-12)) {
  if (!spec.skilled()) throw PreconditionError("lower bound needs alpha + beta < 1");
  const MixtureGradients<Scalar> g = mixture_gradients(spec, m);
  GainLowerBound<Scalar> r;
  r.zeta = coherence(g.g_core, g.g_noise, m);
  r.bound = g.a * g.b * (1 - spec.alpha - spec.beta) * (1 - r.zeta) / g.z_fil * m.norm_sq(g.g_core);
  r.gain = alignment(g.g_core, g.g_fil, m) - alignment(g.g_core, g.g_train, m);
  r.holds = r.gain >= r.bound - tolerance;
  return r;
}

template <typename Scalar>
struct WeakBiasBound {
  Scalar zeta = 0;
  Scalar strong_term = 0;
  Scalar bias_penalty = 0;
  Scalar lower_bound = 0;
  Scalar gain_direct = 0;
  bool positivity_condition = false;
  bool holds = false;
};

// zeta_M is estimated from the unbiased component means; the selected means
// carry the seeded bias vectors.
template <typename Scalar>
WeakBiasBound<Scalar> weak_bias_gain_bound(const MixtureSpec<Scalar>& spec, const SpdGeometry<Scalar>& m,
                                           Scalar tolerance = Scalar(1e-9)) {
  const MixtureGradients<Scalar> g = mixture_gradients(spec, m, SelectionModel::kWeakBias);
  WeakBiasBound<Scalar> r;
  const Scalar core_sq = m.norm_sq(g.g_core);
  r.zeta = coherence(g.g_core, g.g_noise, m);
  const Scalar skill = g.a * g.b * (1 - spec.alpha - spec.beta) * (1 - r.zeta);
  const Scalar bias = g.a * (1 - spec.alpha) * spec.rho_c + g.b * spec.beta * spec.rho_n;
  r.strong_term = skill / g.z_fil * core_sq;
  r.bias_penalty = bias / g.z_fil * core_sq;
  r.lower_bound = r.strong_term - r.bias_penalty;
  r.gain_direct = alignment(g.g_core, g.g_fil, m) - alignment(g.g_core, g.g_train, m);
  r.positivity_condition = skill > bias;
  r.holds = r.gain_direct >= r.lower_bound - tolerance * (1 + std::abs(r.lower_bound));
  return r;
}

// Quadratic ideal risk 0.5 (x - x*)^T H (x - x*). The optimum is placed at
// theta + H^-1 g_core so that the risk gradient at theta is -g_core.
template <typename Scalar>
struct OneStepScenario {
  MatrixX<Scalar> h;
  VectorX<Scalar> theta;
  Scalar radius = 1;
  Scalar eta = 0;
};

template <typename Scalar>
struct OneStepResult {
  Scalar smoothness = 0;  // lambda_max(H)
  Scalar loss_start = 0;
  Scalar loss_fil = 0;
  Scalar loss_train = 0;
  Scalar difference = 0;  // loss_fil - loss_train
  Scalar bound_rhs = 0;
  Scalar eta_max = 0;
  Scalar gain = 0;
  Scalar step_norm_fil = 0;  // |M^-1 g_fil|_2
  Scalar step_norm_train = 0;
  bool descent_fil_ok = false;
  bool descent_train_ok = false;
  bool difference_bound_ok = false;
};

template <typename Scalar>
Scalar one_step_eta_max(Scalar gain, Scalar smoothness, Scalar norm_fil, Scalar norm_train, Scalar radius) {
  const Scalar top = std::max(norm_fil, norm_train);
  Scalar eta = 2 * gain / (smoothness * (norm_fil * norm_fil + norm_train * norm_train));
  if (top > 0) eta = std::min(eta, radius / top);
  return eta;
}

// One M-preconditioned step per arm from the same theta.
template <typename Scalar>
OneStepResult<Scalar> one_step_compare(const OneStepScenario<Scalar>& sc, const MixtureSpec<Scalar>& spec,
                                       const SpdGeometry<Scalar>& m, Scalar tolerance = Scalar(1e-12)) {
  if (!(sc.eta >= 0)) throw PreconditionError("one-step: eta must be >= 0");
  const SpdGeometry<Scalar> hg(sc.h);
  const MixtureGradients<Scalar> g = mixture_gradients(spec, m);
  const VectorX<Scalar> theta_star = sc.theta + hg.solve(g.g_core);
  auto risk = [&](const VectorX<Scalar>& x) {
    const VectorX<Scalar> e = x - theta_star;
    return Scalar(0.5) * e.dot(sc.h * e);
  };

  OneStepResult<Scalar> r;
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(sc.h, Eigen::EigenvaluesOnly);
  r.smoothness = es.eigenvalues().maxCoeff();
  const VectorX<Scalar> step_fil = m.solve(g.g_fil), step_train = m.solve(g.g_train);
  r.step_norm_fil = step_fil.norm();
  r.step_norm_train = step_train.norm();
  if (sc.eta * std::max(r.step_norm_fil, r.step_norm_train) > sc.radius * (1 + Scalar(1e-12)))
    throw PreconditionError("one-step: eta * max step norm exceeds the smoothness radius");

  const Scalar a_fil = alignment(g.g_core, g.g_fil, m), a_train = alignment(g.g_core, g.g_train, m);
  r.gain = a_fil - a_train;
  r.loss_start = risk(sc.theta);
  r.loss_fil = risk(sc.theta + sc.eta * step_fil);
  r.loss_train = risk(sc.theta + sc.eta * step_train);
  r.difference = r.loss_fil - r.loss_train;

  const Scalar half_l_eta2 = r.smoothness / 2 * sc.eta * sc.eta;
  const Scalar scale = 1 + std::abs(r.loss_start);
  r.descent_fil_ok =
      r.loss_fil <= r.loss_start - sc.eta * a_fil + half_l_eta2 * r.step_norm_fil * r.step_norm_fil + tolerance * scale;
  r.descent_train_ok = r.loss_train <=
                       r.loss_start - sc.eta * a_train + half_l_eta2 * r.step_norm_train * r.step_norm_train +
                           tolerance * scale;
  r.bound_rhs = -sc.eta * r.gain +
                half_l_eta2 * (r.step_norm_fil * r.step_norm_fil - r.step_norm_train * r.step_norm_train);
  r.difference_bound_ok = r.difference <= r.bound_rhs + tolerance * scale;
  r.eta_max = one_step_eta_max(r.gain, r.smoothness, r.step_norm_fil, r.step_norm_train, sc.radius);
  return r;
}

// Toy softmax model: context c has logits z(c) = W_c theta, so the gradient
// of logit k is row k of W_c and L_z is the largest row norm.
template <typename Scalar>
struct KnPair {
  int context = 0;
  int token = 0;
  Scalar weight = 0;  // training mass of the pair
  bool core = true;
};

template <typename Scalar>
struct KnScenario {
  std::vector<MatrixX<Scalar>> w;        // per context, K x d
  std::vector<Scalar> context_weights;   // context law, sums to 1
  VectorX<Scalar> theta;
  std::vector<KnPair<Scalar>> pairs;     // training population, weights sum to 1
  Scalar lambda = Scalar(1e-3);
  Scalar delta = Scalar(0.05);
};

template <typename Scalar>
struct KnBoundsResult {
  Scalar l_z = 0;
  Scalar mu = 0;
  std::size_t kn_pairs = 0;
  Scalar kn_mass = 0;
  Scalar score_violation = 0;         // max over pairs of |phi|_2 - 2 L_z (1-p)
  Scalar fisher_score_violation = 0;  // max of |phi|_{F^-1} - 2 L_z/sqrt(mu) (1-p)
  Scalar contribution = 0;
  Scalar contribution_bound = 0;
  Scalar impact = 0;
  Scalar impact_bound = 0;
  bool kn_set_empty = true;
  bool score_bound_ok = false;
  bool contribution_bound_ok = false;
  bool alignment_impact_ok = false;
};

template <typename Scalar>
VectorX<Scalar> toy_probs(const KnScenario<Scalar>& sc, int c) {
  const MatrixX<Scalar> z = (sc.w[static_cast<std::size_t>(c)] * sc.theta).transpose();
  return softmax<Scalar>(z).row(0).transpose();
}

// phi(c, t) = grad_theta log p(t | c) = W_c^T (e_t - p(.|c)).
template <typename Scalar>
VectorX<Scalar> toy_score(const KnScenario<Scalar>& sc, int c, int t) {
  VectorX<Scalar> e = -toy_probs(sc, c);
  e(t) += 1;
  return sc.w[static_cast<std::size_t>(c)].transpose() * e;
}

// Fisher under the model's own token law, contexts drawn from the context law.
template <typename Scalar>
MatrixX<Scalar> toy_fisher(const KnScenario<Scalar>& sc) {
  Population<Scalar> pop;
  for (std::size_t c = 0; c < sc.w.size(); ++c) {
    const VectorX<Scalar> p = toy_probs(sc, static_cast<int>(c));
    for (Eigen::Index t = 0; t < p.size(); ++t) {
      if (p(t) <= 0) continue;
      pop.phi.push_back(toy_score(sc, static_cast<int>(c), static_cast<int>(t)));
      pop.weights.push_back(sc.context_weights[c] * p(t));
    }
  }
  return damped_fisher(pop, sc.lambda);
}

template <typename Scalar>
KnBoundsResult<Scalar> kn_bounds_check(const KnScenario<Scalar>& sc, Scalar tolerance = Scalar(1e-12)) {
  if (!(sc.delta > 0 && sc.delta < 1)) throw ConfigError("kn bounds: delta must lie in (0, 1)");
  if (sc.w.empty() || sc.w.size() != sc.context_weights.size()) throw InputError("kn bounds: contexts malformed");
  if (sc.pairs.empty()) throw InputError("kn bounds: empty pair population");

  KnBoundsResult<Scalar> r;
  for (const MatrixX<Scalar>& w : sc.w) r.l_z = std::max(r.l_z, w.rowwise().norm().maxCoeff());
  const SpdGeometry<Scalar> f(toy_fisher(sc));
  r.mu = f.min_eigenvalue();
  if (!(r.mu > 0)) throw GeometryError("kn bounds: Fisher is not positive definite");
  const Scalar fisher_factor = 2 * r.l_z / std::sqrt(r.mu);

  const Eigen::Index d = sc.theta.size();
  VectorX<Scalar> kn_sum = VectorX<Scalar>::Zero(d), core_sum = VectorX<Scalar>::Zero(d);
  Scalar core_mass = 0;
  r.score_violation = -std::numeric_limits<Scalar>::infinity();
  r.fisher_score_violation = -std::numeric_limits<Scalar>::infinity();
  for (const KnPair<Scalar>& pr : sc.pairs) {
    const Scalar p = toy_probs(sc, pr.context)(pr.token);
    const VectorX<Scalar> phi = toy_score(sc, pr.context, pr.token);
    r.score_violation = std::max(r.score_violation, phi.norm() - 2 * r.l_z * (1 - p));
    r.fisher_score_violation = std::max(r.fisher_score_violation, f.norm(phi) - fisher_factor * (1 - p));
    if (p >= 1 - sc.delta) {
      kn_sum += pr.weight * phi;
      r.kn_mass += pr.weight;
      ++r.kn_pairs;
    }
    if (pr.core) {
      core_sum += pr.weight * phi;
      core_mass += pr.weight;
    }
  }
  const Scalar slack = tolerance * (1 + r.l_z);
  r.score_bound_ok = r.score_violation <= slack && r.fisher_score_violation <= slack / std::sqrt(r.mu);
  r.kn_set_empty = r.kn_pairs == 0;

  // The core direction is the mean score over core-labelled pairs.
  const VectorX<Scalar> g_core = core_mass > 0 ? VectorX<Scalar>(core_sum / core_mass) : core_sum;
  r.contribution = f.norm(kn_sum);
  r.contribution_bound = fisher_factor * sc.delta * r.kn_mass;
  // train minus (train \ S_KN) is exactly the S_KN part of the sum.
  r.impact = std::abs(alignment(g_core, kn_sum, f));
  r.impact_bound = r.contribution_bound * f.norm(g_core);
  r.contribution_bound_ok = r.contribution <= r.contribution_bound + slack;
  r.alignment_impact_ok = r.impact <= r.impact_bound + slack * (1 + f.norm(g_core));
  return r;
}

}  // namespace xtf
