#include "xtf/theory/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "xtf/io.hpp"

namespace xtf {
namespace {

constexpr int kDim = 8;
constexpr double kLambda = 1e-3;

std::mt19937_64 instance_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

Vector gaussian(std::mt19937_64& rng, int dim, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = n(rng);
  return v;
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::vector<SpdGeometry<double>> both_geometries(const MixtureSpec<double>& spec) {
  std::vector<SpdGeometry<double>> out;
  out.push_back(SpdGeometry<double>::identity(spec.core.dim()));
  out.emplace_back(damped_fisher(training_population(spec), kLambda));
  return out;
}

std::string describe(const MixtureSpec<double>& s, std::size_t index, int geometry) {
  std::ostringstream os;
  os << "{\"instance\":" << index << ",\"M\":\"" << (geometry == 0 ? "identity" : "damped_fisher")
     << "\",\"epsilon\":" << format_double17(s.epsilon) << ",\"alpha\":" << format_double17(s.alpha)
     << ",\"beta\":" << format_double17(s.beta) << ",\"rho_c\":" << format_double17(s.rho_c)
     << ",\"rho_n\":" << format_double17(s.rho_n) << ",\"seed\":" << s.seed << "}";
  return os.str();
}

// Tracks the worst violation and the instance that produced it.
struct Tracker {
  double worst = -std::numeric_limits<double>::infinity();
  std::string where;
  std::vector<double> seen;
  void see(double v, const std::function<std::string()>& what) {
    seen.push_back(v);
    if (v > worst) {
      worst = v;
      where = what();
    }
  }
  CheckResult finish(std::string name, std::size_t instances, double tolerance) const {
    CheckResult r;
    r.name = std::move(name);
    r.instances = instances;
    r.max_violation = instances == 0 ? 0.0 : worst;
    r.tolerance = tolerance;
    r.pass = instances > 0 && r.max_violation <= tolerance;
    r.evaluations = seen.size();
    r.failures = static_cast<std::size_t>(std::count_if(seen.begin(), seen.end(), [&](double v) { return v > tolerance; }));
    if (!r.pass) r.counterexample = where;
    return r;
  }
};

// Mixtures whose coherence is below one under both geometries.
MixtureSpec<double> incoherent_mixture(std::mt19937_64& rng) {
  for (;;) {
    MixtureSpec<double> spec = random_mixture(rng, kDim);
    bool ok = true;
    for (const auto& m : both_geometries(spec)) ok = ok && coherence(spec.core.mean(), spec.noise.mean(), m) < 1.0;
    if (ok) return spec;
  }
}

}  // namespace

Population<double> random_population(std::mt19937_64& rng, const Vector& center, int count, double spread) {
  Population<double> pop;
  double total = 0.0;
  for (int i = 0; i < count; ++i) {
    pop.phi.push_back(center + gaussian(rng, static_cast<int>(center.size()), spread));
    pop.weights.push_back(uniform(rng, 0.5, 1.5));
    total += pop.weights.back();
  }
  for (double& w : pop.weights) w /= total;
  return pop;
}

Matrix random_spd(std::mt19937_64& rng, int dim, double min_eig, double max_eig) {
  Matrix g(dim, dim);
  for (int i = 0; i < dim; ++i) g.row(i) = gaussian(rng, dim).transpose();
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ();
  Vector eig(dim);
  for (int i = 0; i < dim; ++i) eig(i) = uniform(rng, min_eig, max_eig);
  const Matrix h = q * eig.asDiagonal() * q.transpose();
  return 0.5 * (h + h.transpose());
}

MixtureSpec<double> random_mixture(std::mt19937_64& rng, int dim) {
  MixtureSpec<double> s;
  s.epsilon = uniform(rng, 0.05, 0.6);
  s.alpha = uniform(rng, 0.0, 0.45);
  s.beta = uniform(rng, 0.0, 0.45);
  s.core = random_population(rng, gaussian(rng, dim), 6, 0.5);
  s.noise = random_population(rng, gaussian(rng, dim), 6, 0.5);
  s.seed = rng();
  return s;
}

Population<double> training_population(const MixtureSpec<double>& spec) {
  Population<double> pop;
  auto append = [&](const Population<double>& part, double mass) {
    if (mass <= 0) return;
    for (std::size_t i = 0; i < part.phi.size(); ++i) {
      pop.phi.push_back(part.phi[i]);
      pop.weights.push_back(mass * part.weights[i]);
    }
  };
  append(spec.core, spec.a());
  append(spec.noise, spec.b());
  return pop;
}

KnScenario<double> random_kn_scenario(std::mt19937_64& rng, int contexts, int vocab, int dim, double sharpness) {
  KnScenario<double> sc;
  double total = 0.0;
  for (int c = 0; c < contexts; ++c) {
    Matrix w(vocab, dim);
    for (int k = 0; k < vocab; ++k) w.row(k) = gaussian(rng, dim).transpose();
    sc.w.push_back(std::move(w));
    sc.context_weights.push_back(uniform(rng, 0.5, 1.5));
    total += sc.context_weights.back();
  }
  for (double& q : sc.context_weights) q /= total;
  sc.theta = gaussian(rng, dim, sharpness);
  sc.lambda = kLambda;

  // Every (context, token) pair appears with a random mass, labelled core or
  // noise at random.
  double mass = 0.0;
  std::bernoulli_distribution core(0.7);
  for (int c = 0; c < contexts; ++c)
    for (int t = 0; t < vocab; ++t) {
      sc.pairs.push_back({c, t, uniform(rng, 0.1, 1.0), core(rng)});
      mass += sc.pairs.back().weight;
    }
  for (auto& p : sc.pairs) p.weight /= mass;
  return sc;
}

CheckResult check_fisher_spd(std::uint64_t seed, int instances) {
  Tracker t;
  for (int i = 0; i < instances; ++i) {
    std::mt19937_64 rng = instance_rng(seed, 1, static_cast<std::uint64_t>(i));
    const Population<double> pop = random_population(rng, gaussian(rng, kDim), 1 + i % 12, 1.0);
    const Matrix f = damped_fisher(pop, kLambda);
    const double asym = (f - f.transpose()).cwiseAbs().maxCoeff();
    const double floor = kLambda - SpdGeometry<double>(f).min_eigenvalue();
    t.see(std::max(asym, floor), [&] { return "{\"instance\":" + std::to_string(i) + "}"; });
  }
  // min eigenvalue >= lambda up to rounding of the eigensolver.
  return t.finish("fisher_spd_min_eig_ge_lambda", static_cast<std::size_t>(instances), 1e-12);
}

CheckResult check_gain_identity(std::uint64_t seed, int instances) {
  Tracker t;
  for (int i = 0; i < instances; ++i) {
    std::mt19937_64 rng = instance_rng(seed, 2, static_cast<std::uint64_t>(i));
    const MixtureSpec<double> spec = random_mixture(rng, kDim);
    const auto geoms = both_geometries(spec);
    for (std::size_t g = 0; g < geoms.size(); ++g) {
      const GainExact<double> r = alignment_gain_exact(spec, geoms[g]);
      t.see(std::abs(r.formula - r.direct) / (1.0 + std::abs(r.direct)),
            [&] { return describe(spec, static_cast<std::size_t>(i), static_cast<int>(g)); });
    }
  }
  return t.finish("alignment_gain_exact_identity", static_cast<std::size_t>(instances), 1e-9);
}

CheckResult check_gain_edge_cases(std::uint64_t seed, int instances) {
  Tracker t;
  for (int i = 0; i < instances; ++i) {
    std::mt19937_64 rng = instance_rng(seed, 3, static_cast<std::uint64_t>(i));
    MixtureSpec<double> clean = random_mixture(rng, kDim);
    clean.epsilon = 0.0;
    MixtureSpec<double> coin = random_mixture(rng, kDim);
    coin.beta = uniform(rng, 0.05, 1.0);
    coin.alpha = 1.0 - coin.beta;
    for (const MixtureSpec<double>* spec : {&clean, &coin}) {
      const auto geoms = both_geometries(*spec);
      for (std::size_t g = 0; g < geoms.size(); ++g) {
        const GainExact<double> r = alignment_gain_exact(*spec, geoms[g]);
        t.see(std::max(std::abs(r.formula), std::abs(r.direct)),
              [&] { return describe(*spec, static_cast<std::size_t>(i), static_cast<int>(g)); });
      }
    }
  }
  return t.finish("alignment_gain_edge_cases", static_cast<std::size_t>(instances), 1e-12);
}

CheckResult check_gain_lower_bound(std::uint64_t seed, int instances) {
  Tracker t;
  for (int i = 0; i < instances; ++i) {
    std::mt19937_64 rng = instance_rng(seed, 4, static_cast<std::uint64_t>(i));
    const MixtureSpec<double> spec = incoherent_mixture(rng);
    const auto geoms = both_geometries(spec);
    for (std::size_t g = 0; g < geoms.size(); ++g) {
      const GainLowerBound<double> r = alignment_gain_lower_bound(spec, geoms[g]);
      t.see(r.bound - r.gain, [&] { return describe(spec, static_cast<std::size_t>(i), static_cast<int>(g)); });
    }
  }
  return t.finish("alignment_gain_lower_bound", static_cast<std::size_t>(instances), 1e-12);
}

CheckResult check_weak_bias_bound(std::uint64_t seed, int instances) {
  Tracker t;
  for (int i = 0; i < instances; ++i) {
    std::mt19937_64 rng = instance_rng(seed, 5, static_cast<std::uint64_t>(i));
    MixtureSpec<double> spec = random_mixture(rng, kDim);
    spec.rho_c = uniform(rng, 0.0, 0.5);
    spec.rho_n = uniform(rng, 0.0, 0.5);
    const auto geoms = both_geometries(spec);
    for (std::size_t g = 0; g < geoms.size(); ++g) {
      const WeakBiasBound<double> r = weak_bias_gain_bound(spec, geoms[g]);
      t.see(r.lower_bound - r.gain_direct,
            [&] { return describe(spec, static_cast<std::size_t>(i), static_cast<int>(g)); });
    }
  }
  return t.finish("weak_bias_gain_bound", static_cast<std::size_t>(instances), 1e-9);
}

std::vector<CheckResult> check_one_step(std::uint64_t seed, int instances) {
  Tracker inequality, directional;
  std::size_t positive = 0;
  for (int i = 0; i < instances; ++i) {
    std::mt19937_64 rng = instance_rng(seed, 6, static_cast<std::uint64_t>(i));
    const MixtureSpec<double> spec = incoherent_mixture(rng);
    OneStepScenario<double> sc;
    sc.h = random_spd(rng, kDim, 0.1, 10.0);
    sc.theta = gaussian(rng, kDim);
    sc.radius = 1.0;
    const auto geoms = both_geometries(spec);
    for (std::size_t g = 0; g < geoms.size(); ++g) {
      sc.eta = 0.0;
      const double eta_max = one_step_compare(sc, spec, geoms[g]).eta_max;
      sc.eta = std::max(0.0, eta_max / 2);
      const OneStepResult<double> r = one_step_compare(sc, spec, geoms[g]);
      const double scale = 1.0 + std::abs(r.loss_start);
      auto where = [&] {
        std::ostringstream os;
        os << describe(spec, static_cast<std::size_t>(i), static_cast<int>(g)) << " eta=" << format_double17(sc.eta)
           << " difference=" << format_double17(r.difference) << " rhs=" << format_double17(r.bound_rhs);
        return os.str();
      };
      inequality.see((r.difference - r.bound_rhs) / scale, where);
      if (r.gain > 0) {
        ++positive;
        directional.see(r.difference / scale, where);
      }
    }
  }
  return {inequality.finish("one_step_difference_inequality", static_cast<std::size_t>(instances), 1e-12),
          directional.finish("one_step_filtered_not_worse", positive, 0.0)};
}

CheckResult check_kn_score_bound(std::uint64_t seed, int instances) {
  Tracker t;
  for (int i = 0; i < instances; ++i) {
    std::mt19937_64 rng = instance_rng(seed, 7, static_cast<std::uint64_t>(i));
    const int vocab = 2 + static_cast<int>(rng() % 9), dim = 1 + static_cast<int>(rng() % 8);
    const KnScenario<double> sc = random_kn_scenario(rng, 1, vocab, dim, uniform(rng, 0.1, 5.0));
    const int token = static_cast<int>(rng() % static_cast<std::uint64_t>(vocab));
    const double l_z = sc.w[0].rowwise().norm().maxCoeff();
    const double p = toy_probs(sc, 0)(token);
    const double excess = toy_score(sc, 0, token).norm() - 2.0 * l_z * (1.0 - p);
    t.see(excess / (1.0 + l_z), [&] { return "{\"instance\":" + std::to_string(i) + "}"; });
  }
  return t.finish("kn_euclidean_score_bound", static_cast<std::size_t>(instances), 1e-12);
}

std::vector<CheckResult> check_kn_contribution(std::uint64_t seed, int scenarios) {
  Tracker contribution, impact, fisher_score;
  std::size_t vacuous = 0, total = 0;
  for (int i = 0; i < scenarios; ++i) {
    std::mt19937_64 rng = instance_rng(seed, 8, static_cast<std::uint64_t>(i));
    KnScenario<double> sc = random_kn_scenario(rng, 4, 6, 5, uniform(rng, 1.0, 4.0));
    for (double delta : {0.1, 0.05, 0.01}) {
      sc.delta = delta;
      const KnBoundsResult<double> r = kn_bounds_check(sc);
      ++total;
      if (r.kn_set_empty) ++vacuous;
      auto where = [&] {
        return "{\"scenario\":" + std::to_string(i) + ",\"delta\":" + format_double17(delta) + "}";
      };
      contribution.see(r.contribution - r.contribution_bound, where);
      impact.see(r.impact - r.impact_bound, where);
      fisher_score.see(r.fisher_score_violation * std::sqrt(r.mu), where);
    }
  }
  CheckResult c = contribution.finish("kn_fisher_contribution_bound", total, 1e-10);
  CheckResult a = impact.finish("kn_alignment_impact_bound", total, 1e-10);
  CheckResult f = fisher_score.finish("kn_fisher_score_bound", total, 1e-10);
  const std::string note = std::to_string(vacuous) + " of " + std::to_string(total) + " had an empty KN set";
  c.note = a.note = note;
  return {f, c, a};
}

std::vector<CheckResult> verify_theory(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(check_fisher_spd(seed, 100));
  out.push_back(check_gain_identity(seed, 200));
  out.push_back(check_gain_edge_cases(seed, 50));
  out.push_back(check_gain_lower_bound(seed, 100));
  out.push_back(check_weak_bias_bound(seed, 100));
  for (CheckResult& r : check_one_step(seed, 50)) out.push_back(std::move(r));
  out.push_back(check_kn_score_bound(seed, 1000));
  for (CheckResult& r : check_kn_contribution(seed, 100)) out.push_back(std::move(r));
  return out;
}

std::string theory_report_json(std::uint64_t seed, const std::vector<CheckResult>& checks) {
  nlohmann::ordered_json report;
  report["seed"] = seed;
  bool all = true;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const CheckResult& c : checks) {
    nlohmann::ordered_json j;
    j["name"] = c.name;
    j["instances"] = c.instances;
    j["max_violation"] = c.max_violation;
    j["tolerance"] = c.tolerance;
    j["pass"] = c.pass;
    j["evaluations"] = c.evaluations;
    j["failures"] = c.failures;
    if (!c.note.empty()) j["note"] = c.note;
    if (!c.counterexample.empty()) j["counterexample"] = c.counterexample;
    list.push_back(std::move(j));
    all = all && c.pass;
  }
  report["all_pass"] = all;
  report["checks"] = std::move(list);
  return report.dump(2) + "\n";
}

std::string gain_sweep_csv(std::uint64_t seed) {
  std::mt19937_64 rng = instance_rng(seed, 9, 0);
  const Vector g_core = gaussian(rng, kDim);
  // A unit direction orthogonal to g_core fixes the coherence exactly.
  Vector u = gaussian(rng, kDim);
  u -= (u.dot(g_core) / g_core.squaredNorm()) * g_core;
  u /= u.norm();
  const auto identity = SpdGeometry<double>::identity(kDim);

  std::ostringstream os;
  os << "alpha,beta,epsilon,zeta_M,z_fil,gain_formula,gain_direct,lower_bound\n";
  for (double alpha : {0.0, 0.1, 0.2, 0.3, 0.4})
    for (double beta : {0.0, 0.1, 0.2, 0.3, 0.4})
      for (double eps : {0.1, 0.25, 0.5})
        for (double zeta : {-0.5, 0.0, 0.5, 0.9, 1.0}) {
          MixtureSpec<double> s;
          s.epsilon = eps;
          s.alpha = alpha;
          s.beta = beta;
          s.core = {{g_core}, {1.0}};
          s.noise = {{zeta * g_core + g_core.norm() * u}, {1.0}};
          const GainExact<double> g = alignment_gain_exact(s, identity);
          const GainLowerBound<double> lb = alignment_gain_lower_bound(s, identity);
          os << format_double17(alpha) << ',' << format_double17(beta) << ',' << format_double17(eps) << ','
             << format_double17(lb.zeta) << ',' << format_double17(s.z_fil()) << ',' << format_double17(g.formula)
             << ',' << format_double17(g.direct) << ',' << format_double17(lb.bound) << '\n';
        }
  return os.str();
}

}  // namespace xtf
