#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xtf/theory/theory.hpp"

// Seeded random instances and the sweep checks behind `verify-theory`.

namespace xtf {

Population<double> random_population(std::mt19937_64& rng, const Vector& center, int count, double spread);
Matrix random_spd(std::mt19937_64& rng, int dim, double min_eig, double max_eig);
MixtureSpec<double> random_mixture(std::mt19937_64& rng, int dim);
// The Fisher of the training mixture: core weights scaled by a, noise by b.
Population<double> training_population(const MixtureSpec<double>& spec);
KnScenario<double> random_kn_scenario(std::mt19937_64& rng, int contexts, int vocab, int dim, double sharpness);

struct CheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_violation = 0.0;  // worst excess over the checked inequality or identity
  double tolerance = 0.0;
  bool pass = false;
  std::size_t evaluations = 0;  // instances times geometries (or deltas)
  std::size_t failures = 0;
  std::string note;
  std::string counterexample;  // worst instance, filled when the check fails
};

CheckResult check_fisher_spd(std::uint64_t seed, int instances);
CheckResult check_gain_identity(std::uint64_t seed, int instances);
CheckResult check_gain_edge_cases(std::uint64_t seed, int instances);
CheckResult check_gain_lower_bound(std::uint64_t seed, int instances);
CheckResult check_weak_bias_bound(std::uint64_t seed, int instances);
// Returns {difference inequality, directional claim}.
std::vector<CheckResult> check_one_step(std::uint64_t seed, int instances);
CheckResult check_kn_score_bound(std::uint64_t seed, int instances);
// Contribution and alignment-impact bounds over delta in {0.1, 0.05, 0.01}.
std::vector<CheckResult> check_kn_contribution(std::uint64_t seed, int scenarios);

std::vector<CheckResult> verify_theory(std::uint64_t seed);
std::string theory_report_json(std::uint64_t seed, const std::vector<CheckResult>& checks);

// Gain over a grid of (alpha, beta, epsilon, zeta_M) with M = I.
std::string gain_sweep_csv(std::uint64_t seed);

}  // namespace xtf
