#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xtf/filtering/filtering.hpp"
#include "xtf/pipeline/quality.hpp"
#include "xtf/scoring/scoring.hpp"
#include "xtf/training/training.hpp"

namespace xtf {

struct ExperimentData {
  std::vector<TokenizedExample> train;
  std::vector<TokenizedExample> val;
  std::vector<TokenizedExample> test;
  std::vector<LabelNoise> truth;  // per training example; empty when unknown
};

struct ExperimentResult {
  std::uint64_t seed = 0;
  double normal_acc = 0.0;
  double xtf_acc = 0.0;
  double filtered_fraction = 0.0;
  FilterStats stats;
  std::vector<NoiseMask> masks;
  std::optional<FilterQuality> quality;
  TrainResult normal;
  TrainResult xtf;
};

// Fine-tunes twice from `base` with the same shuffle seed: once on every
// label token ("normal") and once with `masks` applied ("xtf"). Stats are
// recomputed from the masks; per-attribute counts are post-union.
ExperimentResult train_arms(const ModelParams& base, const ExperimentData& data, std::vector<NoiseMask> masks,
                            const TrainConfig& train_config, int stop_id, std::uint64_t seed);

// Scores the training split with `base`, filters it (the stop token is
// unmasked when filter.keep_stop), then runs train_arms. Stats are the
// filter's.
ExperimentResult run_experiment(const ModelParams& base, const ExperimentData& data, const ScoringConfig& scoring,
                                const FilterConfig& filter, const TrainConfig& train_config, int stop_id,
                                std::uint64_t seed);

std::string experiment_report_json(const ExperimentResult& r);

}  // namespace xtf
