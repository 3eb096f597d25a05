#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xtf/pipeline/config.hpp"
#include "xtf/pipeline/dataset.hpp"
#include "xtf/training/experiment.hpp"

namespace xtf {

// Splits with the configured caps. Training keeps its noisy labels and the
// ground-truth flags; val/test labels are cleaned.
ExperimentData prepare_data(const PipelineConfig& config, std::span<const DatasetRecord> records);

// Seeded init followed by training on a clean auxiliary corpus from the
// "base" seed stream: task samples plus general text. Task items whose input
// appears in `exclude` are skipped. base_samples == 0 or base_epochs == 0
// returns the raw init.
ModelParams pretrain_base(const PipelineConfig& config, std::span<const TokenizedExample> exclude = {},
                          const EpochCallback& on_epoch = {});

// Loads config.checkpoint when set, otherwise pretrains.
ModelParams base_model(const PipelineConfig& config, std::span<const TokenizedExample> exclude = {});

// gen_synth -> split -> base -> score -> filter -> two fine-tuning arms.
ExperimentResult run_seed(const PipelineConfig& config);

// One base for all seeds, built from config.seed with every seed's val/test
// inputs excluded; then run_seed's steps per seed (config reseeded). on_result
// sees each result as it completes.
std::vector<ExperimentResult> run_seeds(const PipelineConfig& config, std::span<const std::uint64_t> seeds,
                                        const std::function<void(const ExperimentResult&)>& on_result = {});

std::string experiment_csv_header();
std::string experiment_csv_row(const ExperimentResult& r);

}  // namespace xtf
