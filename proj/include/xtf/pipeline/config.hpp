#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "xtf/filtering/filtering.hpp"
#include "xtf/model/params.hpp"
#include "xtf/pipeline/dataset.hpp"
#include "xtf/scoring/scoring.hpp"
#include "xtf/training/training.hpp"

namespace xtf {

// UTF-8 "key = value" lines. '#' starts a comment, blank lines are skipped,
// later keys override earlier ones.
std::map<std::string, std::string> parse_key_values(std::string_view text, std::string_view source = "config");

struct PipelineConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  std::string checkpoint;  // base model; empty means pretrain one
  SynthConfig synth;
  std::size_t train_cap = 500;
  std::size_t val_cap = 60;
  std::size_t test_cap = 60;
  // Base model: pretrained on a clean auxiliary corpus drawn from its own
  // seed stream, task inputs disjoint from val/test.
  int base_samples = 2500;
  int base_general_samples = 1000;  // off-task text mixed into the base corpus
  bool base_answer_only = false;     // base task labels keep only the answer
  int base_epochs = 30;
  double base_learning_rate = 5e-3;
  ScoringConfig scoring;
  FilterConfig filter;
  TrainConfig train;

  PipelineConfig();
  // Sets every component seed from `seed` through named sub-seeds.
  void reseed(std::uint64_t new_seed);
  void validate() const;
  std::string to_text() const;
};

// Unknown keys and unparsable values raise ConfigError naming the key.
PipelineConfig parse_pipeline_config(std::string_view text, std::string_view source = "config");
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
void apply_setting(PipelineConfig& config, const std::string& key, const std::string& value);

}  // namespace xtf
