#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xtf/example.hpp"
#include "xtf/model/optimizer.hpp"
#include "xtf/model/params.hpp"

namespace xtf {

struct TrainConfig {
  double learning_rate = 1e-2;
  int epochs = 10;
  int batch_size = 8;
  OptimizerMode optimizer = OptimizerMode::kAdam;
  std::uint64_t seed = 0;  // shuffle order
  int report_every = 1;    // epochs between log lines passed to the callback

  void validate() const;
};

// Per-label-token noise flags of one example; empty means nothing is masked.
using LabelNoise = std::vector<std::uint8_t>;

// Loss weights over the rows of the full-sequence logits. Row r predicts
// token r + 1, so label k is scored at row input_length + k - 1. Input rows
// and noisy label rows get 0, the final row (which predicts nothing) gets 0.
std::vector<double> loss_include_weights(const TokenizedExample& ex, std::span<const std::uint8_t> noise);

struct MaskedLoss {
  double loss = 0.0;           // sum of NLL over kept label tokens
  std::vector<Matrix> grads;   // canonical parameter order
  Matrix logits;               // full sequence, unaffected by the mask
  std::size_t kept_tokens = 0;
};

// An empty `noise` span keeps every label token.
MaskedLoss masked_loss(const ModelParams& params, const TokenizedExample& ex, std::span<const std::uint8_t> noise);

// Greedy exact match. Generation gets label_length new tokens; both sides
// are cut after the first stop token before comparing.
bool exact_match(const ModelParams& params, const TokenizedExample& ex, int stop_id);
double evaluate(const ModelParams& params, std::span<const TokenizedExample> eval_set, int stop_id);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean per-sample loss over included samples
  double val_acc = 0.0;
  std::size_t dropped_fully_masked = 0;
};

struct TrainResult {
  ModelParams best;
  int best_epoch = 0;  // 0: no epoch completed, `best` is the input
  double best_val_acc = 0.0;
  std::vector<EpochLog> log;
  bool aborted = false;
  std::string diagnostic;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// `masks` is either empty (no masking) or holds one entry per training
// example. The shuffle order depends only on the seed and the training set
// size, so masked and unmasked runs see samples in the same order.
TrainResult train(const ModelParams& init, std::span<const TokenizedExample> train_set,
                  std::span<const LabelNoise> masks, std::span<const TokenizedExample> val_set,
                  const TrainConfig& config, int stop_id, const EpochCallback& on_epoch = {});

std::string epoch_log_jsonl(std::span<const EpochLog> log);

}  // namespace xtf
