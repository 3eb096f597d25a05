#include "xtf/training/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "xtf/model/transformer.hpp"
#include "xtf/parallel.hpp"
#include "xtf/scoring/scoring.hpp"

namespace xtf {

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("train: learning rate must be > 0");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (report_every < 1) throw ConfigError("train: report_every must be >= 1");
}

std::vector<double> loss_include_weights(const TokenizedExample& ex, std::span<const std::uint8_t> noise) {
  if (!noise.empty() && noise.size() != ex.output_ids.size())
    throw ContractError("example '" + ex.id + "': mask has " + std::to_string(noise.size()) +
                        " flags for a label of " + std::to_string(ex.output_ids.size()) + " tokens");
  std::vector<double> w(ex.input_ids.size() + ex.output_ids.size(), 0.0);
  for (std::size_t k = 0; k < ex.output_ids.size(); ++k)
    if (noise.empty() || noise[k] == 0) w[ex.input_ids.size() + k - 1] = 1.0;
  return w;
}

MaskedLoss masked_loss(const ModelParams& params, const TokenizedExample& ex, std::span<const std::uint8_t> noise) {
  check_example(params.config, ex);
  const std::vector<double> weights = loss_include_weights(ex, noise);
  const std::vector<int> seq = ex.full_sequence();
  std::vector<int> targets(seq.size(), 0);
  for (std::size_t r = 0; r + 1 < seq.size(); ++r) targets[r] = seq[r + 1];

  MaskedLoss out;
  out.kept_tokens = static_cast<std::size_t>(std::count(weights.begin(), weights.end(), 1.0));
  Tape tape;
  ForwardGraph g = build_forward(tape, params.config, params.tensors, seq);
  out.logits = g.logits.value();
  if (out.kept_tokens == 0) {
    out.grads.reserve(params.tensors.size());
    for (const Matrix& t : params.tensors) out.grads.push_back(Matrix::Zero(t.rows(), t.cols()));
    return out;
  }
  Var loss = cross_entropy(g.logits, targets, weights);
  out.loss = loss.value()(0, 0);
  out.grads = tape.backward(loss);
  return out;
}

bool exact_match(const ModelParams& params, const TokenizedExample& ex, int stop_id) {
  std::vector<int> got = greedy_generate(params, ex.input_ids, ex.label_length(), stop_id);
  std::vector<int> want = ex.output_ids;
  auto cut = [stop_id](std::vector<int>& v) {
    auto it = std::find(v.begin(), v.end(), stop_id);
    if (it != v.end()) v.erase(it + 1, v.end());
  };
  cut(got);
  cut(want);
  return got == want;
}

double evaluate(const ModelParams& params, std::span<const TokenizedExample> eval_set, int stop_id) {
  if (eval_set.empty()) throw InputError("evaluate: empty evaluation set");
  std::vector<std::uint8_t> hit(eval_set.size(), 0);
  parallel_for(eval_set.size(), [&](std::size_t i) { hit[i] = exact_match(params, eval_set[i], stop_id) ? 1 : 0; });
  const auto correct = std::count(hit.begin(), hit.end(), std::uint8_t{1});
  return static_cast<double>(correct) / static_cast<double>(eval_set.size());
}

namespace {

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

bool fully_masked(std::span<const LabelNoise> masks, std::size_t i) {
  if (masks.empty()) return false;
  const LabelNoise& m = masks[i];
  return !m.empty() && std::all_of(m.begin(), m.end(), [](std::uint8_t f) { return f != 0; });
}

}  // namespace

TrainResult train(const ModelParams& init, std::span<const TokenizedExample> train_set,
                  std::span<const LabelNoise> masks, std::span<const TokenizedExample> val_set,
                  const TrainConfig& config, int stop_id, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw InputError("train: empty training set");
  if (val_set.empty()) throw InputError("train: empty validation set");
  if (!masks.empty() && masks.size() != train_set.size())
    throw ContractError("train: " + std::to_string(masks.size()) + " masks for " + std::to_string(train_set.size()) +
                        " training examples");
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    check_example(init.config, train_set[i]);
    if (!masks.empty()) loss_include_weights(train_set[i], masks[i]);
  }

  TrainResult result;
  result.best = init;
  ModelParams current = init;
  OptimizerState state;
  const OptimizerHyper hyper{config.optimizer, config.learning_rate};
  double best_acc = -1.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order;
    std::size_t dropped = 0;
    for (std::size_t i : epoch_order(config.seed, epoch, train_set.size())) {
      if (fully_masked(masks, i))
        ++dropped;
      else
        order.push_back(i);
    }

    double loss_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t count = std::min(order.size() - start, static_cast<std::size_t>(config.batch_size));
      std::vector<MaskedLoss> outs(count);
      try {
        parallel_for(count, [&](std::size_t j) {
          const std::size_t i = order[start + j];
          try {
            outs[j] = masked_loss(current, train_set[i], masks.empty() ? std::span<const std::uint8_t>{} : masks[i]);
          } catch (const NumericError& e) {
            throw NumericError("example '" + train_set[i].id + "': " + e.what());
          }
        });
      } catch (const NumericError& e) {
        result.aborted = true;
        result.diagnostic = "non-finite value at epoch " + std::to_string(epoch) + ", " + e.what();
        return result;
      }

      // Reduce in batch order so the result is independent of scheduling.
      std::vector<Matrix> grads = std::move(outs[0].grads);
      for (std::size_t j = 0; j < count; ++j) {
        if (!std::isfinite(outs[j].loss)) {
          result.aborted = true;
          result.diagnostic = "non-finite loss at epoch " + std::to_string(epoch) + " on example '" +
                              train_set[order[start + j]].id + "'";
          return result;
        }
        loss_total += outs[j].loss;
        if (j == 0) continue;
        for (std::size_t t = 0; t < grads.size(); ++t) grads[t] += outs[j].grads[t];
      }
      for (Matrix& g : grads) g /= static_cast<double>(count);
      try {
        optimizer_step(current.tensors, grads, state, hyper, train_set[order[start]].id);
      } catch (const TrainingError& e) {
        result.aborted = true;
        result.diagnostic = "epoch " + std::to_string(epoch) + ": " + e.what();
        return result;
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = order.empty() ? 0.0 : loss_total / static_cast<double>(order.size());
    entry.val_acc = evaluate(current, val_set, stop_id);
    entry.dropped_fully_masked = dropped;
    result.log.push_back(entry);
    if (on_epoch && (epoch % config.report_every == 0 || epoch == config.epochs)) on_epoch(entry);

    if (entry.val_acc > best_acc) {
      best_acc = entry.val_acc;
      result.best = current;
      result.best_epoch = epoch;
      result.best_val_acc = entry.val_acc;
    }
  }
  return result;
}

std::string epoch_log_jsonl(std::span<const EpochLog> log) {
  std::string out;
  for (const EpochLog& e : log) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_acc"] = e.val_acc;
    j["dropped_fully_masked"] = e.dropped_fully_masked;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace xtf
