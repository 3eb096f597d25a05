#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "xtf/model/transformer.hpp"
#include "xtf/numerics/gradcheck.hpp"
#include "xtf/training/training.hpp"

using namespace xtf;

namespace {

constexpr int kStop = 98;

ModelConfig small_config(std::uint64_t seed = 5) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq = 24;
  c.seed = seed;
  return c;
}

ModelParams noisy_params(const ModelConfig& cfg) {
  ModelParams p = init_params(cfg);
  std::mt19937_64 rng(cfg.seed + 17);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Matrix& t : p.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);
  return p;
}

TokenizedExample random_example(std::mt19937_64& rng, const std::string& id) {
  TokenizedExample ex;
  ex.id = id;
  ex.input_ids.push_back(97);
  const int li = 1 + static_cast<int>(rng() % 5), lo = 1 + static_cast<int>(rng() % 6);
  for (int k = 0; k < li; ++k) ex.input_ids.push_back(static_cast<int>(rng() % 96));
  for (int k = 0; k < lo; ++k) ex.output_ids.push_back(static_cast<int>(rng() % 96));
  return ex;
}

// Copy task: BOS + three digits -> the same digits + EOS.
std::vector<TokenizedExample> copy_corpus(std::uint64_t seed, int n, const std::string& prefix) {
  std::mt19937_64 rng(seed);
  std::vector<TokenizedExample> out;
  for (int i = 0; i < n; ++i) {
    TokenizedExample ex;
    ex.id = prefix + std::to_string(i);
    ex.input_ids.push_back(97);
    for (int k = 0; k < 3; ++k) ex.input_ids.push_back(16 + static_cast<int>(rng() % 10));
    ex.output_ids.assign(ex.input_ids.begin() + 1, ex.input_ids.end());
    ex.output_ids.push_back(kStop);
    out.push_back(ex);
  }
  return out;
}

double log_softmax_at(const Matrix& logits, Eigen::Index row, int col) {
  const double mx = logits.row(row).maxCoeff();
  double total = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) total += std::exp(logits(row, j) - mx);
  return logits(row, col) - mx - std::log(total);
}

}  // namespace

TEST_CASE("masked loss gradients match finite differences") {
  const ModelConfig cfg = small_config();
  const ModelParams p = noisy_params(cfg);
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const TokenizedExample ex = random_example(rng, "fd" + std::to_string(trial));
    LabelNoise noise(ex.output_ids.size());
    for (auto& f : noise) f = static_cast<std::uint8_t>(rng() % 2);
    noise[rng() % noise.size()] = 0;  // keep at least one token
    const MaskedLoss ml = masked_loss(p, ex, noise);
    auto loss = [&](const std::vector<Matrix>& tensors) {
      ModelParams q = p;
      q.tensors = tensors;
      return masked_loss(q, ex, noise).loss;
    };
    const FiniteDiffReport r = finite_diff_check(loss, ml.grads, p.tensors, {1e-5, 24, 7});
    INFO("trial " << trial << " worst " << p.names[r.worst_tensor] << " rel " << r.max_rel_error);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("masked loss equals the sum of kept per-position losses") {
  const ModelConfig cfg = small_config();
  const ModelParams p = noisy_params(cfg);
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const TokenizedExample ex = random_example(rng, "s" + std::to_string(trial));
    LabelNoise noise(ex.output_ids.size());
    for (auto& f : noise) f = static_cast<std::uint8_t>(rng() % 3 == 0);
    const MaskedLoss masked = masked_loss(p, ex, noise);

    // Same quantities built from single-position losses.
    double loss = 0.0;
    std::vector<Matrix> grads;
    for (std::size_t t = 0; t < p.tensors.size(); ++t) grads.push_back(Matrix::Zero(p.tensors[t].rows(), p.tensors[t].cols()));
    for (std::size_t k = 0; k < ex.output_ids.size(); ++k) {
      if (noise[k]) continue;
      LabelNoise only(ex.output_ids.size(), 1);
      only[k] = 0;
      const MaskedLoss one = masked_loss(p, ex, only);
      loss += one.loss;
      for (std::size_t t = 0; t < grads.size(); ++t) grads[t] += one.grads[t];
    }
    CHECK(std::abs(masked.loss - loss) <= 1e-12 * (1 + loss));
    double worst = 0.0;
    for (std::size_t t = 0; t < grads.size(); ++t)
      worst = std::max(worst, (masked.grads[t] - grads[t]).cwiseAbs().maxCoeff());
    CHECK(worst <= 1e-12);

    // Forward logits do not depend on the mask.
    const MaskedLoss open = masked_loss(p, ex, {});
    CHECK((open.logits.array() == masked.logits.array()).all());
    CHECK((forward(p, ex.full_sequence()).logits.array() == masked.logits.array()).all());
  }
}

TEST_CASE("masked loss oracles") {
  const ModelParams p = noisy_params(small_config());
  const TokenizedExample ex{"m", {97, 10, 11}, {20, 21, 22}};
  const MaskedLoss mid = masked_loss(p, ex, LabelNoise{0, 1, 0});
  const double oracle = -log_softmax_at(mid.logits, 2, 20) - log_softmax_at(mid.logits, 4, 22);
  CHECK(std::abs(mid.loss - oracle) <= 1e-12);
  CHECK(mid.kept_tokens == 2);

  const MaskedLoss none = masked_loss(p, ex, LabelNoise{0, 0, 0});
  const MaskedLoss open = masked_loss(p, ex, {});
  CHECK(none.loss == open.loss);
  const double full = -log_softmax_at(open.logits, 2, 20) - log_softmax_at(open.logits, 3, 21) -
                      log_softmax_at(open.logits, 4, 22);
  CHECK(std::abs(open.loss - full) <= 1e-12);
  // Each masked token removes one non-negative term.
  CHECK(mid.loss <= open.loss);

  const MaskedLoss all = masked_loss(p, ex, LabelNoise{1, 1, 1});
  CHECK(all.loss == 0.0);
  for (const Matrix& g : all.grads) CHECK(g.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(masked_loss(p, ex, LabelNoise{0, 1}), ContractError);
  const auto w = loss_include_weights(ex, LabelNoise{0, 1, 0});
  CHECK(w == std::vector<double>{0, 0, 1, 0, 1, 0});
}

TEST_CASE("evaluate") {
  const ModelParams p = init_params(small_config());
  const auto set = copy_corpus(3, 20, "e");
  const double acc = evaluate(p, set, kStop);
  CHECK(acc == 0.0);
  auto reversed = set;
  std::reverse(reversed.begin(), reversed.end());
  CHECK(evaluate(p, reversed, kStop) == acc);
  CHECK_THROWS_AS(evaluate(p, std::span<const TokenizedExample>{}, kStop), InputError);
}

TEST_CASE("training is deterministic and empty masks change nothing") {
  const ModelParams init = init_params(small_config(9));
  const auto train_set = copy_corpus(1, 24, "t");
  const auto val_set = copy_corpus(2, 8, "v");
  TrainConfig tc;
  tc.epochs = 1;
  tc.seed = 4;
  const TrainResult a = train(init, train_set, {}, val_set, tc, kStop);
  const TrainResult b = train(init, train_set, {}, val_set, tc, kStop);
  const std::vector<LabelNoise> empty(train_set.size(), LabelNoise(4, 0));
  const TrainResult c = train(init, train_set, empty, val_set, tc, kStop);
  REQUIRE(a.best_epoch == 1);
  for (std::size_t t = 0; t < a.best.tensors.size(); ++t) {
    CHECK((a.best.tensors[t].array() == b.best.tensors[t].array()).all());
    CHECK((a.best.tensors[t].array() == c.best.tensors[t].array()).all());
  }
  CHECK(a.log[0].train_loss == c.log[0].train_loss);

  // Fully masked samples are dropped and counted.
  std::vector<LabelNoise> some = empty;
  some[0] = LabelNoise(4, 1);
  some[5] = LabelNoise(4, 1);
  const TrainResult d = train(init, train_set, some, val_set, tc, kStop);
  CHECK(d.log[0].dropped_fully_masked == 2);

  std::vector<LabelNoise> short_masks(3);
  CHECK_THROWS_AS(train(init, train_set, short_masks, val_set, tc, kStop), ContractError);
  tc.learning_rate = 0.0;
  CHECK_THROWS_AS(train(init, train_set, {}, val_set, tc, kStop), ConfigError);
}

TEST_CASE("non-finite loss aborts with the last good checkpoint") {
  ModelParams init = init_params(small_config(9));
  init.tensors[ParamIndex::kTokenEmbedding](20, 0) = std::numeric_limits<double>::infinity();
  const auto train_set = copy_corpus(1, 8, "t");
  const auto val_set = copy_corpus(2, 4, "v");
  TrainConfig tc;
  tc.epochs = 2;
  const TrainResult r = train(init, train_set, {}, val_set, tc, kStop);
  CHECK(r.aborted);
  CHECK(r.best_epoch == 0);
  CHECK(r.diagnostic.find("epoch 1") != std::string::npos);
}

TEST_CASE("copy task converges and validation selection picks the max") {
  ModelConfig cfg = small_config(11);
  cfg.d_model = 32;
  cfg.d_ff = 64;
  const auto train_set = copy_corpus(21, 200, "c");
  const auto val_set = copy_corpus(22, 40, "v");
  TrainConfig tc;
  tc.epochs = 30;
  tc.seed = 1;
  std::vector<EpochLog> seen;
  const TrainResult r = train(init_params(cfg), train_set, {}, val_set, tc, kStop,
                              [&](const EpochLog& e) { seen.push_back(e); });
  double best = 0.0;
  int first_best = 0;
  for (const EpochLog& e : r.log)
    if (e.val_acc > best) {
      best = e.val_acc;
      first_best = e.epoch;
    }
  MESSAGE("copy task best val acc " << best << " at epoch " << first_best);
  CHECK(best >= 0.9);
  CHECK(r.best_val_acc == best);
  CHECK(r.best_epoch == first_best);
  CHECK(evaluate(r.best, val_set, kStop) == best);
  CHECK(seen.size() == r.log.size());
  const std::string jsonl = epoch_log_jsonl(r.log);
  CHECK(jsonl.rfind("{\"epoch\":1,\"train_loss\":", 0) == 0);
}
