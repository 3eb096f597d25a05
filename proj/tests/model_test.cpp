#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "xtf/model/checkpoint.hpp"
#include "xtf/model/optimizer.hpp"
#include "xtf/model/transformer.hpp"
#include "xtf/numerics/gradcheck.hpp"

using namespace xtf;

namespace {

ModelConfig small_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.vocab_size = 99;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq = 16;
  c.seed = seed;
  return c;
}

std::vector<int> random_tokens(std::mt19937_64& rng, int n, int vocab) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (int& x : t) x = static_cast<int>(rng() % static_cast<std::uint64_t>(vocab));
  return t;
}

// Teacher-forced NLL of tokens[1..] given their prefixes.
double sequence_nll(Tape& tape, const ModelConfig& cfg, const std::vector<Matrix>& tensors,
                    const std::vector<int>& tokens, Var* loss_out = nullptr) {
  ForwardGraph g = build_forward(tape, cfg, tensors, tokens);
  std::vector<int> targets(tokens.size(), 0);
  std::vector<double> weights(tokens.size(), 0.0);
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    targets[i] = tokens[i + 1];
    weights[i] = 1.0;
  }
  Var loss = cross_entropy(g.logits, targets, weights);
  if (loss_out) *loss_out = loss;
  return loss.value()(0, 0);
}

}  // namespace

TEST_CASE("init is deterministic and validated") {
  const ModelParams a = init_params(small_config(4));
  const ModelParams b = init_params(small_config(4));
  const ModelParams c = init_params(small_config(5));
  REQUIRE(a.tensors.size() == b.tensors.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    CHECK(a.tensors[i] == b.tensors[i]);
    if (a.tensors[i] != c.tensors[i]) differs = true;
  }
  CHECK(differs);
  CHECK(a.at("layer0.ln1.gain") == Matrix::Ones(1, 8));
  CHECK(a.at("layer1.ff.b2") == Matrix::Zero(1, 8));

  ModelConfig bad = small_config();
  bad.d_model = 33;
  bad.n_heads = 2;
  CHECK_THROWS_AS(init_params(bad), ConfigError);
}

TEST_CASE("forward trace: normalized, causal, shaped") {
  std::mt19937_64 rng(2);
  const ModelParams p = init_params(small_config());
  for (int trial = 0; trial < 10; ++trial) {
    const auto tokens = random_tokens(rng, 1 + static_cast<int>(rng() % 16), 99);
    const ForwardTrace tr = forward(p, tokens);
    const auto n = static_cast<Eigen::Index>(tokens.size());
    CHECK(tr.logits.rows() == n);
    CHECK(tr.logits.cols() == 99);
    CHECK(tr.input_embeddings.rows() == n);
    REQUIRE(tr.attention.size() == 2);
    for (const auto& layer : tr.attention) {
      REQUIRE(layer.size() == 2);
      for (const Matrix& a : layer)
        for (Eigen::Index q = 0; q < n; ++q) {
          CHECK(std::abs(a.row(q).sum() - 1.0) < 1e-9);
          for (Eigen::Index k = q + 1; k < n; ++k) CHECK(a(q, k) == 0.0);
        }
    }
  }

  const std::vector<int> one = {42};
  const ForwardTrace tr = forward(p, one);
  CHECK(tr.logits.rows() == 1);
  CHECK(tr.logits.cols() == 99);
  for (const auto& layer : tr.attention)
    for (const Matrix& a : layer) CHECK(a == Matrix::Ones(1, 1));

  CHECK_THROWS_AS(forward(p, std::vector<int>(17, 1)), InputError);
  CHECK_THROWS_AS(forward(p, std::vector<int>{1, 99}), InputError);
  CHECK_THROWS_AS(forward(p, std::vector<int>{}), InputError);
}

TEST_CASE("forward is a pure function of params and tokens") {
  const ModelParams p = init_params(small_config(8));
  const std::vector<int> tokens = {5, 9, 2, 2, 70};
  const ForwardTrace a = forward(p, tokens), b = forward(p, tokens);
  CHECK(a.logits == b.logits);
  CHECK(a.attention[1][0] == b.attention[1][0]);
}

TEST_CASE("next_token_probs") {
  std::mt19937_64 rng(3);
  ModelConfig cfg = small_config();
  cfg.d_model = 64;
  cfg.d_ff = 128;
  cfg.max_seq = 32;
  const ModelParams p = init_params(cfg);
  for (int trial = 0; trial < 100; ++trial) {
    const auto prefix = random_tokens(rng, 1 + static_cast<int>(rng() % 20), 99);
    const Vector probs = next_token_probs(p, prefix);
    CHECK(std::abs(probs.sum() - 1.0) < 1e-12);
    if (trial < 10)
      for (Eigen::Index j = 0; j < probs.size(); ++j) CHECK(std::abs(probs(j) * 99.0 - 1.0) < 0.05);
  }

  // Product of teacher-forced probabilities equals exp(-NLL).
  const std::vector<int> seq = {97, 10, 20, 30, 40, 98};
  double log_prod = 0;
  for (std::size_t k = 1; k < seq.size(); ++k) {
    const Vector probs = next_token_probs(p, std::span<const int>(seq.data(), k));
    log_prod += std::log(probs(seq[k]));
  }
  Tape tape;
  const double nll = sequence_nll(tape, cfg, p.tensors, seq);
  CHECK(std::abs(std::exp(log_prod) - std::exp(-nll)) < 1e-9);
}

TEST_CASE("embed reads the raw table row") {
  ModelParams p = init_params(small_config());
  const Vector e = embed(p, 17);
  CHECK(e == embed(p, 17));
  CHECK(e == p.token_embedding().row(17).transpose());
  CHECK_THROWS_AS(embed(p, 99), InputError);

  std::vector<Matrix> grads;
  for (const Matrix& t : p.tensors) grads.push_back(Matrix::Zero(t.rows(), t.cols()));
  grads[ParamIndex::kTokenEmbedding](17, 0) = 1.0;
  OptimizerState state;
  optimizer_step(p.tensors, grads, state, {OptimizerMode::kSgd, 0.1});
  CHECK(embed(p, 17) != e);
}

TEST_CASE("greedy_generate") {
  const ModelParams p = init_params(small_config());
  const std::vector<int> prefix = {97, 3, 4};
  CHECK(greedy_generate(p, prefix, 0, 98).empty());
  const auto a = greedy_generate(p, prefix, 6, 98);
  CHECK(a == greedy_generate(p, prefix, 6, 98));
  CHECK(a.size() <= 6);
  // Halts at the context limit.
  CHECK(greedy_generate(p, prefix, 100, -1).size() == 13);
}

TEST_CASE("incremental decoder matches the full forward bitwise") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 0.5);
  for (bool tied : {true, false}) {
    ModelConfig cfg = small_config(9);
    cfg.tied_output = tied;
    ModelParams p = init_params(cfg);
    for (Matrix& t : p.tensors)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);
    const std::vector<int> seq = random_tokens(rng, cfg.max_seq, cfg.vocab_size);
    const Matrix full = forward(p, seq).logits;
    IncrementalDecoder dec(p);
    for (std::size_t k = 0; k < seq.size(); ++k) {
      const Matrix row = dec.push(seq[k]);
      CHECK((row.array() == full.row(static_cast<Eigen::Index>(k)).array()).all());
    }
    CHECK_THROWS_AS(dec.push(0), InputError);

    // Reference greedy decoding: a fresh full forward per step.
    const std::vector<int> prefix(seq.begin(), seq.begin() + 4);
    std::vector<int> ctx = prefix, want;
    for (int step = 0; step < 8; ++step) {
      const Matrix logits = forward(p, ctx).logits;
      Eigen::Index best = 0;
      for (Eigen::Index j = 1; j < logits.cols(); ++j)
        if (logits(logits.rows() - 1, j) > logits(logits.rows() - 1, best)) best = j;
      want.push_back(static_cast<int>(best));
      ctx.push_back(static_cast<int>(best));
    }
    CHECK(greedy_generate(p, prefix, 8, -1) == want);
  }
}

TEST_CASE("optimizer_step") {
  std::vector<Matrix> theta = {Matrix::Zero(1, 1)};
  OptimizerState state;
  optimizer_step(theta, {Matrix::Ones(1, 1)}, state, {OptimizerMode::kSgd, 0.1});
  CHECK(theta[0](0, 0) == doctest::Approx(-0.1));

  std::vector<Matrix> unchanged = {Matrix::Constant(2, 2, 0.3)};
  OptimizerState s2;
  optimizer_step(unchanged, {Matrix::Zero(2, 2)}, s2, {OptimizerMode::kAdam, 0.01});
  CHECK(unchanged[0] == Matrix::Constant(2, 2, 0.3));

  // First adaptive step: m_hat = g, v_hat = g^2, so |update| = eta*|g|/(|g|+eps).
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    std::vector<Matrix> w = {Matrix::Zero(1, 1)};
    OptimizerState s;
    optimizer_step(w, {Matrix::Constant(1, 1, c)}, s, {OptimizerMode::kAdam, 0.01});
    CHECK(std::abs(std::abs(w[0](0, 0)) - 0.01) < 1e-7);
  }

  std::vector<Matrix> w = {Matrix::Zero(1, 1)};
  OptimizerState s;
  try {
    optimizer_step(w, {Matrix::Constant(1, 1, std::nan(""))}, s, {OptimizerMode::kSgd, 0.1}, "sample-7");
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("sample-7") != std::string::npos);
  }
  CHECK(w[0](0, 0) == 0.0);
}

TEST_CASE("checkpoint round trip is bitwise stable") {
  ModelConfig cfg = small_config(9);
  cfg.tied_output = false;
  const ModelParams p = init_params(cfg);
  std::stringstream a(std::ios::in | std::ios::out | std::ios::binary);
  write_checkpoint(a, p);
  const std::string bytes = a.str();
  CHECK(bytes.substr(0, 4) == "XTFM");
  const ModelParams q = read_checkpoint(a);
  CHECK(q.config == p.config);
  CHECK(q.names == p.names);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) CHECK(q.tensors[i] == p.tensors[i]);
  std::stringstream b(std::ios::in | std::ios::out | std::ios::binary);
  write_checkpoint(b, q);
  CHECK(b.str() == bytes);

  std::stringstream bad("XTFX0000");
  CHECK_THROWS_AS(read_checkpoint(bad), InputError);
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(truncated), InputError);
}

TEST_CASE("tiny LM gradient matches central differences") {
  const std::vector<int> sample = {97, 12, 40, 3, 77, 98};
  for (bool tied : {true, false}) {
    ModelConfig cfg = small_config(21);
    cfg.tied_output = tied;
    ModelParams p = init_params(cfg);
    // Move away from the symmetric init so every path carries signal.
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 0.3);
    for (Matrix& t : p.tensors)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);

    const LossFn loss = [&](const std::vector<Matrix>& tensors) {
      Tape tape;
      return sequence_nll(tape, cfg, tensors, sample);
    };
    Tape tape;
    Var l;
    sequence_nll(tape, cfg, p.tensors, sample, &l);
    const auto grads = tape.backward(l);
    const FiniteDiffReport r = finite_diff_check(loss, grads, p.tensors, {1e-5, 0, 0});
    INFO("worst tensor " << p.names[r.worst_tensor] << " rel " << r.max_rel_error);
    CHECK(r.max_rel_error <= 1e-4);
  }
}
