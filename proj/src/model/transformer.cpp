#include "xtf/model/transformer.hpp"

#include <cmath>
#include <numeric>

namespace xtf {

void check_tokens(const ModelConfig& config, std::span<const int> tokens) {
  if (tokens.empty()) throw InputError("forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > config.max_seq)
    throw InputError("forward: sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq " +
                     std::to_string(config.max_seq));
  for (int t : tokens)
    if (t < 0 || t >= config.vocab_size)
      throw InputError("forward: token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
}

ForwardGraph build_forward(Tape& tape, const ModelConfig& config, const std::vector<Matrix>& tensors,
                           std::span<const int> tokens) {
  check_tokens(config, tokens);
  const auto expected = canonical_names(config).size();
  if (tensors.size() != expected)
    throw DimensionError("forward: expected " + std::to_string(expected) + " parameter tensors, got " +
                         std::to_string(tensors.size()));

  ForwardGraph g;
  g.params.reserve(tensors.size());
  for (const Matrix& t : tensors) g.params.push_back(tape.leaf(t));
  auto P = [&](std::size_t i) { return g.params[i]; };
  auto L = [&](int l, ParamIndex::LayerSlot s) { return g.params[ParamIndex::layer(l, s)]; };

  const int n = static_cast<int>(tokens.size());
  std::vector<int> positions(static_cast<std::size_t>(n));
  std::iota(positions.begin(), positions.end(), 0);

  Var x = add(gather_rows(P(ParamIndex::kTokenEmbedding), tokens),
              gather_rows(P(ParamIndex::kPositionEmbedding), positions));
  g.input_embeddings = x;

  const int dh = config.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  g.attention.resize(static_cast<std::size_t>(config.n_layers));

  for (int l = 0; l < config.n_layers; ++l) {
    using S = ParamIndex;
    Var h = layer_norm(x, L(l, S::kLn1Gain), L(l, S::kLn1Bias));
    Var q = add_row(matmul(h, L(l, S::kWq)), L(l, S::kBq));
    Var k = matmul(h, L(l, S::kWk));
    Var v = add_row(matmul(h, L(l, S::kWv)), L(l, S::kBv));

    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(config.n_heads));
    for (int hd = 0; hd < config.n_heads; ++hd) {
      Var qh = slice_cols(q, hd * dh, dh);
      Var kh = slice_cols(k, hd * dh, dh);
      Var vh = slice_cols(v, hd * dh, dh);
      Var weights = causal_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dh));
      g.attention[static_cast<std::size_t>(l)].push_back(weights);
      heads.push_back(matmul(weights, vh));
    }
    Var attn = add_row(matmul(concat_cols(heads), L(l, S::kWo)), L(l, S::kBo));
    x = add(x, attn);

    Var h2 = layer_norm(x, L(l, S::kLn2Gain), L(l, S::kLn2Bias));
    Var ff = add_row(matmul(gelu(add_row(matmul(h2, L(l, S::kW1)), L(l, S::kB1))), L(l, S::kW2)),
                     L(l, S::kB2));
    x = add(x, ff);
  }

  // Logits read the residual stream directly (no final norm), which keeps
  // freshly initialized logits near zero.
  if (config.tied_output)
    g.logits = matmul(x, transpose(P(ParamIndex::kTokenEmbedding)));
  else
    g.logits = matmul(x, P(ParamIndex::lm_head(config.n_layers)));
  return g;
}

ForwardTrace forward(const ModelParams& params, std::span<const int> tokens) {
  Tape tape;
  ForwardGraph g = build_forward(tape, params.config, params.tensors, tokens);
  ForwardTrace trace;
  trace.logits = g.logits.value();
  trace.input_embeddings = g.input_embeddings.value();
  trace.attention.resize(g.attention.size());
  for (std::size_t l = 0; l < g.attention.size(); ++l)
    for (Var a : g.attention[l]) trace.attention[l].push_back(a.value());
  return trace;
}

Vector next_token_probs(const ModelParams& params, std::span<const int> prefix) {
  Tape tape;
  ForwardGraph g = build_forward(tape, params.config, params.tensors, prefix);
  const Matrix& logits = g.logits.value();
  Matrix last = logits.row(logits.rows() - 1);
  return softmax(last).row(0).transpose();
}

Vector embed(const ModelParams& params, int token_id) {
  if (token_id < 0 || token_id >= params.config.vocab_size)
    throw InputError("embed: token id " + std::to_string(token_id) + " outside vocabulary");
  return params.token_embedding().row(token_id).transpose();
}

IncrementalDecoder::IncrementalDecoder(const ModelParams& params) : params_(params) {
  const ModelConfig& c = params.config;
  const auto expected = canonical_names(c).size();
  if (params.tensors.size() != expected)
    throw DimensionError("decoder: expected " + std::to_string(expected) + " parameter tensors, got " +
                         std::to_string(params.tensors.size()));
  output_t_ = c.tied_output ? Matrix(params.token_embedding().transpose())
                            : params.tensors[ParamIndex::lm_head(c.n_layers)];
  keys_.assign(static_cast<std::size_t>(c.n_layers), Matrix(c.max_seq, c.d_model));
  values_.assign(static_cast<std::size_t>(c.n_layers), Matrix(c.max_seq, c.d_model));
}

Matrix IncrementalDecoder::push(int token) {
  const ModelConfig& c = params_.config;
  if (length_ >= c.max_seq) throw InputError("decoder: sequence would exceed max_seq " + std::to_string(c.max_seq));
  if (token < 0 || token >= c.vocab_size)
    throw InputError("decoder: token id " + std::to_string(token) + " outside vocabulary of " +
                     std::to_string(c.vocab_size));
  const auto& T = params_.tensors;
  auto L = [&](int l, ParamIndex::LayerSlot s) -> const Matrix& { return T[ParamIndex::layer(l, s)]; };
  const Eigen::Index pos = length_, n = length_ + 1;
  const int dh = c.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  // Same kernels and accumulation order as build_forward, one row at a time.
  Matrix x = T[ParamIndex::kTokenEmbedding].row(token) + T[ParamIndex::kPositionEmbedding].row(pos);
  for (int l = 0; l < c.n_layers; ++l) {
    using S = ParamIndex;
    Matrix& keys = keys_[static_cast<std::size_t>(l)];
    Matrix& values = values_[static_cast<std::size_t>(l)];
    const Matrix h = layer_norm_values(x, L(l, S::kLn1Gain), L(l, S::kLn1Bias));
    Matrix q = matmul(h, L(l, S::kWq));
    q.row(0) += L(l, S::kBq).row(0);
    keys.row(pos) = matmul(h, L(l, S::kWk)).row(0);
    Matrix v = matmul(h, L(l, S::kWv));
    v.row(0) += L(l, S::kBv).row(0);
    values.row(pos) = v.row(0);

    Matrix heads(1, c.d_model);
    for (int hd = 0; hd < c.n_heads; ++hd) {
      const Matrix qh = q.middleCols(hd * dh, dh);
      const Matrix kt = keys.block(0, hd * dh, n, dh).transpose();
      const Matrix scores = matmul(qh, kt) * inv_sqrt_dh;
      Matrix weights(1, n);
      softmax_prefix(scores.data(), weights.data(), n);
      const Matrix vh = values.block(0, hd * dh, n, dh);
      heads.middleCols(hd * dh, dh) = matmul(weights, vh);
    }
    Matrix attn = matmul(heads, L(l, S::kWo));
    attn.row(0) += L(l, S::kBo).row(0);
    x = x + attn;

    const Matrix h2 = layer_norm_values(x, L(l, S::kLn2Gain), L(l, S::kLn2Bias));
    Matrix hidden = matmul(h2, L(l, S::kW1));
    hidden.row(0) += L(l, S::kB1).row(0);
    Matrix ff = matmul(gelu_values(hidden), L(l, S::kW2));
    ff.row(0) += L(l, S::kB2).row(0);
    x = x + ff;
  }
  ++length_;
  return matmul(x, output_t_);
}

std::vector<int> greedy_generate(const ModelParams& params, std::span<const int> prefix, int max_new,
                                 int stop_id) {
  std::vector<int> out;
  if (max_new <= 0 || static_cast<int>(prefix.size()) >= params.config.max_seq) return out;
  check_tokens(params.config, prefix);
  IncrementalDecoder decoder(params);
  Matrix logits;
  for (int t : prefix) logits = decoder.push(t);
  for (int step = 0; step < max_new; ++step) {
    int best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j)
      if (logits(0, j) > logits(0, best)) best = static_cast<int>(j);
    out.push_back(best);
    if (best == stop_id || step + 1 == max_new || decoder.length() + 1 >= params.config.max_seq) break;
    logits = decoder.push(best);
  }
  return out;
}

}  // namespace xtf
