#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "xtf/numerics/dense.hpp"

namespace xtf {

struct ModelConfig {
  int vocab_size = 99;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 128;
  int max_seq = 128;
  std::uint64_t seed = 0;
  bool tied_output = true;

  // Throws ConfigError on the first violated constraint.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Canonical tensor order:
//   token_embedding, position_embedding,
//   per layer: ln1.{gain,bias} attn.{wq,bq,wk,wv,bv,wo,bo}
//              ln2.{gain,bias} ff.{w1,b1,w2,b2}
//   lm_head (untied configs only)
// Biases and gains are 1xN rows. Weight matrices map rows (d_in x d_out).
// Keys carry no bias: it would shift every score in a query row equally.
struct ParamIndex {
  static constexpr std::size_t kTokenEmbedding = 0;
  static constexpr std::size_t kPositionEmbedding = 1;
  static constexpr std::size_t kPerLayer = 15;

  enum LayerSlot : std::size_t {
    kLn1Gain, kLn1Bias, kWq, kBq, kWk, kWv, kBv, kWo, kBo,
    kLn2Gain, kLn2Bias, kW1, kB1, kW2, kB2,
  };

  static constexpr std::size_t layer(int l, LayerSlot slot) {
    return 2 + static_cast<std::size_t>(l) * kPerLayer + slot;
  }
  static constexpr std::size_t lm_head(int n_layers) { return 2 + static_cast<std::size_t>(n_layers) * kPerLayer; }
};

struct ModelParams {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Matrix> tensors;

  const Matrix& token_embedding() const { return tensors[ParamIndex::kTokenEmbedding]; }
  const Matrix& at(std::string_view name) const;
  std::size_t parameter_count() const;
};

// Seeded init: N(0, 0.02) weights and embeddings, zero biases, unit gains.
ModelParams init_params(const ModelConfig& config);

std::vector<std::string> canonical_names(const ModelConfig& config);

}  // namespace xtf
