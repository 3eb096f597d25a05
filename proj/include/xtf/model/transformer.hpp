#pragma once

#include <span>
#include <vector>

#include "xtf/model/params.hpp"
#include "xtf/numerics/tape.hpp"

namespace xtf {

// Everything the scorers need from one forward pass.
struct ForwardTrace {
  Matrix logits;                               // seq x vocab
  std::vector<std::vector<Matrix>> attention;  // [layer][head], seq x seq, causal
  Matrix input_embeddings;                     // seq x d_model (token + position)
};

struct ForwardGraph {
  std::vector<Var> params;  // leaves, canonical order
  Var input_embeddings;
  std::vector<std::vector<Var>> attention;
  Var logits;
};

// Records a pre-norm decoder forward pass on `tape`. Every tensor in
// `tensors` becomes a leaf, so tape.backward() returns gradients in
// canonical parameter order.
ForwardGraph build_forward(Tape& tape, const ModelConfig& config, const std::vector<Matrix>& tensors,
                           std::span<const int> tokens);

ForwardTrace forward(const ModelParams& params, std::span<const int> tokens);

// softmax of the final-position logits.
Vector next_token_probs(const ModelParams& params, std::span<const int> prefix);

// Raw row of the token-embedding table.
Vector embed(const ModelParams& params, int token_id);

// Tape-free incremental forward pass with a key/value cache. Each push runs
// one new position through every layer; the returned logits row equals the
// matching row of forward() bitwise. Holds a reference to `params`.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const ModelParams& params);
  // Appends `token` at the next position and returns the logits predicting
  // the token after it (1 x vocab).
  Matrix push(int token);
  int length() const { return length_; }

 private:
  const ModelParams& params_;
  Matrix output_t_;                 // d_model x vocab
  std::vector<Matrix> keys_;        // per layer, max_seq x d_model
  std::vector<Matrix> values_;      // per layer, max_seq x d_model
  int length_ = 0;
};

// Argmax decoding, ties to the lowest id. The stop token is included in the
// output when produced. Generation also halts at max_seq.
std::vector<int> greedy_generate(const ModelParams& params, std::span<const int> prefix, int max_new,
                                 int stop_id);

void check_tokens(const ModelConfig& config, std::span<const int> tokens);

}  // namespace xtf
