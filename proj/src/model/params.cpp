#include "xtf/model/params.hpp"

#include <random>

namespace xtf {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (vocab_size < 1) fail("vocab_size must be positive");
  if (d_model < 1) fail("d_model must be positive");
  if (n_layers < 1) fail("n_layers must be positive");
  if (n_heads < 1) fail("n_heads must be positive");
  if (d_ff < 1) fail("d_ff must be positive");
  if (max_seq < 1) fail("max_seq must be positive");
  if (d_model % n_heads != 0)
    fail("d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
}

std::vector<std::string> canonical_names(const ModelConfig& config) {
  static constexpr const char* kLayerNames[ParamIndex::kPerLayer] = {
      "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.wv", "attn.bv",
      "attn.wo",  "attn.bo",  "ln2.gain", "ln2.bias", "ff.w1", "ff.b1", "ff.w2", "ff.b2"};
  std::vector<std::string> names = {"token_embedding", "position_embedding"};
  for (int l = 0; l < config.n_layers; ++l)
    for (const char* n : kLayerNames) names.push_back("layer" + std::to_string(l) + "." + n);
  if (!config.tied_output) names.push_back("lm_head");
  return names;
}

const Matrix& ModelParams::at(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return tensors[i];
  throw InputError("no parameter named '" + std::string(name) + "'");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  auto gaussian = [&](int r, int c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  const int d = config.d_model, f = config.d_ff;

  ModelParams p;
  p.config = config;
  p.names = canonical_names(config);
  p.tensors.push_back(gaussian(config.vocab_size, d));
  p.tensors.push_back(gaussian(config.max_seq, d));
  for (int l = 0; l < config.n_layers; ++l) {
    p.tensors.push_back(Matrix::Ones(1, d));
    p.tensors.push_back(Matrix::Zero(1, d));
    for (int k = 0; k < 4; ++k) {
      p.tensors.push_back(gaussian(d, d));
      if (k != 1) p.tensors.push_back(Matrix::Zero(1, d));  // no key bias
    }
    p.tensors.push_back(Matrix::Ones(1, d));
    p.tensors.push_back(Matrix::Zero(1, d));
    p.tensors.push_back(gaussian(d, f));
    p.tensors.push_back(Matrix::Zero(1, f));
    p.tensors.push_back(gaussian(f, d));
    p.tensors.push_back(Matrix::Zero(1, d));
  }
  if (!config.tied_output) p.tensors.push_back(gaussian(d, config.vocab_size));
  return p;
}

}  // namespace xtf
