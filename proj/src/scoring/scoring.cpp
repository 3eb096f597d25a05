#include "xtf/scoring/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xtf/io.hpp"
#include "xtf/parallel.hpp"

namespace xtf {

RiAggregation parse_ri_aggregation(std::string_view name) {
  if (name == "mean") return RiAggregation::kMean;
  if (name == "sum") return RiAggregation::kSum;
  if (name == "last_layer_mean") return RiAggregation::kLastLayerMean;
  throw ConfigError("ri_agg must be mean, sum or last_layer_mean, got '" + std::string(name) + "'");
}

DistanceKind parse_distance_kind(std::string_view name) {
  if (name == "euclidean") return DistanceKind::kEuclidean;
  if (name == "cosine") return DistanceKind::kCosine;
  throw ConfigError("distance must be euclidean or cosine, got '" + std::string(name) + "'");
}

DomainSource parse_domain_source(std::string_view name) {
  if (name == "all_tokens") return DomainSource::kAllTokens;
  if (name == "unique_tokens") return DomainSource::kUniqueTokens;
  throw ConfigError("domain_source must be all_tokens or unique_tokens, got '" + std::string(name) + "'");
}

std::string_view to_string(RiAggregation a) {
  switch (a) {
    case RiAggregation::kMean: return "mean";
    case RiAggregation::kSum: return "sum";
    case RiAggregation::kLastLayerMean: return "last_layer_mean";
  }
  return "?";
}

std::string_view to_string(DistanceKind d) { return d == DistanceKind::kEuclidean ? "euclidean" : "cosine"; }

std::string_view to_string(DomainSource s) {
  return s == DomainSource::kAllTokens ? "all_tokens" : "unique_tokens";
}

void check_example(const ModelConfig& config, const TokenizedExample& example) {
  const std::string where = "example '" + example.id + "': ";
  if (example.input_ids.empty()) throw InputError(where + "empty input");
  if (example.output_ids.empty()) throw InputError(where + "empty label");
  try {
    check_tokens(config, example.full_sequence());
  } catch (const InputError& e) {
    throw InputError(where + e.what());
  }
}

std::vector<double> score_ri(const ForwardTrace& trace, const TokenizedExample& example, RiAggregation agg) {
  const int n = example.input_length() + example.label_length();
  const int n_layers = static_cast<int>(trace.attention.size());
  const int first_layer = agg == RiAggregation::kLastLayerMean ? n_layers - 1 : 0;

  std::vector<double> s(static_cast<std::size_t>(example.label_length()));
  for (int k = 0; k < example.label_length(); ++k) {
    const int p = example.input_length() + k;
    // The final position has no later queries; fall back to self-attention.
    const int q_begin = p + 1 < n ? p + 1 : p;
    double total = 0.0;
    std::size_t count = 0;
    for (int l = first_layer; l < n_layers; ++l)
      for (const Matrix& a : trace.attention[static_cast<std::size_t>(l)])
        for (int q = q_begin; q < n; ++q) {
          total += a(q, p);
          ++count;
        }
    s[static_cast<std::size_t>(k)] = agg == RiAggregation::kSum ? total : total / static_cast<double>(count);
  }
  return s;
}

std::pair<std::vector<double>, std::vector<double>> score_kn(const ForwardTrace& trace,
                                                             const TokenizedExample& example) {
  const auto m = static_cast<std::size_t>(example.label_length());
  std::vector<double> pcp(m), s_kn(m);
  for (std::size_t k = 0; k < m; ++k) {
    const Eigen::Index row = example.input_length() + static_cast<Eigen::Index>(k) - 1;
    const Matrix probs = softmax<double>(trace.logits.row(row));
    pcp[k] = std::clamp(probs(0, example.output_ids[k]), 0.0, 1.0);
    s_kn[k] = 1.0 - pcp[k];
  }
  return {pcp, s_kn};
}

std::vector<double> score_ri(const ModelParams& params, const TokenizedExample& example, RiAggregation agg) {
  check_example(params.config, example);
  return score_ri(forward(params, example.full_sequence()), example, agg);
}

std::pair<std::vector<double>, std::vector<double>> score_kn(const ModelParams& params,
                                                             const TokenizedExample& example) {
  check_example(params.config, example);
  return score_kn(forward(params, example.full_sequence()), example);
}

double embedding_distance(const Vector& a, const Vector& b, DistanceKind kind) {
  if (kind == DistanceKind::kEuclidean) return (a - b).norm();
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

DomainVector compute_domain_vector(const ModelParams& params, std::span<const TokenizedExample> dataset,
                                   DomainSource source, DistanceKind distance) {
  if (dataset.empty()) throw InputError("domain vector: empty dataset");
  std::set<int> distinct;
  Vector total = Vector::Zero(params.config.d_model);
  std::size_t count = 0;
  for (const TokenizedExample& ex : dataset)
    for (const auto* ids : {&ex.input_ids, &ex.output_ids})
      for (int t : *ids) {
        distinct.insert(t);
        if (source == DomainSource::kAllTokens) {
          total += embed(params, t);
          ++count;
        }
      }
  if (source == DomainSource::kUniqueTokens)
    for (int t : distinct) {
      total += embed(params, t);
      ++count;
    }
  if (count == 0) throw InputError("domain vector: dataset has no tokens");

  DomainVector d;
  d.centroid = total / static_cast<double>(count);
  bool first = true;
  for (int t : distinct) {
    const double dist = embedding_distance(embed(params, t), d.centroid, distance);
    d.token_distances[t] = dist;
    d.d_min = first ? dist : std::min(d.d_min, dist);
    d.d_max = first ? dist : std::max(d.d_max, dist);
    first = false;
  }
  return d;
}

std::vector<double> score_tr(const DomainVector& domain, const TokenizedExample& example) {
  std::vector<double> s;
  s.reserve(example.output_ids.size());
  const double range = domain.d_max - domain.d_min;
  for (int t : example.output_ids) {
    const auto it = domain.token_distances.find(t);
    if (it == domain.token_distances.end())
      throw ConsistencyError("example '" + example.id + "': token " + std::to_string(t) +
                             " is not in the domain table (scores and domain built from different data?)");
    if (range <= 0.0) {
      s.push_back(1.0);
      continue;
    }
    s.push_back(std::clamp(1.0 - (it->second - domain.d_min) / range, 0.0, 1.0));
  }
  return s;
}

ScoredDataset score_dataset(const ModelParams& params, std::span<const TokenizedExample> dataset,
                            const ScoringConfig& config) {
  ScoredDataset out;
  std::vector<TokenizedExample> good;
  for (const TokenizedExample& ex : dataset) {
    try {
      check_example(params.config, ex);
      good.push_back(ex);
    } catch (const InputError& e) {
      out.failures.push_back({ex.id, e.what()});
    }
  }
  if (good.empty()) {
    if (dataset.empty()) throw InputError("score_dataset: empty dataset");
    return out;
  }
  out.domain = compute_domain_vector(params, good, config.domain_source, config.distance);

  out.scores.resize(good.size());
  parallel_for(good.size(), [&](std::size_t i) {
    const TokenizedExample& ex = good[i];
    const ForwardTrace trace = forward(params, ex.full_sequence());
    TokenScores& s = out.scores[i];
    s.id = ex.id;
    s.s_ri = score_ri(trace, ex, config.ri_agg);
    std::tie(s.pcp, s.s_kn) = score_kn(trace, ex);
    s.s_tr = score_tr(out.domain, ex);
  });
  out.forward_passes = good.size();
  return out;
}

namespace {

void append_array(std::string& out, const char* key, const std::vector<double>& v) {
  out += ",\"";
  out += key;
  out += "\":[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double17(v[i]);
  }
  out += ']';
}

std::vector<double> read_array(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_array()) throw InputError(where + ": missing array '" + key + "'");
  std::vector<double> v;
  for (const auto& x : j[key]) {
    if (!x.is_number()) throw InputError(where + ": non-numeric entry in '" + key + "'");
    v.push_back(x.get<double>());
  }
  return v;
}

}  // namespace

std::string scores_to_jsonl(std::span<const TokenScores> scores) {
  std::string out;
  for (const TokenScores& s : scores) {
    out += "{\"id\":" + nlohmann::json(s.id).dump();
    append_array(out, "pcp", s.pcp);
    append_array(out, "s_ri", s.s_ri);
    append_array(out, "s_kn", s.s_kn);
    append_array(out, "s_tr", s.s_tr);
    out += "}\n";
  }
  return out;
}

void write_scores(const std::filesystem::path& path, std::span<const TokenScores> scores) {
  write_file_atomic(path, scores_to_jsonl(scores));
}

std::vector<TokenScores> read_scores(const std::filesystem::path& path) {
  std::vector<TokenScores> out;
  const auto lines = read_jsonl_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(where + ": " + e.what());
    }
    if (!j.contains("id") || !j["id"].is_string()) throw InputError(where + ": missing string 'id'");
    TokenScores s;
    s.id = j["id"].get<std::string>();
    s.pcp = read_array(j, "pcp", where);
    s.s_ri = read_array(j, "s_ri", where);
    s.s_kn = read_array(j, "s_kn", where);
    s.s_tr = read_array(j, "s_tr", where);
    const std::size_t n = s.pcp.size();
    if (s.s_ri.size() != n || s.s_kn.size() != n || s.s_tr.size() != n)
      throw InputError(where + ": score arrays differ in length");
    out.push_back(std::move(s));
  }
  return out;
}

Histogram histogram(std::span<const double> values, int bins, double lo, double hi) {
  if (bins < 1) throw ConfigError("histogram: bins must be positive");
  if (!(hi > lo)) throw ConfigError("histogram: hi must exceed lo");
  Histogram h{lo, hi, std::vector<std::size_t>(static_cast<std::size_t>(bins), 0)};
  const double width = (hi - lo) / bins;
  for (double v : values) {
    if (v < lo || v > hi) continue;
    const int b = std::min(bins - 1, static_cast<int>((v - lo) / width));
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

std::string histogram_csv(const Histogram& h) {
  std::string out = "bin_left,bin_right,count\n";
  const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out += format_double17(h.lo + width * static_cast<double>(b)) + ',' +
           format_double17(h.lo + width * static_cast<double>(b + 1)) + ',' + std::to_string(h.counts[b]) + '\n';
  }
  return out;
}

}  // namespace xtf
