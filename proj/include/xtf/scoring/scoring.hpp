#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xtf/example.hpp"
#include "xtf/model/transformer.hpp"

namespace xtf {

// How attention received by a label token is pooled over layers, heads and
// later queries.
enum class RiAggregation { kMean, kSum, kLastLayerMean };
enum class DistanceKind { kEuclidean, kCosine };
// kAllTokens averages every token occurrence; kUniqueTokens averages each
// distinct token id once.
enum class DomainSource { kAllTokens, kUniqueTokens };

RiAggregation parse_ri_aggregation(std::string_view name);
DistanceKind parse_distance_kind(std::string_view name);
DomainSource parse_domain_source(std::string_view name);
std::string_view to_string(RiAggregation a);
std::string_view to_string(DistanceKind d);
std::string_view to_string(DomainSource s);

struct ScoringConfig {
  RiAggregation ri_agg = RiAggregation::kMean;
  DistanceKind distance = DistanceKind::kEuclidean;
  DomainSource domain_source = DomainSource::kAllTokens;
};

struct TokenScores {
  std::string id;
  std::vector<double> pcp;
  std::vector<double> s_ri;
  std::vector<double> s_kn;
  std::vector<double> s_tr;
};

struct DomainVector {
  Vector centroid;
  std::map<int, double> token_distances;
  double d_min = 0.0;
  double d_max = 0.0;
};

// Rejects examples the scorers cannot handle: empty input or label,
// overlength, out-of-vocabulary ids. Throws InputError naming the id.
void check_example(const ModelConfig& config, const TokenizedExample& example);

// Scores computed from an existing trace of input+output.
std::vector<double> score_ri(const ForwardTrace& trace, const TokenizedExample& example, RiAggregation agg);
std::pair<std::vector<double>, std::vector<double>> score_kn(const ForwardTrace& trace,
                                                             const TokenizedExample& example);

// Convenience forms that run their own forward pass.
std::vector<double> score_ri(const ModelParams& params, const TokenizedExample& example,
                             RiAggregation agg = RiAggregation::kMean);
// Returns (pcp, s_kn).
std::pair<std::vector<double>, std::vector<double>> score_kn(const ModelParams& params,
                                                             const TokenizedExample& example);

double embedding_distance(const Vector& a, const Vector& b, DistanceKind kind);

DomainVector compute_domain_vector(const ModelParams& params, std::span<const TokenizedExample> dataset,
                                   DomainSource source = DomainSource::kAllTokens,
                                   DistanceKind distance = DistanceKind::kEuclidean);

// Throws ConsistencyError for a label token missing from the domain table.
std::vector<double> score_tr(const DomainVector& domain, const TokenizedExample& example);

struct ScoringFailure {
  std::string id;
  std::string message;
};

struct ScoredDataset {
  std::vector<TokenScores> scores;  // dataset order, failed examples omitted
  DomainVector domain;
  std::vector<ScoringFailure> failures;
  std::size_t forward_passes = 0;
};

// Bad examples are collected in `failures` and skipped; everything else is
// scored with one forward pass per example. params are only read.
ScoredDataset score_dataset(const ModelParams& params, std::span<const TokenizedExample> dataset,
                            const ScoringConfig& config = {});

std::string scores_to_jsonl(std::span<const TokenScores> scores);
void write_scores(const std::filesystem::path& path, std::span<const TokenScores> scores);
std::vector<TokenScores> read_scores(const std::filesystem::path& path);

// Equal-width histogram over [lo, hi]; the last bin is closed.
struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;
};
Histogram histogram(std::span<const double> values, int bins, double lo, double hi);
// CSV with header bin_left,bin_right,count.
std::string histogram_csv(const Histogram& h);

}  // namespace xtf
