#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xtf/scoring/scoring.hpp"

namespace xtf {

enum class Attribute : std::uint8_t { kRI = 0, kKN = 1, kTR = 2 };
inline constexpr std::array<Attribute, 3> kAttributes = {Attribute::kRI, Attribute::kKN, Attribute::kTR};

// Bit set over Attribute.
using SourceSet = std::uint8_t;
constexpr SourceSet bit(Attribute a) { return static_cast<SourceSet>(1u << static_cast<unsigned>(a)); }
inline constexpr SourceSet kAllAttributes = 0b111;

std::string_view to_string(Attribute a);
Attribute parse_attribute(std::string_view name);

struct FilterConfig {
  double kn_cutoff = 0.05;
  int otsu_classes = 3;
  int otsu_bins = 256;
  SourceSet enabled = kAllAttributes;
  // Applied by callers that know the token ids: the stop token is never
  // masked, so training keeps its termination signal.
  bool keep_stop = true;

  void validate() const;
};

// Linear interpolation between order statistics, position (n-1)*q.
double quantile_linear(std::span<const double> sorted, double q);

struct RiFence {
  double q1 = 0.0;
  double q3 = 0.0;
  double threshold = 0.0;  // q1 - (q3 - q1)
};
RiFence ri_fence(std::span<const double> s_ri);

std::vector<int> filter_ri(std::span<const double> s_ri);
std::vector<int> filter_kn(std::span<const double> s_kn, double cutoff);

// Multi-level Otsu over an equal-width histogram of `bins` bins on
// [min, max]. Bin thresholds t_1 < ... < t_{k-1} split bins into classes
// [0..t_1], [t_1+1..t_2], ..., [t_{k-1}+1..bins-1].
struct OtsuResult {
  bool partitioned = false;  // false: all values identical, no partition
  int bins = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<int> bin_thresholds;
  std::vector<double> thresholds;  // right edge of each threshold bin
  double between_variance = 0.0;

  int bin_of(double value) const;
  int class_of(double value) const;
};

// sigma_b^2 = sum_m w_m (mu_m - mu_T)^2 from integer class counts and sums
// of bin indices. Empty classes contribute 0.
double between_class_variance(std::span<const std::int64_t> class_counts, std::span<const std::int64_t> class_sums);

// Exhaustive search; ties go to the lexicographically smallest tuple.
OtsuResult multi_otsu(std::span<const double> values, int k, int bins);

struct TrFilter {
  OtsuResult otsu;
  int flagged_class = -1;  // -1: nothing flagged
  std::vector<std::vector<int>> flagged;  // per example
};
// Pools every example's s_tr, partitions the pool, and flags the class with
// the second smallest mean.
TrFilter filter_tr(std::span<const std::vector<double>> s_tr_per_example, int k, int bins);

struct NoiseMask {
  std::string id;
  std::vector<SourceSet> sources;

  bool noise(std::size_t k) const { return sources[k] != 0; }
  std::size_t size() const { return sources.size(); }
  std::size_t noise_count() const;
  std::vector<std::uint8_t> noise_flags() const;
};

NoiseMask union_mask(std::size_t label_length, std::span<const int> ri, std::span<const int> kn,
                     std::span<const int> tr, std::string id = {});

// Clears every mask position whose label token equals `token`. Returns the
// number of positions that were flagged before. masks and examples pair up
// in order.
std::size_t unmask_token(std::vector<NoiseMask>& masks, std::span<const TokenizedExample> examples, int token);

struct FilterStats {
  std::vector<RiFence> ri_fences;  // per example
  OtsuResult otsu;
  std::map<Attribute, std::size_t> per_attribute_counts;
  std::size_t total_tokens = 0;
  std::size_t noise_tokens = 0;
  // overlap[a][b]: fraction of a's tokens also flagged by b.
  std::array<std::array<double, 3>, 3> overlap{};
};

struct FilterResult {
  std::vector<NoiseMask> masks;
  FilterStats stats;
};

// Disabled attributes contribute nothing to the masks; their raw sets are
// still computed so counts stay comparable across ablations.
FilterResult filter_dataset(std::span<const TokenScores> scores, const FilterConfig& config);

struct ComplementarityReport {
  std::size_t total_tokens = 0;
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> only{};  // fraction of all label tokens flagged by a
  // after[a][b]: fraction of all label tokens a still flags once b is applied.
  std::array<std::array<double, 3>, 3> after{};
  // overlap[a][b]: fraction of a's flagged tokens that b also flags.
  std::array<std::array<double, 3>, 3> overlap{};
};
ComplementarityReport complementarity_report(std::span<const NoiseMask> masks);
std::string complementarity_json(const ComplementarityReport& r);
std::string complementarity_csv(const ComplementarityReport& r);

std::string masks_to_jsonl(std::span<const NoiseMask> masks);
void write_masks(const std::filesystem::path& path, std::span<const NoiseMask> masks);
std::vector<NoiseMask> read_masks(const std::filesystem::path& path);
std::string filter_stats_json(const FilterStats& stats);

}  // namespace xtf
