#include "xtf/filtering/filtering.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <json.hpp>

#include "xtf/io.hpp"

namespace xtf {

std::string_view to_string(Attribute a) {
  switch (a) {
    case Attribute::kRI: return "RI";
    case Attribute::kKN: return "KN";
    case Attribute::kTR: return "TR";
  }
  return "?";
}

Attribute parse_attribute(std::string_view name) {
  if (name == "RI" || name == "ri") return Attribute::kRI;
  if (name == "KN" || name == "kn") return Attribute::kKN;
  if (name == "TR" || name == "tr") return Attribute::kTR;
  throw ConfigError("unknown attribute '" + std::string(name) + "' (expected RI, KN or TR)");
}

void FilterConfig::validate() const {
  if (!(kn_cutoff > 0.0 && kn_cutoff < 1.0)) throw ConfigError("kn_cutoff must lie in (0, 1)");
  if (otsu_classes < 2) throw ConfigError("otsu_classes must be >= 2");
  if (otsu_bins < otsu_classes) throw ConfigError("otsu_bins must be >= otsu_classes");
  if (enabled & ~kAllAttributes) throw ConfigError("enabled attributes out of range");
}

double quantile_linear(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw InputError("quantile of an empty array");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

RiFence ri_fence(std::span<const double> s_ri) {
  std::vector<double> sorted(s_ri.begin(), s_ri.end());
  std::sort(sorted.begin(), sorted.end());
  RiFence f;
  f.q1 = quantile_linear(sorted, 0.25);
  f.q3 = quantile_linear(sorted, 0.75);
  f.threshold = f.q1 - (f.q3 - f.q1);
  return f;
}

std::vector<int> filter_ri(std::span<const double> s_ri) {
  if (s_ri.empty()) throw InputError("filter_ri: empty score array");
  const double tau = ri_fence(s_ri).threshold;
  std::vector<int> out;
  for (std::size_t k = 0; k < s_ri.size(); ++k)
    if (s_ri[k] < tau) out.push_back(static_cast<int>(k));
  return out;
}

std::vector<int> filter_kn(std::span<const double> s_kn, double cutoff) {
  if (!(cutoff > 0.0 && cutoff < 1.0)) throw ConfigError("filter_kn: cutoff must lie in (0, 1)");
  std::vector<int> out;
  for (std::size_t k = 0; k < s_kn.size(); ++k)
    if (s_kn[k] < cutoff) out.push_back(static_cast<int>(k));
  return out;
}

int OtsuResult::bin_of(double value) const {
  const double width = (hi - lo) / bins;
  if (width <= 0.0) return 0;
  const double pos = (value - lo) / width;
  if (pos <= 0.0) return 0;
  return std::min(bins - 1, static_cast<int>(pos));
}

int OtsuResult::class_of(double value) const {
  const int b = bin_of(value);
  int c = 0;
  for (int t : bin_thresholds)
    if (b > t) ++c;
  return c;
}

double between_class_variance(std::span<const std::int64_t> class_counts, std::span<const std::int64_t> class_sums) {
  std::int64_t n = 0, s = 0;
  for (std::size_t m = 0; m < class_counts.size(); ++m) {
    n += class_counts[m];
    s += class_sums[m];
  }
  if (n == 0) return 0.0;
  const double total = static_cast<double>(n);
  const double mu_t = static_cast<double>(s) / total;
  double acc = 0.0;
  for (std::size_t m = 0; m < class_counts.size(); ++m) {
    if (class_counts[m] == 0) continue;
    const double w = static_cast<double>(class_counts[m]) / total;
    const double mu = static_cast<double>(class_sums[m]) / static_cast<double>(class_counts[m]);
    acc += w * (mu - mu_t) * (mu - mu_t);
  }
  return acc;
}

OtsuResult multi_otsu(std::span<const double> values, int k, int bins) {
  if (values.empty()) throw InputError("multi_otsu: empty value set");
  if (k < 2) throw ConfigError("multi_otsu: k must be >= 2");
  if (bins < k) throw ConfigError("multi_otsu: bins must be >= k");
  for (double v : values)
    if (!std::isfinite(v)) throw InputError("multi_otsu: non-finite value");

  OtsuResult r;
  r.bins = bins;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  r.lo = *mn;
  r.hi = *mx;
  if (r.lo == r.hi) return r;

  std::vector<std::int64_t> count(static_cast<std::size_t>(bins), 0);
  for (double v : values) ++count[static_cast<std::size_t>(r.bin_of(v))];
  // Prefix sums over bins: cum_n[b] = sum_{i<b} count[i], cum_s likewise with i*count[i].
  std::vector<std::int64_t> cum_n(count.size() + 1, 0), cum_s(count.size() + 1, 0);
  for (std::size_t b = 0; b < count.size(); ++b) {
    cum_n[b + 1] = cum_n[b] + count[b];
    cum_s[b + 1] = cum_s[b] + static_cast<std::int64_t>(b) * count[b];
  }

  const auto m = static_cast<std::size_t>(k);
  std::vector<int> t(m - 1), best_t;
  std::vector<std::int64_t> cn(m), cs(m);
  double best = -1.0;

  std::function<void(std::size_t, int)> search = [&](std::size_t depth, int first) {
    if (depth == m - 1) {
      int start = 0;
      for (std::size_t c = 0; c < m; ++c) {
        const int end = c + 1 < m ? t[c] + 1 : bins;
        cn[c] = cum_n[static_cast<std::size_t>(end)] - cum_n[static_cast<std::size_t>(start)];
        cs[c] = cum_s[static_cast<std::size_t>(end)] - cum_s[static_cast<std::size_t>(start)];
        start = end;
      }
      const double v = between_class_variance(cn, cs);
      if (v > best) {
        best = v;
        best_t = t;
      }
      return;
    }
    // Leave room for the remaining thresholds below bins - 1.
    const int last = bins - 2 - static_cast<int>(m - 2 - depth);
    for (int x = first; x <= last; ++x) {
      t[depth] = x;
      search(depth + 1, x + 1);
    }
  };
  search(0, 0);

  r.partitioned = best > 0.0;
  if (!r.partitioned) return r;
  r.between_variance = best;
  r.bin_thresholds = best_t;
  const double width = (r.hi - r.lo) / bins;
  for (int x : best_t) r.thresholds.push_back(r.lo + width * (x + 1));
  return r;
}

TrFilter filter_tr(std::span<const std::vector<double>> s_tr_per_example, int k, int bins) {
  std::vector<double> pool;
  for (const auto& v : s_tr_per_example) pool.insert(pool.end(), v.begin(), v.end());
  if (pool.empty()) throw InputError("filter_tr: empty score pool");

  TrFilter out;
  out.otsu = multi_otsu(pool, k, bins);
  out.flagged.resize(s_tr_per_example.size());
  if (!out.otsu.partitioned) return out;

  std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
  std::vector<std::size_t> n(static_cast<std::size_t>(k), 0);
  for (double v : pool) {
    const auto c = static_cast<std::size_t>(out.otsu.class_of(v));
    sum[c] += v;
    ++n[c];
  }
  std::vector<std::pair<double, int>> by_mean;
  for (int c = 0; c < k; ++c)
    if (n[static_cast<std::size_t>(c)] > 0)
      by_mean.emplace_back(sum[static_cast<std::size_t>(c)] / static_cast<double>(n[static_cast<std::size_t>(c)]), c);
  if (by_mean.size() < 2) return out;
  std::sort(by_mean.begin(), by_mean.end());
  out.flagged_class = by_mean[1].second;

  for (std::size_t e = 0; e < s_tr_per_example.size(); ++e)
    for (std::size_t i = 0; i < s_tr_per_example[e].size(); ++i)
      if (out.otsu.class_of(s_tr_per_example[e][i]) == out.flagged_class)
        out.flagged[e].push_back(static_cast<int>(i));
  return out;
}

std::size_t NoiseMask::noise_count() const {
  return static_cast<std::size_t>(std::count_if(sources.begin(), sources.end(), [](SourceSet s) { return s != 0; }));
}

std::vector<std::uint8_t> NoiseMask::noise_flags() const {
  std::vector<std::uint8_t> f(sources.size());
  for (std::size_t k = 0; k < sources.size(); ++k) f[k] = sources[k] != 0;
  return f;
}

NoiseMask union_mask(std::size_t label_length, std::span<const int> ri, std::span<const int> kn,
                     std::span<const int> tr, std::string id) {
  NoiseMask m;
  m.id = std::move(id);
  m.sources.assign(label_length, 0);
  auto mark = [&](std::span<const int> set, Attribute a) {
    for (int k : set) {
      if (k < 0 || static_cast<std::size_t>(k) >= label_length)
        throw ContractError("union_mask: index " + std::to_string(k) + " outside label of length " +
                            std::to_string(label_length));
      m.sources[static_cast<std::size_t>(k)] |= bit(a);
    }
  };
  mark(ri, Attribute::kRI);
  mark(kn, Attribute::kKN);
  mark(tr, Attribute::kTR);
  return m;
}

FilterResult filter_dataset(std::span<const TokenScores> scores, const FilterConfig& config) {
  config.validate();
  FilterResult out;
  std::vector<std::vector<double>> tr_pool;
  tr_pool.reserve(scores.size());
  for (const TokenScores& s : scores) tr_pool.push_back(s.s_tr);
  const TrFilter tr = filter_tr(tr_pool, config.otsu_classes, config.otsu_bins);
  out.stats.otsu = tr.otsu;

  std::vector<NoiseMask> raw;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    const TokenScores& s = scores[e];
    if (s.s_ri.empty()) throw InputError("example '" + s.id + "' has no label tokens");
    out.stats.ri_fences.push_back(ri_fence(s.s_ri));
    const std::vector<int> ri = filter_ri(s.s_ri);
    const std::vector<int> kn = filter_kn(s.s_kn, config.kn_cutoff);
    raw.push_back(union_mask(s.s_ri.size(), ri, kn, tr.flagged[e], s.id));

    NoiseMask m = raw.back();
    for (SourceSet& src : m.sources) src &= config.enabled;
    out.masks.push_back(std::move(m));
  }

  const ComplementarityReport c = complementarity_report(raw);
  for (Attribute a : kAttributes) out.stats.per_attribute_counts[a] = c.counts[static_cast<std::size_t>(a)];
  out.stats.overlap = c.overlap;
  out.stats.total_tokens = c.total_tokens;
  for (const NoiseMask& m : out.masks) out.stats.noise_tokens += m.noise_count();
  return out;
}

ComplementarityReport complementarity_report(std::span<const NoiseMask> masks) {
  ComplementarityReport r;
  std::array<std::array<std::size_t, 3>, 3> both{};
  for (const NoiseMask& m : masks)
    for (SourceSet s : m.sources) {
      ++r.total_tokens;
      for (std::size_t a = 0; a < 3; ++a) {
        if (!(s & (1u << a))) continue;
        ++r.counts[a];
        for (std::size_t b = 0; b < 3; ++b)
          if (s & (1u << b)) ++both[a][b];
      }
    }
  const double total = static_cast<double>(r.total_tokens);
  for (std::size_t a = 0; a < 3; ++a) {
    r.only[a] = total > 0 ? static_cast<double>(r.counts[a]) / total : 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
      r.after[a][b] = total > 0 ? static_cast<double>(r.counts[a] - both[a][b]) / total : 0.0;
      r.overlap[a][b] = r.counts[a] > 0 ? static_cast<double>(both[a][b]) / static_cast<double>(r.counts[a]) : 0.0;
    }
  }
  return r;
}

namespace {

nlohmann::ordered_json matrix_json(const std::array<std::array<double, 3>, 3>& m) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (Attribute a : kAttributes) {
    nlohmann::ordered_json row = nlohmann::ordered_json::object();
    for (Attribute b : kAttributes)
      row[std::string(to_string(b))] = m[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
    j[std::string(to_string(a))] = row;
  }
  return j;
}

}  // namespace

std::string complementarity_json(const ComplementarityReport& r) {
  nlohmann::ordered_json j;
  j["total_tokens"] = r.total_tokens;
  nlohmann::ordered_json counts, only;
  for (Attribute a : kAttributes) {
    counts[std::string(to_string(a))] = r.counts[static_cast<std::size_t>(a)];
    only[std::string(to_string(a))] = r.only[static_cast<std::size_t>(a)];
  }
  j["counts"] = counts;
  j["only"] = only;
  j["after"] = matrix_json(r.after);
  j["overlap"] = matrix_json(r.overlap);
  return j.dump(2) + "\n";
}

std::string complementarity_csv(const ComplementarityReport& r) {
  std::string out = "attribute,other,only,after,overlap\n";
  for (Attribute a : kAttributes)
    for (Attribute b : kAttributes) {
      const auto i = static_cast<std::size_t>(a), j = static_cast<std::size_t>(b);
      out += std::string(to_string(a)) + ',' + std::string(to_string(b)) + ',' + format_double17(r.only[i]) + ',' +
             format_double17(r.after[i][j]) + ',' + format_double17(r.overlap[i][j]) + '\n';
    }
  return out;
}

std::string masks_to_jsonl(std::span<const NoiseMask> masks) {
  std::string out;
  for (const NoiseMask& m : masks) {
    nlohmann::ordered_json j;
    j["id"] = m.id;
    std::vector<bool> noise;
    std::vector<std::vector<std::string>> sources;
    for (SourceSet s : m.sources) {
      noise.push_back(s != 0);
      auto& names = sources.emplace_back();
      for (Attribute a : kAttributes)
        if (s & bit(a)) names.emplace_back(to_string(a));
    }
    j["noise"] = noise;
    j["sources"] = sources;
    out += j.dump() + "\n";
  }
  return out;
}

void write_masks(const std::filesystem::path& path, std::span<const NoiseMask> masks) {
  write_file_atomic(path, masks_to_jsonl(masks));
}

std::vector<NoiseMask> read_masks(const std::filesystem::path& path) {
  std::vector<NoiseMask> out;
  const auto lines = read_jsonl_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    try {
      const auto j = nlohmann::json::parse(lines[i]);
      NoiseMask m;
      m.id = j.at("id").get<std::string>();
      const auto& noise = j.at("noise");
      const auto& sources = j.at("sources");
      if (noise.size() != sources.size()) throw InputError(where + ": noise and sources differ in length");
      for (std::size_t k = 0; k < noise.size(); ++k) {
        SourceSet s = 0;
        for (const auto& name : sources[k]) s |= bit(parse_attribute(name.get<std::string>()));
        if (noise[k].get<bool>() != (s != 0)) throw InputError(where + ": noise flag disagrees with sources");
        m.sources.push_back(s);
      }
      out.push_back(std::move(m));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where + ": " + e.what());
    } catch (const ConfigError& e) {
      throw InputError(where + ": " + e.what());
    }
  }
  return out;
}

std::size_t unmask_token(std::vector<NoiseMask>& masks, std::span<const TokenizedExample> examples, int token) {
  if (masks.size() != examples.size())
    throw ContractError("unmask_token: " + std::to_string(masks.size()) + " masks for " +
                        std::to_string(examples.size()) + " examples");
  std::size_t cleared = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].size() != examples[i].output_ids.size())
      throw ContractError("unmask_token: mask length mismatch for '" + examples[i].id + "'");
    for (std::size_t k = 0; k < masks[i].size(); ++k)
      if (examples[i].output_ids[k] == token && masks[i].sources[k] != 0) {
        masks[i].sources[k] = 0;
        ++cleared;
      }
  }
  return cleared;
}

std::string filter_stats_json(const FilterStats& stats) {
  nlohmann::ordered_json j;
  j["otsu_partitioned"] = stats.otsu.partitioned;
  j["otsu_thresholds"] = stats.otsu.thresholds;
  j["otsu_between_variance"] = stats.otsu.between_variance;
  nlohmann::ordered_json counts;
  for (Attribute a : kAttributes) counts[std::string(to_string(a))] = stats.per_attribute_counts.at(a);
  j["per_attribute_counts"] = counts;
  j["total_tokens"] = stats.total_tokens;
  j["noise_tokens"] = stats.noise_tokens;
  j["overlap"] = matrix_json(stats.overlap);
  nlohmann::json fences = nlohmann::json::array();
  for (const RiFence& f : stats.ri_fences) fences.push_back({{"q1", f.q1}, {"q3", f.q3}, {"threshold", f.threshold}});
  j["ri_fences"] = fences;
  return j.dump(2) + "\n";
}

}  // namespace xtf
