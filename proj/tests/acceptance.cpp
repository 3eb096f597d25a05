// Acceptance checks: one PASS/FAIL line per criterion. With no arguments
// every criterion runs; otherwise only the listed numbers.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "xtf/filtering/filtering.hpp"
#include "xtf/model/transformer.hpp"
#include "xtf/numerics/gradcheck.hpp"
#include "xtf/pipeline/pipeline.hpp"
#include "xtf/theory/verify.hpp"
#include "xtf/training/training.hpp"

using namespace xtf;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string describe(const CheckResult& c) {
  return c.name + " " + (c.pass ? "ok" : "violated") + " (evals " + std::to_string(c.evaluations) + ", failures " +
         std::to_string(c.failures) + ", max violation " + fmt("%.3g", c.max_violation) + ", tol " +
         fmt("%.0e", c.tolerance) + ")";
}

Outcome all_of(const std::vector<CheckResult>& checks, std::string prefix = {}) {
  Outcome o{true, std::move(prefix)};
  for (const CheckResult& c : checks) {
    o.pass = o.pass && c.pass && c.evaluations > 0;
    o.detail += (o.detail.empty() ? "" : "; ") + describe(c);
  }
  return o;
}

constexpr std::uint64_t kSeed = 20240601;

Outcome criterion_1() {
  const auto start = Clock::now();
  const CheckResult c = check_gain_identity(kSeed, 200);
  const double t = seconds_since(start);
  Outcome o = all_of({c});
  // Both geometries on every instance.
  o.pass = o.pass && c.evaluations == 400 && t < 10.0;
  o.detail += "; runtime " + fmt("%.2f", t) + "s (limit 10s)";
  return o;
}

Outcome criterion_2() { return all_of({check_gain_edge_cases(kSeed + 1, 50)}); }

Outcome criterion_3() {
  return all_of({check_gain_lower_bound(kSeed + 2, 100), check_weak_bias_bound(kSeed + 3, 100)});
}

Outcome criterion_4() { return all_of(check_one_step(kSeed + 4, 50)); }

Outcome criterion_5() {
  std::vector<CheckResult> checks{check_kn_score_bound(kSeed + 5, 1000)};
  for (CheckResult& c : check_kn_contribution(kSeed + 6, 100)) checks.push_back(std::move(c));
  return all_of(checks);
}

Outcome criterion_6() {
  const auto start = Clock::now();
  std::mt19937_64 rng(kSeed + 7);
  std::normal_distribution<double> n(0.0, 1.0);
  int mismatches = 0, classic_mismatches = 0, classic_sets = 0;
  for (int set = 0; set < 100; ++set) {
    const int k = set % 2 == 0 ? 2 : 3;
    const int bins = 8 + static_cast<int>(rng() % 57);
    const int modes = 1 + static_cast<int>(rng() % 4);
    const int size = 20 + static_cast<int>(rng() % 400);
    std::vector<double> v;
    for (int i = 0; i < size; ++i) v.push_back(static_cast<double>(rng() % static_cast<unsigned>(modes)) * 3.0 + n(rng));
    const OtsuResult r = multi_otsu(v, k, bins);
    const oracle::BruteOtsu b = oracle::brute_otsu(v, k, bins);
    if (r.bin_thresholds != b.thresholds || r.between_variance != b.variance) ++mismatches;
    if (k == 2) {
      ++classic_sets;
      if (r.bin_thresholds.size() != 1 || r.bin_thresholds[0] != oracle::classic_otsu(v, bins)) ++classic_mismatches;
    }
  }
  const double t = seconds_since(start);
  return {mismatches == 0 && classic_mismatches == 0 && t < 5.0,
          "100 sets, exhaustive oracle mismatches " + std::to_string(mismatches) + ", k=2 classic Otsu mismatches " +
              std::to_string(classic_mismatches) + "/" + std::to_string(classic_sets) + "; runtime " +
              fmt("%.2f", t) + "s (limit 5s)"};
}

Outcome criterion_7() {
  std::mt19937_64 rng(kSeed + 8);
  std::normal_distribution<double> n(0.0, 1.0);
  int differ = 0;
  std::size_t flagged = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int len = 2 + static_cast<int>(rng() % 40);
    std::vector<double> s, t;
    for (int i = 0; i < len; ++i) {
      double x = n(rng);
      if (rng() % 8 == 0) x -= 6.0;  // occasional low outlier
      s.push_back(x);
      t.push_back(5.0 * x + 2.0);
    }
    const std::vector<int> a = filter_ri(s), b = filter_ri(t);
    flagged += a.size();
    if (a != b) ++differ;
  }
  const bool single = filter_ri(std::vector<double>{0.3}).empty();
  const bool equal = filter_ri(std::vector<double>(12, 0.7)).empty();
  return {differ == 0 && flagged > 0 && single && equal,
          "affine x->5x+2: " + std::to_string(differ) + "/100 vectors differ (" + std::to_string(flagged) +
              " tokens flagged in total); single token " + (single ? "filters nothing" : "filters something") +
              "; all-equal " + (equal ? "filters nothing" : "filters something")};
}

Outcome criterion_8() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq = 24;
  cfg.seed = 11;
  ModelParams p = init_params(cfg);
  std::mt19937_64 rng(kSeed + 9);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Matrix& t : p.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);

  double worst_fd = 0.0;
  bool all_masked_ok = true, logits_ok = true;
  for (int pair = 0; pair < 20; ++pair) {
    TokenizedExample ex;
    ex.id = "p" + std::to_string(pair);
    ex.input_ids.push_back(kBosId);
    const int li = 1 + static_cast<int>(rng() % 6), lo = 1 + static_cast<int>(rng() % 6);
    for (int k = 0; k < li; ++k) ex.input_ids.push_back(static_cast<int>(rng() % 96));
    for (int k = 0; k < lo; ++k) ex.output_ids.push_back(static_cast<int>(rng() % 96));
    LabelNoise noise(ex.output_ids.size());
    for (auto& f : noise) f = static_cast<std::uint8_t>(rng() % 2);
    noise[rng() % noise.size()] = 0;

    const MaskedLoss ml = masked_loss(p, ex, noise);
    auto loss = [&](const std::vector<Matrix>& tensors) {
      ModelParams q = p;
      q.tensors = tensors;
      return masked_loss(q, ex, noise).loss;
    };
    const FiniteDiffReport r = finite_diff_check(loss, ml.grads, p.tensors, {1e-5, 24, 7 + static_cast<std::uint64_t>(pair)});
    worst_fd = std::max(worst_fd, r.max_rel_error);

    const MaskedLoss all = masked_loss(p, ex, LabelNoise(ex.output_ids.size(), 1));
    all_masked_ok = all_masked_ok && all.loss == 0.0;
    for (const Matrix& g : all.grads) all_masked_ok = all_masked_ok && g.cwiseAbs().maxCoeff() == 0.0;

    const MaskedLoss open = masked_loss(p, ex, {});
    logits_ok = logits_ok && (open.logits.array() == ml.logits.array()).all() &&
                (open.logits.array() == all.logits.array()).all();
  }
  return {worst_fd <= 1e-4 && all_masked_ok && logits_ok,
          "20 pairs on a 2-layer LM: worst FD relative error " + fmt("%.3g", worst_fd) + " (limit 1e-4); all-masked " +
              (all_masked_ok ? "loss 0 and zero grads" : "nonzero loss or grads") + "; logits " +
              (logits_ok ? "bitwise identical" : "differ") + " with and without masks"};
}

Outcome criterion_9() {
  std::mt19937_64 rng(kSeed + 10);
  std::uniform_real_distribution<double> u(0.0, 1.0), near(0.94, 0.96);
  const double edge = 0.95;
  const std::vector<double> fixed = {edge, std::nextafter(edge, 1.0), std::nextafter(edge, 0.0), 1.0, 0.0, 0.9, 0.99};
  std::vector<TokenScores> scores;
  for (int e = 0; e < 200; ++e) {
    TokenScores s;
    s.id = "k" + std::to_string(e);
    const int len = 1 + static_cast<int>(rng() % 12);
    for (int k = 0; k < len; ++k) {
      const int pick = static_cast<int>(rng() % 4);
      const double pcp = pick == 0 ? fixed[rng() % fixed.size()] : pick == 1 ? near(rng) : u(rng);
      s.pcp.push_back(pcp);
      s.s_kn.push_back(1.0 - pcp);
      s.s_ri.push_back(u(rng));
      s.s_tr.push_back(u(rng));
    }
    scores.push_back(std::move(s));
  }
  FilterConfig fc;
  fc.enabled = bit(Attribute::kKN);
  const FilterResult r = filter_dataset(scores, fc);
  std::size_t above = 0, wrong = 0, at_edge = 0;
  for (std::size_t e = 0; e < scores.size(); ++e)
    for (std::size_t k = 0; k < scores[e].pcp.size(); ++k) {
      const bool expected = scores[e].pcp[k] > edge;
      above += expected;
      at_edge += scores[e].pcp[k] == edge;
      if (r.masks[e].noise(k) != expected) ++wrong;
    }
  return {wrong == 0 && at_edge > 0,
          std::to_string(r.stats.total_tokens) + " tokens (" + std::to_string(above) + " with pcp > 0.95, " +
              std::to_string(at_edge) + " exactly 0.95): " + std::to_string(wrong) + " misclassified"};
}

Outcome criterion_10() {
  const auto start = Clock::now();
  PipelineConfig config;
  std::vector<std::uint64_t> seeds(10);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
  int wins = 0, informative = 0;
  double fraction = 0.0, precision = 0.0, recall = 0.0, normal = 0.0, xtf = 0.0;
  std::map<Attribute, std::pair<double, double>> per_attr;
  const auto results = run_seeds(config, seeds, [&](const ExperimentResult& r) {
    std::printf("  seed %llu: normal %.4f xtf %.4f filtered %.4f", static_cast<unsigned long long>(r.seed),
                r.normal_acc, r.xtf_acc, r.filtered_fraction);
    if (r.quality) std::printf(" precision %.3f recall %.3f", r.quality->overall.precision, r.quality->overall.recall);
    std::printf("\n");
    std::fflush(stdout);
  });
  for (const ExperimentResult& r : results) {
    wins += r.xtf_acc >= r.normal_acc;
    informative += r.xtf_acc > 0.0 || r.normal_acc > 0.0;
    fraction += r.filtered_fraction;
    normal += r.normal_acc;
    xtf += r.xtf_acc;
    if (r.quality) {
      precision += r.quality->overall.precision;
      recall += r.quality->overall.recall;
      for (Attribute a : kAttributes) {
        per_attr[a].first += r.quality->per_attribute.at(a).precision;
        per_attr[a].second += r.quality->per_attribute.at(a).recall;
      }
    }
  }
  const double n = static_cast<double>(results.size());
  fraction /= n;
  const double t = seconds_since(start);
  // A tie where both arms score 0 says nothing about the masks; such seeds
  // are reported and the criterion needs at least one informative seed.
  const bool pass = wins >= 7 && informative > 0 && fraction >= 0.02 && fraction <= 0.60 && t < 600.0;
  std::string detail = "xtf >= normal on " + std::to_string(wins) + "/10 seeds (" + std::to_string(informative) +
                       " with a nonzero arm); mean acc normal " + fmt("%.4f", normal / n) + " xtf " +
                       fmt("%.4f", xtf / n) + "; mean filtered fraction " + fmt("%.4f", fraction) +
                       " (band 0.02..0.60); precision " + fmt("%.3f", precision / n) + " recall " +
                       fmt("%.3f", recall / n);
  for (const auto& [a, pr] : per_attr)
    detail += ", " + std::string(to_string(a)) + " " + fmt("%.3f", pr.first / n) + "/" + fmt("%.3f", pr.second / n);
  detail += "; runtime " + fmt("%.0f", t) + "s (limit 600s)";
  if (informative == 0) detail += "; DEGENERATE: both arms 0 on every seed";
  return {pass, detail};
}

Outcome criterion_11() {
  PipelineConfig config;
  const ExperimentData data = prepare_data(config, gen_synth(config.synth));
  std::vector<TokenizedExample> held_out = data.val;
  held_out.insert(held_out.end(), data.test.begin(), data.test.end());
  const ModelParams base = pretrain_base(config, held_out);
  const ScoredDataset scored = score_dataset(base, data.train, config.scoring);
  if (!scored.failures.empty()) return {false, std::to_string(scored.failures.size()) + " examples failed scoring"};

  const FilterResult full = filter_dataset(scored.scores, config.filter);
  const ComplementarityReport rep = complementarity_report(full.masks);
  bool in_range = true;
  for (const auto& row : rep.overlap)
    for (double v : row) in_range = in_range && v >= 0.0 && v <= 1.0;
  const bool reproducible = complementarity_json(rep) ==
                            complementarity_json(complementarity_report(filter_dataset(scored.scores, config.filter).masks));

  // Oracle: each attribute's raw set straight from the single-attribute rules.
  std::vector<std::vector<double>> tr_scores;
  for (const TokenScores& s : scored.scores) tr_scores.push_back(s.s_tr);
  const TrFilter tr = filter_tr(tr_scores, config.filter.otsu_classes, config.filter.otsu_bins);
  std::vector<std::array<std::vector<std::uint8_t>, 3>> raw;
  for (std::size_t e = 0; e < scored.scores.size(); ++e) {
    const TokenScores& s = scored.scores[e];
    std::array<std::vector<std::uint8_t>, 3> sets;
    for (auto& v : sets) v.assign(s.s_ri.size(), 0);
    for (int k : filter_ri(s.s_ri)) sets[0][static_cast<std::size_t>(k)] = 1;
    for (int k : filter_kn(s.s_kn, config.filter.kn_cutoff)) sets[1][static_cast<std::size_t>(k)] = 1;
    for (int k : tr.flagged[e]) sets[2][static_cast<std::size_t>(k)] = 1;
    raw.push_back(std::move(sets));
  }
  int ablation_mismatches = 0;
  std::string sizes;
  for (Attribute off : kAttributes) {
    FilterConfig fc = config.filter;
    fc.enabled = static_cast<SourceSet>(kAllAttributes & ~bit(off));
    const FilterResult r = filter_dataset(scored.scores, fc);
    std::size_t flagged = 0;
    for (std::size_t e = 0; e < raw.size(); ++e)
      for (std::size_t k = 0; k < raw[e][0].size(); ++k) {
        bool expected = false;
        for (Attribute a : kAttributes)
          if (a != off) expected = expected || raw[e][static_cast<std::size_t>(a)][k];
        flagged += r.masks[e].noise(k);
        if (r.masks[e].noise(k) != expected) ++ablation_mismatches;
      }
    sizes += (sizes.empty() ? "" : ", ") + std::string("without ") + std::string(to_string(off)) + " " +
             std::to_string(flagged);
  }
  std::string matrix;
  for (Attribute a : kAttributes)
    for (Attribute b : kAttributes)
      if (a != b)
        matrix += (matrix.empty() ? "" : " ") + std::string(to_string(a)) + "->" + std::string(to_string(b)) + "=" +
                  fmt("%.3f", rep.overlap[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]);
  return {in_range && reproducible && ablation_mismatches == 0,
          "overlap " + matrix + (in_range ? " (all in [0,1])" : " (out of range)") +
              (reproducible ? ", reproducible" : ", NOT reproducible") + "; ablation vs union oracle: " +
              std::to_string(ablation_mismatches) + " token mismatches (" + sizes + " of " +
              std::to_string(rep.total_tokens) + " tokens)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> selected;
  app.add_option("criteria", selected, "criterion numbers (default: all)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);
  if (selected.empty())
    for (int i = 1; i <= 11; ++i) selected.push_back(i);

  const std::vector<std::function<Outcome()>> criteria = {criterion_1, criterion_2, criterion_3, criterion_4,
                                                          criterion_5, criterion_6, criterion_7, criterion_8,
                                                          criterion_9, criterion_10, criterion_11};
  bool ok = true;
  for (int i : selected) {
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(i - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s | %s\n", i, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    ok = ok && o.pass;
  }
  return ok ? 0 : 1;
}
