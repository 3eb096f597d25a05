#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xtf/errors.hpp"
#include "xtf/filtering/filtering.hpp"
#include "xtf/io.hpp"
#include "xtf/model/checkpoint.hpp"
#include "xtf/pipeline/config.hpp"
#include "xtf/pipeline/dataset.hpp"
#include "xtf/pipeline/pipeline.hpp"
#include "xtf/pipeline/quality.hpp"
#include "xtf/scoring/scoring.hpp"
#include "xtf/theory/verify.hpp"
#include "xtf/training/experiment.hpp"

namespace fs = std::filesystem;
using namespace xtf;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> settings;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed (reseeds every component)");
  cmd->add_option("--set", c.settings, "override one config key, as key=value");
  auto* out = cmd->add_option("--out", c.out, "output path");
  if (out_required) out->required();
}

PipelineConfig load_config(const Common& c) {
  PipelineConfig config = c.config_path.empty() ? PipelineConfig() : load_pipeline_config(c.config_path);
  for (const std::string& s : c.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    std::string key = s.substr(0, eq), value = s.substr(eq + 1);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    while (!value.empty() && value.front() == ' ') value.erase(value.begin());
    apply_setting(config, key, value);
  }
  if (c.seed) config.reseed(*c.seed);
  config.validate();
  return config;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-")
    std::cout << text;
  else
    write_file_atomic(path, text);
}

const std::vector<TokenizedExample>& pick_split(const ExperimentData& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  if (split == "test") return d.test;
  throw ConfigError("--split must be train, val or test, got '" + split + "'");
}

std::vector<TokenizedExample> held_out(const ExperimentData& d) {
  std::vector<TokenizedExample> out = d.val;
  out.insert(out.end(), d.test.begin(), d.test.end());
  return out;
}

// Orders masks to match `examples` by id.
std::vector<NoiseMask> align_masks(std::vector<NoiseMask> masks, const std::vector<TokenizedExample>& examples,
                                   const std::string& source) {
  std::map<std::string, NoiseMask> by_id;
  for (NoiseMask& m : masks) by_id[m.id] = std::move(m);
  std::vector<NoiseMask> out;
  for (const TokenizedExample& ex : examples) {
    auto it = by_id.find(ex.id);
    if (it == by_id.end()) throw InputError(source + ": no mask for example '" + ex.id + "'");
    if (it->second.size() != ex.output_ids.size())
      throw InputError(source + ": mask for '" + ex.id + "' has " + std::to_string(it->second.size()) +
                       " entries for " + std::to_string(ex.output_ids.size()) + " label tokens");
    out.push_back(std::move(it->second));
  }
  return out;
}

std::vector<LabelNoise> align_truth(const ExperimentData& d, const std::vector<TokenizedExample>& examples) {
  if (d.truth.empty()) return {};
  std::map<std::string, const LabelNoise*> by_id;
  for (std::size_t i = 0; i < d.train.size(); ++i) by_id[d.train[i].id] = &d.truth[i];
  std::vector<LabelNoise> out;
  for (const TokenizedExample& ex : examples) {
    auto it = by_id.find(ex.id);
    if (it == by_id.end()) return {};
    out.push_back(*it->second);
  }
  return out;
}

int cmd_gen_synth(const Common& c, std::optional<int> size, std::optional<double> noise_rate, bool hard) {
  PipelineConfig config = load_config(c);
  if (size) config.synth.size = *size;
  if (noise_rate) config.synth.noise_rate = *noise_rate;
  if (hard) config.synth.hard = true;
  const auto records = gen_synth(config.synth);
  write_dataset(c.out, records);
  std::cerr << "wrote " << records.size() << " records to " << c.out << "\n";
  return 0;
}

int cmd_score(const Common& c, const std::string& data_path, const std::string& model_path,
              const std::string& save_model, const std::string& split) {
  const PipelineConfig config = load_config(c);
  const ExperimentData d = prepare_data(config, read_dataset(data_path));
  const ModelParams base = model_path.empty() ? base_model(config, held_out(d)) : load_checkpoint(model_path);
  if (!save_model.empty()) save_checkpoint(save_model, base);
  const ScoredDataset scored = score_dataset(base, pick_split(d, split), config.scoring);
  for (const ScoringFailure& f : scored.failures) std::cerr << "skipped '" << f.id << "': " << f.message << "\n";
  write_scores(c.out, scored.scores);
  std::cerr << "scored " << scored.scores.size() << " examples (" << scored.failures.size() << " skipped) into "
            << c.out << "\n";
  return 0;
}

int cmd_filter(const Common& c, const std::string& scores_path, const std::string& data_path,
               const std::string& split, const std::string& stats_path) {
  const PipelineConfig config = load_config(c);
  const std::vector<TokenScores> scores = read_scores(scores_path);
  FilterResult r = filter_dataset(scores, config.filter);
  nlohmann::ordered_json stats = nlohmann::ordered_json::parse(filter_stats_json(r.stats));
  if (!data_path.empty()) {
    const ExperimentData d = prepare_data(config, read_dataset(data_path));
    const std::vector<TokenizedExample>& all = pick_split(d, split);
    std::map<std::string, const TokenizedExample*> by_id;
    for (const TokenizedExample& ex : all) by_id[ex.id] = &ex;
    std::vector<TokenizedExample> examples;
    for (const NoiseMask& m : r.masks) {
      auto it = by_id.find(m.id);
      if (it == by_id.end()) throw InputError(scores_path + ": example '" + m.id + "' is not in " + data_path);
      examples.push_back(*it->second);
    }
    if (config.filter.keep_stop) {
      r.stats.noise_tokens -= unmask_token(r.masks, examples, kEosId);
      stats["noise_tokens"] = r.stats.noise_tokens;
    }
    if (const auto truth = align_truth(d, examples); !truth.empty())
      stats["filter_quality"] = nlohmann::ordered_json::parse(filter_quality_json(filter_quality(r.masks, truth)));
  }
  write_masks(c.out, r.masks);
  emit(stats_path, stats.dump(2) + "\n");
  return 0;
}

int cmd_train(const Common& c, const std::string& data_path, const std::string& model_path,
              const std::string& masks_path) {
  const PipelineConfig config = load_config(c);
  const ExperimentData d = prepare_data(config, read_dataset(data_path));
  const ModelParams base = load_checkpoint(model_path);
  fs::create_directories(c.out);
  const fs::path dir(c.out);
  if (masks_path.empty()) {
    const TrainResult r = train(base, d.train, {}, d.val, config.train, kEosId);
    write_file_atomic(dir / "normal_log.jsonl", epoch_log_jsonl(r.log));
    if (r.aborted) throw TrainingError(r.diagnostic);
    save_checkpoint(dir / "normal.ckpt", r.best);
    nlohmann::ordered_json j;
    j["normal_acc"] = evaluate(r.best, d.test, kEosId);
    j["seed"] = config.seed;
    j["normal_best_epoch"] = r.best_epoch;
    j["normal_val_acc"] = r.best_val_acc;
    write_file_atomic(dir / "report.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::vector<NoiseMask> masks = align_masks(read_masks(masks_path), d.train, masks_path);
  const ExperimentResult r = train_arms(base, d, std::move(masks), config.train, kEosId, config.seed);
  write_file_atomic(dir / "normal_log.jsonl", epoch_log_jsonl(r.normal.log));
  write_file_atomic(dir / "xtf_log.jsonl", epoch_log_jsonl(r.xtf.log));
  save_checkpoint(dir / "normal.ckpt", r.normal.best);
  save_checkpoint(dir / "xtf.ckpt", r.xtf.best);
  const std::string report = experiment_report_json(r);
  write_file_atomic(dir / "report.json", report);
  std::cout << report;
  return 0;
}

int cmd_eval(const Common& c, const std::string& data_path, const std::string& model_path, const std::string& split) {
  const PipelineConfig config = load_config(c);
  const ExperimentData d = prepare_data(config, read_dataset(data_path));
  const std::vector<TokenizedExample>& examples = pick_split(d, split);
  nlohmann::ordered_json j;
  j["split"] = split;
  j["examples"] = examples.size();
  j["exact_match"] = evaluate(load_checkpoint(model_path), examples, kEosId);
  emit(c.out, j.dump(2) + "\n");
  return 0;
}

int cmd_report(const Common& c, const std::string& scores_path, const std::string& masks_path,
               const std::string& data_path, int bins) {
  const PipelineConfig config = load_config(c);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  const std::vector<TokenScores> scores = read_scores(scores_path);
  std::map<std::string, std::vector<double>> columns;
  for (const TokenScores& s : scores) {
    columns["pcp"].insert(columns["pcp"].end(), s.pcp.begin(), s.pcp.end());
    columns["s_ri"].insert(columns["s_ri"].end(), s.s_ri.begin(), s.s_ri.end());
    columns["s_kn"].insert(columns["s_kn"].end(), s.s_kn.begin(), s.s_kn.end());
    columns["s_tr"].insert(columns["s_tr"].end(), s.s_tr.begin(), s.s_tr.end());
  }
  for (const auto& [name, values] : columns)
    write_file_atomic(dir / ("hist_" + name + ".csv"), histogram_csv(histogram(values, bins, 0.0, 1.0)));
  std::vector<std::string> written = {"hist_pcp.csv", "hist_s_kn.csv", "hist_s_ri.csv", "hist_s_tr.csv"};

  if (!masks_path.empty()) {
    const std::vector<NoiseMask> masks = read_masks(masks_path);
    const ComplementarityReport rep = complementarity_report(masks);
    write_file_atomic(dir / "complementarity.json", complementarity_json(rep));
    write_file_atomic(dir / "complementarity.csv", complementarity_csv(rep));
    written.push_back("complementarity.json");
    written.push_back("complementarity.csv");
    if (!data_path.empty()) {
      const ExperimentData d = prepare_data(config, read_dataset(data_path));
      std::map<std::string, const TokenizedExample*> by_id;
      for (const TokenizedExample& ex : d.train) by_id[ex.id] = &ex;
      std::vector<TokenizedExample> examples;
      for (const NoiseMask& m : masks) {
        auto it = by_id.find(m.id);
        if (it == by_id.end()) throw InputError(masks_path + ": example '" + m.id + "' is not in " + data_path);
        examples.push_back(*it->second);
      }
      if (const auto truth = align_truth(d, examples); !truth.empty()) {
        write_file_atomic(dir / "filter_quality.json", filter_quality_json(filter_quality(masks, truth)));
        written.push_back("filter_quality.json");
      }
    }
  }
  for (const std::string& f : written) std::cout << (dir / f).string() << "\n";
  return 0;
}

int cmd_verify_theory(const Common& c, const std::string& sweep_path) {
  const std::uint64_t seed = c.seed.value_or(0);
  const std::vector<CheckResult> checks = verify_theory(seed);
  emit(c.out, theory_report_json(seed, checks));
  if (!sweep_path.empty()) write_file_atomic(sweep_path, gain_sweep_csv(seed));
  for (const CheckResult& r : checks)
    std::cerr << (r.pass ? "pass " : "FAIL ") << r.name << " (max violation " << r.max_violation << ")\n";
  return 0;
}

int cmd_run_experiment(const Common& c, int num_seeds, std::uint64_t first_seed, const std::string& report_dir) {
  const PipelineConfig config = load_config(c);
  if (num_seeds < 1) throw ConfigError("--seeds must be >= 1");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < num_seeds; ++i) seeds.push_back(first_seed + static_cast<std::uint64_t>(i));
  if (!report_dir.empty()) fs::create_directories(report_dir);

  const auto t0 = std::chrono::steady_clock::now();
  std::string csv = experiment_csv_header();
  int wins = 0;
  double filtered = 0.0;
  run_seeds(config, seeds, [&](const ExperimentResult& r) {
    csv += experiment_csv_row(r);
    wins += r.xtf_acc >= r.normal_acc;
    filtered += r.filtered_fraction;
    if (!report_dir.empty())
      write_file_atomic(fs::path(report_dir) / ("seed_" + std::to_string(r.seed) + ".json"), experiment_report_json(r));
    std::cerr << "seed " << r.seed << ": normal " << r.normal_acc << " xtf " << r.xtf_acc << " filtered "
              << r.filtered_fraction << "\n";
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  emit(c.out, csv);
  std::cerr << "xtf >= normal on " << wins << "/" << num_seeds << " seeds, mean filtered fraction "
            << filtered / num_seeds << ", " << seconds << " s\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-level noise filtering: synthetic data, scoring, filtering, masked fine-tuning, theory checks"};
  app.require_subcommand(1);

  Common common;
  std::string data, model, save_model, scores, masks, stats, sweep, report_dir, split = "train", eval_split = "test";
  std::optional<int> size;
  std::optional<double> noise_rate;
  bool hard = false;
  int bins = 20, num_seeds = 10;
  std::uint64_t first_seed = 0;

  auto* gen = app.add_subcommand("gen-synth", "write a synthetic corpus with ground-truth noise flags");
  add_common(gen, common, true);
  gen->add_option("--size", size, "number of records");
  gen->add_option("--noise-rate", noise_rate, "distractor probability per emitted label character");
  gen->add_flag("--hard", hard, "draw distractors from the task alphabet");

  auto* score = app.add_subcommand("score", "score one split of a dataset with a base model");
  add_common(score, common, true);
  score->add_option("--data", data, "dataset JSON-lines")->required();
  score->add_option("--model", model, "base checkpoint; pretrained from the config when absent");
  score->add_option("--save-model", save_model, "write the base checkpoint used for scoring");
  score->add_option("--split", split, "train, val or test");

  auto* filter = app.add_subcommand("filter", "turn scores into noise masks");
  add_common(filter, common, true);
  filter->add_option("--scores", scores, "scores JSON-lines")->required();
  filter->add_option("--data", data, "dataset, for stop-token protection and filter quality");
  filter->add_option("--split", split, "split the scores were computed on");
  filter->add_option("--stats", stats, "filter statistics JSON (stdout when absent)");

  auto* trn = app.add_subcommand("train", "fine-tune from a base checkpoint, with and without masks");
  add_common(trn, common, true);
  trn->add_option("--data", data, "dataset JSON-lines")->required();
  trn->add_option("--model", model, "base checkpoint")->required();
  trn->add_option("--masks", masks, "masks JSON-lines; only the normal arm runs when absent");

  auto* ev = app.add_subcommand("eval", "exact-match accuracy of a checkpoint");
  add_common(ev, common, false);
  ev->add_option("--data", data, "dataset JSON-lines")->required();
  ev->add_option("--model", model, "checkpoint")->required();
  ev->add_option("--split", eval_split, "train, val or test");

  auto* rep = app.add_subcommand("report", "score histograms, complementarity and filter quality");
  add_common(rep, common, true);
  rep->add_option("--scores", scores, "scores JSON-lines")->required();
  rep->add_option("--masks", masks, "masks JSON-lines");
  rep->add_option("--data", data, "dataset with ground-truth flags");
  rep->add_option("--bins", bins, "histogram bins over [0, 1]")->check(CLI::PositiveNumber);

  auto* vt = app.add_subcommand("verify-theory", "randomized checks of the alignment theory");
  add_common(vt, common, false);
  vt->add_option("--sweep", sweep, "gain sweep CSV");

  auto* runx = app.add_subcommand("run-experiment", "multi-seed normal vs masked fine-tuning, CSV per seed");
  add_common(runx, common, true);
  runx->add_option("--seeds", num_seeds, "number of seeds");
  runx->add_option("--first-seed", first_seed, "first seed of the run");
  runx->add_option("--report-dir", report_dir, "per-seed experiment report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(common, size, noise_rate, hard);
    if (score->parsed()) return cmd_score(common, data, model, save_model, split);
    if (filter->parsed()) return cmd_filter(common, scores, data, split, stats);
    if (trn->parsed()) return cmd_train(common, data, model, masks);
    if (ev->parsed()) return cmd_eval(common, data, model, eval_split);
    if (rep->parsed()) return cmd_report(common, scores, masks, data, bins);
    if (vt->parsed()) return cmd_verify_theory(common, sweep);
    if (runx->parsed()) return cmd_run_experiment(common, num_seeds, first_seed, report_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_input_error() ? 1 : 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
