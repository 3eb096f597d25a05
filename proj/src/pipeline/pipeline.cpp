#include "xtf/pipeline/pipeline.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "xtf/io.hpp"
#include "xtf/model/checkpoint.hpp"

namespace xtf {

ExperimentData prepare_data(const PipelineConfig& config, std::span<const DatasetRecord> records) {
  const Splits s = split_dataset(records, config.train_cap, config.val_cap, config.test_cap);
  if (s.train.empty() || s.val.empty() || s.test.empty())
    throw InputError("dataset too small: split gave " + std::to_string(s.train.size()) + "/" +
                     std::to_string(s.val.size()) + "/" + std::to_string(s.test.size()) + " train/val/test");
  ExperimentData d;
  d.train = tokenize_all(s.train);
  bool all_flagged = true;
  for (const DatasetRecord& r : s.train) all_flagged = all_flagged && r.noise.has_value();
  if (all_flagged)
    for (std::size_t i = 0; i < s.train.size(); ++i) d.truth.push_back(label_noise(s.train[i], d.train[i]));
  for (const DatasetRecord& r : s.val) d.val.push_back(tokenize(clean_record(r)));
  for (const DatasetRecord& r : s.test) d.test.push_back(tokenize(clean_record(r)));
  return d;
}

ModelParams pretrain_base(const PipelineConfig& config, std::span<const TokenizedExample> exclude,
                          const EpochCallback& on_epoch) {
  ModelParams init = init_params(config.model);
  if (config.base_samples == 0 || config.base_epochs == 0) return init;

  SynthConfig aux = config.synth;
  aux.noise_rate = 0.0;
  aux.size = config.base_samples;
  aux.seed = derive_seed(config.seed, "base");
  std::set<std::vector<int>> held_out;
  for (const TokenizedExample& ex : exclude) held_out.insert(ex.input_ids);
  std::vector<TokenizedExample> task;
  for (DatasetRecord r : gen_synth(aux)) {
    if (config.base_answer_only) {
      r.output_text = r.output_text->substr(0, r.output_text->find(' '));
      r.noise.reset();
    }
    TokenizedExample ex = tokenize(r);
    if (!held_out.count(ex.input_ids)) task.push_back(std::move(ex));
  }
  std::vector<TokenizedExample> general =
      tokenize_all(gen_general_text(config.base_general_samples, derive_seed(config.seed, "base")));
  if (task.size() < 10) throw ConfigError("base corpus too small after removing held-out inputs");

  // The last tenth of each part (at most kBaseValCap examples) is
  // validation, so checkpoint selection sees the task even when general text
  // dominates.
  constexpr std::size_t kBaseValCap = 100;
  std::vector<TokenizedExample> corpus, val;
  for (const auto* part : {&task, &general}) {
    const std::size_t cut = part->size() - std::min(part->size() / 10, kBaseValCap);
    corpus.insert(corpus.end(), part->begin(), part->begin() + static_cast<std::ptrdiff_t>(cut));
    val.insert(val.end(), part->begin() + static_cast<std::ptrdiff_t>(cut), part->end());
  }
  TrainConfig tc = config.train;
  tc.epochs = config.base_epochs;
  tc.learning_rate = config.base_learning_rate;
  tc.seed = derive_seed(config.seed, "base-shuffle");
  TrainResult r = train(init, corpus, {}, val, tc, kEosId, on_epoch);
  if (r.aborted) throw TrainingError("base pretraining: " + r.diagnostic);
  return std::move(r.best);
}

ModelParams base_model(const PipelineConfig& config, std::span<const TokenizedExample> exclude) {
  if (config.checkpoint.empty()) return pretrain_base(config, exclude);
  ModelParams p = load_checkpoint(config.checkpoint);
  if (p.config.vocab_size != kVocabSize)
    throw InputError(config.checkpoint + ": checkpoint vocabulary " + std::to_string(p.config.vocab_size) +
                     " does not match the tokenizer (" + std::to_string(kVocabSize) + ")");
  return p;
}

ExperimentResult run_seed(const PipelineConfig& config) {
  const std::uint64_t seed = config.seed;
  return run_seeds(config, std::span<const std::uint64_t>(&seed, 1)).front();
}

std::vector<ExperimentResult> run_seeds(const PipelineConfig& config, std::span<const std::uint64_t> seeds,
                                        const std::function<void(const ExperimentResult&)>& on_result) {
  config.validate();
  std::vector<PipelineConfig> configs;
  std::vector<ExperimentData> data;
  std::vector<TokenizedExample> held_out;
  for (std::uint64_t seed : seeds) {
    PipelineConfig c = config;
    c.reseed(seed);
    data.push_back(prepare_data(c, gen_synth(c.synth)));
    held_out.insert(held_out.end(), data.back().val.begin(), data.back().val.end());
    held_out.insert(held_out.end(), data.back().test.begin(), data.back().test.end());
    configs.push_back(std::move(c));
  }
  const ModelParams base = base_model(config, held_out);
  std::vector<ExperimentResult> out;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const PipelineConfig& c = configs[i];
    out.push_back(run_experiment(base, data[i], c.scoring, c.filter, c.train, kEosId, c.seed));
    if (on_result) on_result(out.back());
  }
  return out;
}

std::string experiment_csv_header() {
  return "seed,normal_acc,xtf_acc,filtered_fraction,ri_count,kn_count,tr_count,precision,recall,"
         "ri_precision,ri_recall,kn_precision,kn_recall,tr_precision,tr_recall\n";
}

std::string experiment_csv_row(const ExperimentResult& r) {
  std::ostringstream os;
  os << r.seed << ',' << format_double17(r.normal_acc) << ',' << format_double17(r.xtf_acc) << ','
     << format_double17(r.filtered_fraction);
  for (Attribute a : kAttributes) {
    auto it = r.stats.per_attribute_counts.find(a);
    os << ',' << (it == r.stats.per_attribute_counts.end() ? 0 : it->second);
  }
  if (r.quality) {
    os << ',' << format_double17(r.quality->overall.precision) << ',' << format_double17(r.quality->overall.recall);
    for (Attribute a : kAttributes) {
      const PrecisionRecall& pr = r.quality->per_attribute.at(a);
      os << ',' << format_double17(pr.precision) << ',' << format_double17(pr.recall);
    }
  } else {
    os << ",,,,,,,,";
  }
  os << '\n';
  return os.str();
}

}  // namespace xtf
