#include "xtf/training/experiment.hpp"

#include <json.hpp>

namespace xtf {

ExperimentResult train_arms(const ModelParams& base, const ExperimentData& data, std::vector<NoiseMask> masks,
                            const TrainConfig& train_config, int stop_id, std::uint64_t seed) {
  if (masks.size() != data.train.size())
    throw ContractError("train_arms: " + std::to_string(masks.size()) + " masks for " +
                        std::to_string(data.train.size()) + " training examples");
  ExperimentResult r;
  r.seed = seed;
  r.masks = std::move(masks);
  for (std::size_t i = 0; i < r.masks.size(); ++i) {
    if (r.masks[i].size() != data.train[i].output_ids.size())
      throw ContractError("train_arms: mask length mismatch for '" + data.train[i].id + "'");
    r.stats.total_tokens += r.masks[i].size();
    r.stats.noise_tokens += r.masks[i].noise_count();
  }
  for (Attribute a : kAttributes) r.stats.per_attribute_counts[a] = 0;
  for (const NoiseMask& m : r.masks)
    for (SourceSet s : m.sources)
      for (Attribute a : kAttributes)
        if (s & bit(a)) ++r.stats.per_attribute_counts[a];
  r.filtered_fraction = r.stats.total_tokens == 0
                            ? 0.0
                            : static_cast<double>(r.stats.noise_tokens) / static_cast<double>(r.stats.total_tokens);
  if (!data.truth.empty()) r.quality = filter_quality(r.masks, data.truth);

  std::vector<LabelNoise> flags;
  flags.reserve(r.masks.size());
  for (const NoiseMask& m : r.masks) flags.push_back(m.noise_flags());

  r.normal = train(base, data.train, {}, data.val, train_config, stop_id);
  r.xtf = train(base, data.train, flags, data.val, train_config, stop_id);
  if (r.normal.aborted) throw TrainingError("normal arm: " + r.normal.diagnostic);
  if (r.xtf.aborted) throw TrainingError("xtf arm: " + r.xtf.diagnostic);
  r.normal_acc = evaluate(r.normal.best, data.test, stop_id);
  r.xtf_acc = evaluate(r.xtf.best, data.test, stop_id);
  return r;
}

ExperimentResult run_experiment(const ModelParams& base, const ExperimentData& data, const ScoringConfig& scoring,
                                const FilterConfig& filter, const TrainConfig& train_config, int stop_id,
                                std::uint64_t seed) {
  const ScoredDataset scored = score_dataset(base, data.train, scoring);
  if (!scored.failures.empty())
    throw InputError("experiment: example '" + scored.failures.front().id + "' could not be scored: " +
                     scored.failures.front().message);
  FilterResult filtered = filter_dataset(scored.scores, filter);
  if (filter.keep_stop) filtered.stats.noise_tokens -= unmask_token(filtered.masks, data.train, stop_id);
  ExperimentResult r = train_arms(base, data, std::move(filtered.masks), train_config, stop_id, seed);
  r.stats = std::move(filtered.stats);
  return r;
}

std::string experiment_report_json(const ExperimentResult& r) {
  nlohmann::ordered_json j;
  j["normal_acc"] = r.normal_acc;
  j["xtf_acc"] = r.xtf_acc;
  j["filtered_fraction"] = r.filtered_fraction;
  nlohmann::ordered_json counts;
  for (const auto& [a, n] : r.stats.per_attribute_counts) counts[std::string(to_string(a))] = n;
  j["per_attribute_counts"] = counts;
  j["seed"] = r.seed;
  j["total_tokens"] = r.stats.total_tokens;
  j["noise_tokens"] = r.stats.noise_tokens;
  j["normal_best_epoch"] = r.normal.best_epoch;
  j["xtf_best_epoch"] = r.xtf.best_epoch;
  j["normal_val_acc"] = r.normal.best_val_acc;
  j["xtf_val_acc"] = r.xtf.best_val_acc;
  if (r.quality) {
    j["precision"] = r.quality->overall.precision;
    j["recall"] = r.quality->overall.recall;
    j["filter_quality"] = nlohmann::ordered_json::parse(filter_quality_json(*r.quality));
  }
  return j.dump(2) + "\n";
}

}  // namespace xtf
