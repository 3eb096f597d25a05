#include "xtf/pipeline/quality.hpp"

#include <json.hpp>

namespace xtf {
namespace {

void finish(PrecisionRecall& pr) {
  const std::size_t predicted = pr.true_positives + pr.false_positives;
  const std::size_t actual = pr.true_positives + pr.false_negatives;
  pr.precision = predicted == 0 ? 1.0 : static_cast<double>(pr.true_positives) / static_cast<double>(predicted);
  pr.recall = actual == 0 ? 1.0 : static_cast<double>(pr.true_positives) / static_cast<double>(actual);
}

void tally(PrecisionRecall& pr, bool predicted, bool actual) {
  if (predicted && actual) ++pr.true_positives;
  if (predicted && !actual) ++pr.false_positives;
  if (!predicted && actual) ++pr.false_negatives;
}

nlohmann::ordered_json to_json(const PrecisionRecall& pr) {
  nlohmann::ordered_json j;
  j["precision"] = pr.precision;
  j["recall"] = pr.recall;
  j["true_positives"] = pr.true_positives;
  j["false_positives"] = pr.false_positives;
  j["false_negatives"] = pr.false_negatives;
  return j;
}

}  // namespace

FilterQuality filter_quality(std::span<const NoiseMask> masks, std::span<const LabelNoise> truth) {
  if (truth.empty() && !masks.empty()) throw UnsupportedError("filter quality needs ground-truth noise flags");
  if (truth.size() != masks.size())
    throw ContractError("filter quality: " + std::to_string(truth.size()) + " truth vectors for " +
                        std::to_string(masks.size()) + " masks");
  FilterQuality q;
  for (Attribute a : kAttributes) q.per_attribute[a] = {};
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (truth[i].size() != masks[i].size())
      throw ContractError("filter quality: example '" + masks[i].id + "' truth/mask length mismatch");
    for (std::size_t k = 0; k < masks[i].size(); ++k) {
      const bool actual = truth[i][k] != 0;
      tally(q.overall, masks[i].noise(k), actual);
      for (Attribute a : kAttributes) tally(q.per_attribute[a], (masks[i].sources[k] & bit(a)) != 0, actual);
    }
  }
  finish(q.overall);
  for (auto& [a, pr] : q.per_attribute) finish(pr);
  return q;
}

std::string filter_quality_json(const FilterQuality& q) {
  nlohmann::ordered_json j;
  j["overall"] = to_json(q.overall);
  nlohmann::ordered_json per;
  for (const auto& [a, pr] : q.per_attribute) per[std::string(to_string(a))] = to_json(pr);
  j["per_attribute"] = per;
  return j.dump(2) + "\n";
}

}  // namespace xtf
