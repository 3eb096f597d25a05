#pragma once

#include <map>
#include <span>
#include <string>

#include "xtf/filtering/filtering.hpp"
#include "xtf/training/training.hpp"

namespace xtf {

// An empty prediction has precision 1 by convention; empty truth has
// recall 1.
struct PrecisionRecall {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double precision = 1.0;
  double recall = 1.0;
};

struct FilterQuality {
  PrecisionRecall overall;
  std::map<Attribute, PrecisionRecall> per_attribute;  // tokens carrying that source bit
};

// `truth` holds one flag vector per mask. UnsupportedError when no ground
// truth is available.
FilterQuality filter_quality(std::span<const NoiseMask> masks, std::span<const LabelNoise> truth);
std::string filter_quality_json(const FilterQuality& q);

}  // namespace xtf
