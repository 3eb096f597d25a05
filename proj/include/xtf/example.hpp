#pragma once

#include <string>
#include <vector>

namespace xtf {

// One fine-tuning sample. Label position k sits at absolute position
// input_ids.size() + k of the concatenated sequence.
struct TokenizedExample {
  std::string id;
  std::vector<int> input_ids;
  std::vector<int> output_ids;

  int input_length() const { return static_cast<int>(input_ids.size()); }
  int label_length() const { return static_cast<int>(output_ids.size()); }

  std::vector<int> full_sequence() const {
    std::vector<int> seq = input_ids;
    seq.insert(seq.end(), output_ids.begin(), output_ids.end());
    return seq;
  }
};

}  // namespace xtf
