#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xtf/example.hpp"
#include "xtf/training/training.hpp"

namespace xtf {

// Byte tokenizer. Printable ASCII 0x20..0x7E maps to ids 0..94 in byte
// order ('\x20' -> 0, '~' -> 94), '\n' is 95, then the specials.
inline constexpr int kNewlineId = 95;
inline constexpr int kPadId = 96;
inline constexpr int kBosId = 97;
inline constexpr int kEosId = 98;
inline constexpr int kVocabSize = 99;

// -1 for bytes outside the alphabet.
int char_to_id(char c);
// InputError for specials and out-of-range ids.
char id_to_char(int id);

std::vector<int> encode_text(std::string_view text, std::string_view record_id = {});
std::string decode_ids(std::span<const int> ids);

struct DatasetRecord {
  std::string id;
  std::optional<std::string> input_text;
  std::optional<std::string> output_text;
  std::optional<std::vector<int>> input_ids;
  std::optional<std::vector<int>> output_ids;
  // Ground-truth noise per label unit: characters in text mode, ids in id
  // mode. Synthetic corpora only.
  std::optional<LabelNoise> noise;

  bool text_mode() const { return input_text.has_value(); }
  std::size_t label_units() const;
  void validate(int vocab_size = kVocabSize) const;
};

// Text mode: BOS + input bytes, label bytes + EOS. Id mode: ids as given.
TokenizedExample tokenize(const DatasetRecord& record);
std::vector<TokenizedExample> tokenize_all(std::span<const DatasetRecord> records);

// Inverse of tokenize for text records: strips BOS and a trailing EOS.
std::pair<std::string, std::string> detokenize(const TokenizedExample& ex);

// Ground-truth flags over the tokenized label (EOS is never noise). Throws
// UnsupportedError when the record carries no flags.
LabelNoise label_noise(const DatasetRecord& record, const TokenizedExample& ex);

std::string record_to_json(const DatasetRecord& record);
DatasetRecord record_from_json(std::string_view line);
std::string records_to_jsonl(std::span<const DatasetRecord> records);
void write_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records);
// Validates every record; ids must be unique.
std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path, int vocab_size = kVocabSize);

struct SynthConfig {
  std::string task = "chained_addition";
  int size = 800;
  double noise_rate = 0.25;
  bool hard = false;  // distractors drawn from the task alphabet
  std::uint64_t seed = 0;

  void validate() const;
};

// Input "a+b=" with a, b < 50; clean label "<a+b> = <a>+<b>". While clean
// characters remain, each emitted label character is a flagged distractor
// with probability noise_rate, otherwise the next clean character.
std::vector<DatasetRecord> gen_synth(const SynthConfig& config);

// Off-task text for base pretraining: input "<word>>" with a random
// lowercase word of 2-6 letters, label the word reversed. Never noisy.
std::vector<DatasetRecord> gen_general_text(int size, std::uint64_t seed);

inline constexpr std::string_view kTaskAlphabet = "0123456789+= ";
inline constexpr std::string_view kDistractorAlphabet = "abcdefghijklmnopqrstuvwxyz";

std::uint64_t fnv1a(std::string_view bytes);
// splitmix64 of seed ^ fnv1a(name): independent streams per component.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

struct Splits {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> val;
  std::vector<DatasetRecord> test;
};

// fnv1a(id) mod 10: 0-7 train, 8 val, 9 test, each capped (0 = no cap) in
// dataset order.
Splits split_dataset(std::span<const DatasetRecord> records, std::size_t train_cap = 0, std::size_t val_cap = 0,
                     std::size_t test_cap = 0);

// Val/test targets drop flagged characters: evaluation compares against the
// clean label.
DatasetRecord clean_record(const DatasetRecord& record);

}  // namespace xtf
