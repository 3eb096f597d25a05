#include "xtf/pipeline/dataset.hpp"

#include <cstdio>
#include <random>
#include <set>

#include <json.hpp>

#include "xtf/io.hpp"

namespace xtf {

int char_to_id(char c) {
  const auto u = static_cast<unsigned char>(c);
  if (u >= 0x20 && u <= 0x7E) return u - 0x20;
  if (c == '\n') return kNewlineId;
  return -1;
}

char id_to_char(int id) {
  if (id >= 0 && id <= 94) return static_cast<char>(id + 0x20);
  if (id == kNewlineId) return '\n';
  throw InputError("token id " + std::to_string(id) + " has no character");
}

std::vector<int> encode_text(std::string_view text, std::string_view record_id) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const int id = char_to_id(text[i]);
    if (id < 0) {
      char hex[8];
      std::snprintf(hex, sizeof hex, "0x%02X", static_cast<unsigned char>(text[i]));
      throw InputError("record '" + std::string(record_id) + "': byte " + hex + " at offset " + std::to_string(i) +
                       " is outside the tokenizer alphabet");
    }
    ids.push_back(id);
  }
  return ids;
}

std::string decode_ids(std::span<const int> ids) {
  std::string s;
  s.reserve(ids.size());
  for (int id : ids) s.push_back(id_to_char(id));
  return s;
}

std::size_t DatasetRecord::label_units() const {
  if (output_text) return output_text->size();
  if (output_ids) return output_ids->size();
  return 0;
}

void DatasetRecord::validate(int vocab_size) const {
  const std::string where = "record '" + id + "': ";
  if (id.empty()) throw InputError("record without id");
  const bool text = input_text || output_text, ids = input_ids || output_ids;
  if (text == ids) throw InputError(where + "needs exactly one of (input_text, output_text) or (input_ids, output_ids)");
  if (text) {
    if (!input_text || !output_text) throw InputError(where + "input_text and output_text go together");
    if (output_text->empty()) throw InputError(where + "empty label");
    encode_text(*input_text, id);
    encode_text(*output_text, id);
  } else {
    if (!input_ids || !output_ids) throw InputError(where + "input_ids and output_ids go together");
    if (input_ids->empty()) throw InputError(where + "empty input");
    if (output_ids->empty()) throw InputError(where + "empty label");
    for (const auto* seq : {&*input_ids, &*output_ids})
      for (int t : *seq)
        if (t < 0 || t >= vocab_size)
          throw InputError(where + "token " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab_size));
  }
  if (noise && noise->size() != label_units())
    throw InputError(where + "noise has " + std::to_string(noise->size()) + " flags for " +
                     std::to_string(label_units()) + " label units");
}

TokenizedExample tokenize(const DatasetRecord& record) {
  record.validate();
  TokenizedExample ex;
  ex.id = record.id;
  if (record.text_mode()) {
    ex.input_ids.push_back(kBosId);
    for (int t : encode_text(*record.input_text, record.id)) ex.input_ids.push_back(t);
    ex.output_ids = encode_text(*record.output_text, record.id);
    ex.output_ids.push_back(kEosId);
  } else {
    ex.input_ids = *record.input_ids;
    ex.output_ids = *record.output_ids;
  }
  return ex;
}

std::vector<TokenizedExample> tokenize_all(std::span<const DatasetRecord> records) {
  std::vector<TokenizedExample> out;
  out.reserve(records.size());
  for (const DatasetRecord& r : records) out.push_back(tokenize(r));
  return out;
}

std::pair<std::string, std::string> detokenize(const TokenizedExample& ex) {
  std::span<const int> in(ex.input_ids), out(ex.output_ids);
  if (!in.empty() && in.front() == kBosId) in = in.subspan(1);
  if (!out.empty() && out.back() == kEosId) out = out.first(out.size() - 1);
  return {decode_ids(in), decode_ids(out)};
}

LabelNoise label_noise(const DatasetRecord& record, const TokenizedExample& ex) {
  if (!record.noise) throw UnsupportedError("record '" + record.id + "' carries no ground-truth noise flags");
  LabelNoise flags = *record.noise;
  flags.resize(ex.output_ids.size(), 0);
  return flags;
}

std::string record_to_json(const DatasetRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  if (r.input_text) {
    j["input_text"] = *r.input_text;
    j["output_text"] = *r.output_text;
  } else {
    j["input_ids"] = *r.input_ids;
    j["output_ids"] = *r.output_ids;
  }
  if (r.noise) {
    std::vector<bool> flags(r.noise->begin(), r.noise->end());
    j["noise"] = flags;
  }
  return j.dump();
}

DatasetRecord record_from_json(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("dataset: malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) throw InputError("dataset: record without string id");
  DatasetRecord r;
  r.id = j["id"].get<std::string>();
  try {
    if (j.contains("input_text")) r.input_text = j["input_text"].get<std::string>();
    if (j.contains("output_text")) r.output_text = j["output_text"].get<std::string>();
    if (j.contains("input_ids")) r.input_ids = j["input_ids"].get<std::vector<int>>();
    if (j.contains("output_ids")) r.output_ids = j["output_ids"].get<std::vector<int>>();
    if (j.contains("noise")) {
      LabelNoise flags;
      for (const auto& f : j["noise"]) flags.push_back(f.is_boolean() ? f.get<bool>() : f.get<int>() != 0);
      r.noise = std::move(flags);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("record '" + r.id + "': " + e.what());
  }
  return r;
}

std::string records_to_jsonl(std::span<const DatasetRecord> records) {
  std::string out;
  for (const DatasetRecord& r : records) out += record_to_json(r) + "\n";
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records) {
  write_file_atomic(path, records_to_jsonl(records));
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path, int vocab_size) {
  std::vector<DatasetRecord> out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (const std::string& line : read_jsonl_lines(path)) {
    ++line_no;
    DatasetRecord r;
    try {
      r = record_from_json(line);
      r.validate(vocab_size);
    } catch (const InputError& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(r.id).second) throw InputError(path.string() + ": duplicate id '" + r.id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

void SynthConfig::validate() const {
  if (task != "chained_addition") throw ConfigError("gen_synth: unknown task '" + task + "'");
  if (size < 1) throw ConfigError("gen_synth: size must be >= 1");
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw ConfigError("gen_synth: noise_rate must lie in [0, 1)");
}

std::vector<DatasetRecord> gen_synth(const SynthConfig& config) {
  config.validate();
  // Long tails of distractors are cut so every sample fits a 32-token window.
  constexpr int kMaxDistractors = 12;
  std::mt19937_64 operands(derive_seed(config.seed, "gen"));
  std::mt19937_64 noise(derive_seed(config.seed, "noise"));
  std::uniform_int_distribution<int> operand(0, 49);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const std::string_view distractors = config.hard ? kTaskAlphabet : kDistractorAlphabet;
  std::uniform_int_distribution<std::size_t> pick(0, distractors.size() - 1);

  std::vector<DatasetRecord> out;
  out.reserve(static_cast<std::size_t>(config.size));
  for (int i = 0; i < config.size; ++i) {
    const int a = operand(operands), b = operand(operands);
    const std::string sum = std::to_string(a + b), lhs = std::to_string(a) + "+" + std::to_string(b);
    const std::string clean = sum + " = " + lhs;
    std::string label;
    LabelNoise flags;
    int inserted = 0;
    for (std::size_t k = 0; k < clean.size();) {
      if (inserted < kMaxDistractors && coin(noise) < config.noise_rate) {
        label.push_back(distractors[pick(noise)]);
        flags.push_back(1);
        ++inserted;
      } else {
        label.push_back(clean[k++]);
        flags.push_back(0);
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "add-%05d", i);
    DatasetRecord r;
    r.id = id;
    r.input_text = lhs + "=";
    r.output_text = std::move(label);
    r.noise = std::move(flags);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<DatasetRecord> gen_general_text(int size, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "general"));
  std::uniform_int_distribution<int> length(2, 6);
  std::uniform_int_distribution<std::size_t> letter(0, kDistractorAlphabet.size() - 1);
  std::vector<DatasetRecord> out;
  for (int i = 0; i < size; ++i) {
    std::string word;
    for (int k = length(rng); k > 0; --k) word.push_back(kDistractorAlphabet[letter(rng)]);
    char id[32];
    std::snprintf(id, sizeof id, "gen-%05d", i);
    DatasetRecord r;
    r.id = id;
    r.input_text = word + ">";
    r.output_text = std::string(word.rbegin(), word.rend());
    out.push_back(std::move(r));
  }
  return out;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t z = seed ^ fnv1a(name);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Splits split_dataset(std::span<const DatasetRecord> records, std::size_t train_cap, std::size_t val_cap,
                     std::size_t test_cap) {
  Splits s;
  auto add = [](std::vector<DatasetRecord>& bucket, std::size_t cap, const DatasetRecord& r) {
    if (cap == 0 || bucket.size() < cap) bucket.push_back(r);
  };
  for (const DatasetRecord& r : records) {
    const std::uint64_t bucket = fnv1a(r.id) % 10;
    if (bucket < 8)
      add(s.train, train_cap, r);
    else if (bucket == 8)
      add(s.val, val_cap, r);
    else
      add(s.test, test_cap, r);
  }
  return s;
}

DatasetRecord clean_record(const DatasetRecord& record) {
  if (!record.noise) return record;
  DatasetRecord r = record;
  const LabelNoise& f = *record.noise;
  if (record.text_mode()) {
    std::string kept;
    for (std::size_t k = 0; k < f.size(); ++k)
      if (!f[k]) kept.push_back((*record.output_text)[k]);
    r.output_text = std::move(kept);
  } else {
    std::vector<int> kept;
    for (std::size_t k = 0; k < f.size(); ++k)
      if (!f[k]) kept.push_back((*record.output_ids)[k]);
    r.output_ids = std::move(kept);
  }
  r.noise = LabelNoise(r.label_units(), 0);
  return r;
}

}  // namespace xtf
