#include "xtf/pipeline/config.hpp"

#include <charconv>
#include <sstream>

#include "xtf/io.hpp"

namespace xtf {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

SourceSet parse_attribute_list(const std::string& value) {
  SourceSet set = 0;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string_view name = trim(item);
    if (!name.empty()) set |= bit(parse_attribute(name));
  }
  return set;
}

std::string attribute_list(SourceSet set) {
  std::string out;
  for (Attribute a : kAttributes)
    if (set & bit(a)) out += (out.empty() ? "" : ",") + std::string(to_string(a));
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::string_view text, std::string_view source) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": empty key");
    out[key] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

PipelineConfig::PipelineConfig() {
  model.vocab_size = kVocabSize;
  model.d_model = 32;
  model.n_layers = 2;
  model.n_heads = 2;
  model.d_ff = 64;
  model.max_seq = 32;
  train.epochs = 10;
  train.batch_size = 8;
  train.learning_rate = 1e-4;
  reseed(0);
}

void PipelineConfig::reseed(std::uint64_t new_seed) {
  seed = new_seed;
  synth.seed = new_seed;
  model.seed = derive_seed(new_seed, "init");
  train.seed = derive_seed(new_seed, "shuffle");
}

void PipelineConfig::validate() const {
  model.validate();
  synth.validate();
  filter.validate();
  train.validate();
  if (base_samples < 0 || base_general_samples < 0 || base_epochs < 0)
    throw ConfigError("base.samples, base.general_samples and base.epochs must be >= 0");
  if (!(base_learning_rate > 0)) throw ConfigError("base.learning_rate must be > 0");
}

void apply_setting(PipelineConfig& c, const std::string& key, const std::string& v) {
  if (key == "seed") c.reseed(parse_number<std::uint64_t>(key, v));
  else if (key == "model.d_model") c.model.d_model = parse_number<int>(key, v);
  else if (key == "model.n_layers") c.model.n_layers = parse_number<int>(key, v);
  else if (key == "model.n_heads") c.model.n_heads = parse_number<int>(key, v);
  else if (key == "model.d_ff") c.model.d_ff = parse_number<int>(key, v);
  else if (key == "model.max_seq") c.model.max_seq = parse_number<int>(key, v);
  else if (key == "model.checkpoint") c.checkpoint = v;
  else if (key == "data.task") c.synth.task = v;
  else if (key == "data.size") c.synth.size = parse_number<int>(key, v);
  else if (key == "data.noise_rate") c.synth.noise_rate = parse_number<double>(key, v);
  else if (key == "data.hard") c.synth.hard = parse_bool(key, v);
  else if (key == "split.train_cap") c.train_cap = parse_number<std::size_t>(key, v);
  else if (key == "split.val_cap") c.val_cap = parse_number<std::size_t>(key, v);
  else if (key == "split.test_cap") c.test_cap = parse_number<std::size_t>(key, v);
  else if (key == "base.samples") c.base_samples = parse_number<int>(key, v);
  else if (key == "base.general_samples") c.base_general_samples = parse_number<int>(key, v);
  else if (key == "base.answer_only") c.base_answer_only = parse_bool(key, v);
  else if (key == "base.epochs") c.base_epochs = parse_number<int>(key, v);
  else if (key == "base.learning_rate") c.base_learning_rate = parse_number<double>(key, v);
  else if (key == "score.ri_agg") c.scoring.ri_agg = parse_ri_aggregation(v);
  else if (key == "score.distance") c.scoring.distance = parse_distance_kind(v);
  else if (key == "score.domain_source") c.scoring.domain_source = parse_domain_source(v);
  else if (key == "filter.kn_cutoff") c.filter.kn_cutoff = parse_number<double>(key, v);
  else if (key == "filter.otsu_classes") c.filter.otsu_classes = parse_number<int>(key, v);
  else if (key == "filter.otsu_bins") c.filter.otsu_bins = parse_number<int>(key, v);
  else if (key == "filter.keep_stop") c.filter.keep_stop = parse_bool(key, v);
  else if (key == "filter.attributes") c.filter.enabled = parse_attribute_list(v);
  else if (key == "train.learning_rate") c.train.learning_rate = parse_number<double>(key, v);
  else if (key == "train.epochs") c.train.epochs = parse_number<int>(key, v);
  else if (key == "train.batch_size") c.train.batch_size = parse_number<int>(key, v);
  else if (key == "train.optimizer") c.train.optimizer = parse_optimizer_mode(v);
  else if (key == "train.report_every") c.train.report_every = parse_number<int>(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

PipelineConfig parse_pipeline_config(std::string_view text, std::string_view source) {
  PipelineConfig c;
  const auto kv = parse_key_values(text, source);
  // The seed goes first so explicit component settings are not overwritten.
  if (auto it = kv.find("seed"); it != kv.end()) apply_setting(c, it->first, it->second);
  for (const auto& [key, value] : kv)
    if (key != "seed") apply_setting(c, key, value);
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  return parse_pipeline_config(read_file(path), path.string());
}

std::string PipelineConfig::to_text() const {
  std::ostringstream os;
  os << "seed = " << seed << "\n"
     << "model.d_model = " << model.d_model << "\n"
     << "model.n_layers = " << model.n_layers << "\n"
     << "model.n_heads = " << model.n_heads << "\n"
     << "model.d_ff = " << model.d_ff << "\n"
     << "model.max_seq = " << model.max_seq << "\n";
  if (!checkpoint.empty()) os << "model.checkpoint = " << checkpoint << "\n";
  os << "data.task = " << synth.task << "\n"
     << "data.size = " << synth.size << "\n"
     << "data.noise_rate = " << format_double17(synth.noise_rate) << "\n"
     << "data.hard = " << (synth.hard ? "true" : "false") << "\n"
     << "split.train_cap = " << train_cap << "\n"
     << "split.val_cap = " << val_cap << "\n"
     << "split.test_cap = " << test_cap << "\n"
     << "base.samples = " << base_samples << "\n"
     << "base.general_samples = " << base_general_samples << "\n"
     << "base.answer_only = " << (base_answer_only ? "true" : "false") << "\n"
     << "base.epochs = " << base_epochs << "\n"
     << "base.learning_rate = " << format_double17(base_learning_rate) << "\n"
     << "score.ri_agg = " << to_string(scoring.ri_agg) << "\n"
     << "score.distance = " << to_string(scoring.distance) << "\n"
     << "score.domain_source = " << to_string(scoring.domain_source) << "\n"
     << "filter.kn_cutoff = " << format_double17(filter.kn_cutoff) << "\n"
     << "filter.otsu_classes = " << filter.otsu_classes << "\n"
     << "filter.otsu_bins = " << filter.otsu_bins << "\n"
     << "filter.attributes = " << attribute_list(filter.enabled) << "\n"
     << "filter.keep_stop = " << (filter.keep_stop ? "true" : "false") << "\n"
     << "train.learning_rate = " << format_double17(train.learning_rate) << "\n"
     << "train.epochs = " << train.epochs << "\n"
     << "train.batch_size = " << train.batch_size << "\n"
     << "train.optimizer = " << to_string(train.optimizer) << "\n"
     << "train.report_every = " << train.report_every << "\n";
  return os.str();
}

}  // namespace xtf
