#include "cmvf/config.hpp"

#include <charconv>
#include <fstream>

#include "cmvf/errors.hpp"

namespace cmvf {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig() {
  values_ = {
      // io
      {"data", ""},
      {"out", "cmvf_out"},
      {"checkpoint", ""},
      {"base", ""},
      {"split", "test"},
      {"seed", "7"},
      // model / training
      {"embedding_dim", "64"},
      {"capsules", "30"},
      {"routing_iterations", "3"},
      {"alpha", "0.5"},
      {"mc_samples", "1"},
      {"batch_size", "2048"},
      {"learning_rate", "0.001"},
      {"max_epochs", "30"},
      {"patience", "5"},
      {"valid_fraction", "0.1"},
      {"variant", "full"},
      {"membership", "norm"},
      // generator
      {"synth_students", "200"},
      {"synth_questions", "300"},
      {"synth_concepts", "30"},
      {"synth_min_len", "3"},
      {"synth_max_len", "200"},
      {"synth_length_shape", "1.0"},
      {"synth_ability_mean", "0.0"},
      {"synth_ability_sd", "2.0"},
      {"synth_difficulty_sd", "1.0"},
      {"synth_learning_gain", "1.0"},
      {"synth_max_concepts", "3"},
  };
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    std::size_t eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + " line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
  explicit_.insert(key);
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::number(const std::string& key) const {
  const std::string& s = str(key);
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
  }
}

std::int64_t RunConfig::integer(const std::string& key) const {
  const std::string& s = str(key);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not an integer");
  }
  return v;
}

std::uint64_t RunConfig::unsigned_integer(const std::string& key) const {
  std::int64_t v = integer(key);
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(v);
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.embedding_dim = static_cast<std::size_t>(unsigned_integer("embedding_dim"));
  c.capsule_count = static_cast<std::size_t>(unsigned_integer("capsules"));
  c.routing_iterations = static_cast<int>(integer("routing_iterations"));
  c.alpha = number("alpha");
  c.mc_samples = static_cast<int>(integer("mc_samples"));
  c.batch_size = static_cast<std::size_t>(unsigned_integer("batch_size"));
  c.learning_rate = number("learning_rate");
  c.max_epochs = static_cast<int>(integer("max_epochs"));
  c.patience = static_cast<int>(integer("patience"));
  c.seed = unsigned_integer("seed");
  c.variant = parse_variant(str("variant"));
  const std::string& mode = str("membership");
  if (mode == "norm") {
    c.membership = MembershipMode::norm;
  } else if (mode == "softmax") {
    c.membership = MembershipMode::softmax;
  } else {
    throw ConfigError("config key 'membership' must be norm or softmax, got '" + mode + "'");
  }
  c.valid_fraction = number("valid_fraction");
  c.validate();
  return c;
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig c;
  c.students = static_cast<std::size_t>(unsigned_integer("synth_students"));
  c.questions = static_cast<std::size_t>(unsigned_integer("synth_questions"));
  c.concepts = static_cast<std::size_t>(unsigned_integer("synth_concepts"));
  c.min_length = static_cast<std::size_t>(unsigned_integer("synth_min_len"));
  c.max_length = static_cast<std::size_t>(unsigned_integer("synth_max_len"));
  c.length_shape = number("synth_length_shape");
  c.ability_mean = number("synth_ability_mean");
  c.ability_sd = number("synth_ability_sd");
  c.difficulty_sd = number("synth_difficulty_sd");
  c.learning_gain = number("synth_learning_gain");
  c.max_concepts_per_question = static_cast<std::size_t>(unsigned_integer("synth_max_concepts"));
  return c;
}

std::string RunConfig::resolved_text() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    out += key;
    out += " = ";
    out += value;
    out += "\n";
  }
  return out;
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << resolved_text();
}

}  // namespace cmvf
