#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cmvf/dataio.hpp"
#include "cmvf/trainer.hpp"

namespace cmvf {

// Flat key-value run configuration. Values resolve as
// defaults < config file < command-line overrides; unknown keys are
// rejected at every layer. The resolved map is written back verbatim into
// the output directory for provenance.
class RunConfig {
 public:
  RunConfig();  // defaults

  // `key = value` lines, '#' comments, blank lines.
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  bool was_set(const std::string& key) const { return explicit_.contains(key); }

  const std::string& str(const std::string& key) const;
  double number(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::uint64_t unsigned_integer(const std::string& key) const;

  TrainConfig train_config() const;
  SynthConfig synth_config() const;

  // sorted `key = value` lines
  std::string resolved_text() const;
  void write_resolved(const std::string& path) const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace cmvf
