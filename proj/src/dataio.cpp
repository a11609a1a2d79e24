#include "cmvf/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cmvf/errors.hpp"
#include "cmvf/rng.hpp"

namespace cmvf {

namespace {

constexpr const char* kCsvHeader = "student_id,question_id,concept_ids,response,order_index";

struct RawRow {
  std::string student;
  std::string question;
  std::vector<std::string> concepts;
  int response = 0;
  std::int64_t order_index = 0;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::int64_t parse_int(const std::string& s, std::size_t line, const char* field) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ValidationError("csv line " + std::to_string(line) + ": bad " + field + " '" + s + "'");
  }
  return v;
}

// Shared tail of load_csv and synthesize: orders, truncates, filters and
// dense-indexes raw rows. Keeps the two producers bit-compatible.
Dataset build_dataset(std::vector<std::pair<std::string, std::vector<RawRow>>>& by_student) {
  for (auto& [student, rows] : by_student) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const RawRow& a, const RawRow& b) { return a.order_index < b.order_index; });
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].order_index == rows[i - 1].order_index) {
        throw ValidationError("student '" + student + "': duplicate order_index " +
                              std::to_string(rows[i].order_index));
      }
    }
    if (rows.size() > kMaxSequenceLength) {
      rows.erase(rows.begin(), rows.end() - static_cast<std::ptrdiff_t>(kMaxSequenceLength));
    }
  }
  std::erase_if(by_student,
                [](const auto& entry) { return entry.second.size() < kMinSequenceLength; });
  if (by_student.empty()) {
    throw ValidationError("no student has the minimum of " +
                          std::to_string(kMinSequenceLength) + " records");
  }

  auto ids = std::make_shared<IdMaps>();
  Dataset d;
  for (auto& [student, rows] : by_student) {
    std::size_t s = ids->intern_student(student);
    StudentSequence seq;
    seq.student = s;
    seq.events.reserve(rows.size());
    for (RawRow& row : rows) {
      InteractionEvent e;
      e.student = s;
      e.question = ids->intern_question(row.question);
      for (const std::string& c : row.concepts) e.concepts.push_back(ids->intern_concept(c));
      std::sort(e.concepts.begin(), e.concepts.end());
      e.concepts.erase(std::unique(e.concepts.begin(), e.concepts.end()), e.concepts.end());
      e.response = row.response;
      e.order_index = row.order_index;
      seq.events.push_back(std::move(e));
    }
    d.sequences.push_back(std::move(seq));
  }
  d.ids = std::move(ids);
  return d;
}

}  // namespace

std::size_t IdMaps::intern_student(const std::string& raw) {
  auto [it, added] = student_index.try_emplace(raw, students.size());
  if (added) students.push_back(raw);
  return it->second;
}

std::size_t IdMaps::intern_question(const std::string& raw) {
  auto [it, added] = question_index.try_emplace(raw, questions.size());
  if (added) questions.push_back(raw);
  return it->second;
}

std::size_t IdMaps::intern_concept(const std::string& raw) {
  auto [it, added] = concept_index.try_emplace(raw, concepts.size());
  if (added) concepts.push_back(raw);
  return it->second;
}

std::size_t Dataset::total_events() const {
  std::size_t n = 0;
  for (const StudentSequence& s : sequences) n += s.events.size();
  return n;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ValidationError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) {
    throw ValidationError("'" + path + "': header must be '" + kCsvHeader + "', got '" + line +
                          "'");
  }

  std::vector<std::pair<std::string, std::vector<RawRow>>> by_student;
  std::unordered_map<std::string, std::size_t> order;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split(line, ',');
    if (fields.size() != 5) {
      throw ValidationError("csv line " + std::to_string(line_no) + ": expected 5 fields, got " +
                            std::to_string(fields.size()));
    }
    RawRow row;
    row.student = fields[0];
    row.question = fields[1];
    if (row.student.empty() || row.question.empty()) {
      throw ValidationError("csv line " + std::to_string(line_no) + ": empty identifier");
    }
    for (const std::string& c : split(fields[2], ';')) {
      if (!c.empty()) row.concepts.push_back(c);
    }
    if (row.concepts.empty()) {
      throw ValidationError("csv line " + std::to_string(line_no) + ": concept_ids is empty");
    }
    std::int64_t resp = parse_int(fields[3], line_no, "response");
    if (resp != 0 && resp != 1) {
      throw ValidationError("csv line " + std::to_string(line_no) + ": response must be 0 or 1");
    }
    row.response = static_cast<int>(resp);
    row.order_index = parse_int(fields[4], line_no, "order_index");
    if (row.order_index < 0) {
      throw ValidationError("csv line " + std::to_string(line_no) + ": negative order_index");
    }

    auto [it, added] = order.try_emplace(row.student, by_student.size());
    if (added) by_student.emplace_back(row.student, std::vector<RawRow>{});
    by_student[it->second].second.push_back(std::move(row));
  }
  if (by_student.empty()) throw ValidationError("'" + path + "' has no data rows");
  return build_dataset(by_student);
}

void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << kCsvHeader << "\n";
  for (const StudentSequence& seq : d.sequences) {
    for (const InteractionEvent& e : seq.events) {
      out << d.ids->students[e.student] << ',' << d.ids->questions[e.question] << ',';
      for (std::size_t i = 0; i < e.concepts.size(); ++i) {
        if (i) out << ';';
        out << d.ids->concepts[e.concepts[i]];
      }
      out << ',' << e.response << ',' << e.order_index << "\n";
    }
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

std::pair<Dataset, Dataset> split_per_student(const Dataset& d, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ValidationError("split ratio must be in (0, 1), got " + std::to_string(ratio));
  }
  Dataset train, test;
  train.ids = d.ids;
  test.ids = d.ids;
  for (const StudentSequence& seq : d.sequences) {
    std::size_t n = seq.events.size();
    std::size_t cut = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
    StudentSequence tr{seq.student, {seq.events.begin(), seq.events.begin() + cut}};
    StudentSequence te{seq.student, {seq.events.begin() + cut, seq.events.end()}};
    train.sequences.push_back(std::move(tr));
    test.sequences.push_back(std::move(te));
  }
  return {std::move(train), std::move(test)};
}

Dataset merge_splits(const Dataset& train, const Dataset& test) {
  if (train.ids != test.ids) {
    throw ValidationError("merge_splits: splits do not share id maps");
  }
  if (train.sequences.size() != test.sequences.size()) {
    throw ValidationError("merge_splits: student counts differ");
  }
  Dataset merged;
  merged.ids = train.ids;
  for (std::size_t s = 0; s < train.sequences.size(); ++s) {
    StudentSequence seq;
    seq.student = train.sequences[s].student;
    seq.events = train.sequences[s].events;
    seq.events.insert(seq.events.end(), test.sequences[s].events.begin(),
                      test.sequences[s].events.end());
    merged.sequences.push_back(std::move(seq));
  }
  return merged;
}

FrequencyStats frequency_stats(const Dataset& train) {
  FrequencyStats stats;
  stats.student_events.assign(train.student_count(), 0);
  stats.question_events.assign(train.question_count(), 0);
  for (const StudentSequence& seq : train.sequences) {
    for (const InteractionEvent& e : seq.events) {
      stats.student_events[e.student] += 1;
      stats.question_events[e.question] += 1;
    }
  }
  return stats;
}

StudentGroups group_students(const Dataset& d) {
  std::size_t n = d.sequences.size();
  if (n == 0) throw ValidationError("group_students: empty dataset");
  std::vector<std::size_t> ranked(n);
  for (std::size_t i = 0; i < n; ++i) ranked[i] = i;
  std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    std::size_t ca = d.sequences[a].events.size();
    std::size_t cb = d.sequences[b].events.size();
    if (ca != cb) return ca > cb;
    return a < b;
  });
  std::size_t k = (n + 4) / 5;  // ceil(0.2 n)
  StudentGroups groups;
  groups.frequent.assign(ranked.begin(), ranked.begin() + k);
  groups.infrequent.assign(ranked.end() - k, ranked.end());
  return groups;
}

SynthResult synthesize(const SynthConfig& config, std::uint64_t seed) {
  if (config.students == 0 || config.questions == 0 || config.concepts == 0) {
    throw ValidationError("synthesize: students, questions and concepts must be positive");
  }
  if (config.min_length < kMinSequenceLength || config.max_length < config.min_length ||
      config.max_length > kMaxSequenceLength) {
    throw ValidationError("synthesize: lengths must satisfy 3 <= min <= max <= 200");
  }
  if (config.length_shape <= 0.0) {
    throw ValidationError("synthesize: length_shape must be positive");
  }
  if (config.max_concepts_per_question == 0 ||
      config.max_concepts_per_question > config.concepts) {
    throw ValidationError("synthesize: max_concepts_per_question out of range");
  }

  Rng latents(stream_seed(seed, "synth-latents"));
  std::vector<double> ability(config.students);
  for (double& a : ability) a = config.ability_mean + config.ability_sd * latents.normal();
  std::vector<double> difficulty(config.questions);
  for (double& q : difficulty) q = config.difficulty_sd * latents.normal();

  // fixed question -> concepts mapping
  Rng qmap(stream_seed(seed, "synth-concepts"));
  std::vector<std::vector<std::size_t>> question_concepts(config.questions);
  for (auto& qc : question_concepts) {
    std::size_t count = 1 + qmap.below(config.max_concepts_per_question);
    while (qc.size() < count) {
      std::size_t c = qmap.below(config.concepts);
      if (std::find(qc.begin(), qc.end(), c) == qc.end()) qc.push_back(c);
    }
    std::sort(qc.begin(), qc.end());
  }

  Rng events(stream_seed(seed, "synth-events"));
  std::vector<std::pair<std::string, std::vector<RawRow>>> by_student;
  for (std::size_t s = 0; s < config.students; ++s) {
    double u = events.uniform();
    double pareto = static_cast<double>(config.min_length) *
                    std::pow(1.0 - u, -1.0 / config.length_shape);
    std::size_t len = static_cast<std::size_t>(std::min(
        static_cast<double>(config.max_length), std::floor(pareto)));
    len = std::max(len, config.min_length);

    std::vector<RawRow> rows;
    rows.reserve(len);
    for (std::size_t t = 0; t < len; ++t) {
      std::size_t q = events.below(config.questions);
      double progress =
          len > 1 ? static_cast<double>(t) / static_cast<double>(len - 1) : 0.0;
      double logit = ability[s] - difficulty[q] + config.learning_gain * progress;
      double p = 1.0 / (1.0 + std::exp(-logit));
      RawRow row;
      row.student = "s" + std::to_string(s);
      row.question = "q" + std::to_string(q);
      for (std::size_t c : question_concepts[q]) row.concepts.push_back("c" + std::to_string(c));
      row.response = events.uniform() < p ? 1 : 0;
      row.order_index = static_cast<std::int64_t>(t);
      rows.push_back(std::move(row));
    }
    by_student.emplace_back("s" + std::to_string(s), std::move(rows));
  }

  SynthResult result;
  result.dataset = build_dataset(by_student);
  // remap ground-truth latents onto the dataset's dense indices
  result.truth.ability.assign(result.dataset.student_count(), 0.0);
  for (std::size_t s = 0; s < config.students; ++s) {
    auto it = result.dataset.ids->student_index.find("s" + std::to_string(s));
    if (it != result.dataset.ids->student_index.end()) {
      result.truth.ability[it->second] = ability[s];
    }
  }
  result.truth.difficulty.assign(result.dataset.question_count(), 0.0);
  for (std::size_t q = 0; q < config.questions; ++q) {
    auto it = result.dataset.ids->question_index.find("q" + std::to_string(q));
    if (it != result.dataset.ids->question_index.end()) {
      result.truth.difficulty[it->second] = difficulty[q];
    }
  }
  result.truth.learning_gain = config.learning_gain;
  return result;
}

}  // namespace cmvf
