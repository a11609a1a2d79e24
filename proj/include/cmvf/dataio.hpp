#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmvf/array.hpp"

namespace cmvf {

// One practice record, fully dense-indexed.
struct InteractionEvent {
  std::size_t student = 0;
  std::size_t question = 0;
  std::vector<std::size_t> concepts;  // non-empty, sorted, unique
  int response = 0;                   // 0 wrong, 1 correct
  std::int64_t order_index = 0;       // strictly increasing within a student
};

struct StudentSequence {
  std::size_t student = 0;
  std::vector<InteractionEvent> events;  // chronological
};

// Raw-id <-> dense-index maps, shared between splits of the same dataset.
struct IdMaps {
  std::vector<std::string> students;
  std::vector<std::string> questions;
  std::vector<std::string> concepts;
  std::unordered_map<std::string, std::size_t> student_index;
  std::unordered_map<std::string, std::size_t> question_index;
  std::unordered_map<std::string, std::size_t> concept_index;

  std::size_t intern_student(const std::string& raw);
  std::size_t intern_question(const std::string& raw);
  std::size_t intern_concept(const std::string& raw);
};

struct Dataset {
  std::vector<StudentSequence> sequences;  // indexed by dense student index
  std::shared_ptr<const IdMaps> ids;

  std::size_t student_count() const { return ids ? ids->students.size() : 0; }
  std::size_t question_count() const { return ids ? ids->questions.size() : 0; }
  std::size_t concept_count() const { return ids ? ids->concepts.size() : 0; }
  std::size_t total_events() const;
};

// Practice counts on the training split; drives the personalized prior
// weights beta_u / beta_q.
struct FrequencyStats {
  std::vector<std::int64_t> student_events;   // n_u
  std::vector<std::int64_t> question_events;  // n_q
};

struct StudentGroups {
  std::vector<std::size_t> frequent;    // top 20% by practice count
  std::vector<std::size_t> infrequent;  // bottom 20% (the 80%-100% band)
};

// Sequences longer than this keep only their most recent events, applied at
// load/generation time.
inline constexpr std::size_t kMaxSequenceLength = 200;
// Students with fewer events than this are dropped entirely.
inline constexpr std::size_t kMinSequenceLength = 3;

// CSV schema: header `student_id,question_id,concept_ids,response,order_index`,
// concept_ids joined with ';'. Loader sorts each student's rows by
// order_index, truncates to the most recent 200, drops students with < 3
// events, then assigns dense indices in first-seen order.
Dataset load_csv(const std::string& path);
void write_csv(const Dataset& d, const std::string& path);

// Per-student chronological split: first floor(ratio * len) events to train.
std::pair<Dataset, Dataset> split_per_student(const Dataset& d, double ratio = 0.8);

// Concatenates each student's train and test events (train first); used to
// build prediction histories for test-time records.
Dataset merge_splits(const Dataset& train, const Dataset& test);

FrequencyStats frequency_stats(const Dataset& train);

// Ranks students by total practice count, descending, ties by index.
// Both groups have ceil(0.2 * n) members.
StudentGroups group_students(const Dataset& d);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::size_t students = 200;
  std::size_t questions = 300;
  std::size_t concepts = 30;
  std::size_t min_length = 3;
  std::size_t max_length = 200;
  double length_shape = 1.0;  // Pareto tail index; smaller = heavier tail
  double ability_mean = 0.0;
  double ability_sd = 2.0;
  double difficulty_sd = 1.0;
  double learning_gain = 1.0;
  std::size_t max_concepts_per_question = 3;
};

// Ground-truth latents, kept alongside the generated data for diagnostics.
struct SynthTruth {
  std::vector<double> ability;     // per student
  std::vector<double> difficulty;  // per question
  double learning_gain = 0.0;
};

struct SynthResult {
  Dataset dataset;
  SynthTruth truth;
};

// Deterministic for a fixed seed. Sequence lengths follow a truncated Pareto
// over [min_length, max_length]; responses are Bernoulli with
// p = sigmoid(ability - difficulty + learning_gain * progress).
SynthResult synthesize(const SynthConfig& config, std::uint64_t seed);

}  // namespace cmvf
