#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmvf/capsules.hpp"
#include "cmvf/dataio.hpp"
#include "cmvf/encoder.hpp"
#include "cmvf/model.hpp"
#include "cmvf/gradcheck.hpp"
#include "cmvf/rng.hpp"
#include "cmvf/variational.hpp"

namespace cmvf {

// Ablation variants of the objective.
enum class Variant {
  full,       // cognition-mode prior, sampling, all regularizers
  uniform,    // priors replaced by the standard normal
  r_capsule,  // routing removed; the sequence encoding feeds the prior head
  r_reg,      // mutual KL terms dropped, standard-normal terms kept
  point,      // means used directly, no sampling, no KL terms
};

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
const std::vector<Variant>& all_variants();

struct ObjectiveConfig {
  double alpha = 0.5;
  int mc_samples = 1;  // L
  int routing_iterations = 3;
  Variant variant = Variant::full;
  MembershipMode membership = MembershipMode::norm;
};

// One training/evaluation record: the event at position `target` of
// `student`'s sequence is predicted from the strictly earlier events.
struct RecordRef {
  std::size_t student = 0;
  std::size_t target = 0;
};

// Per-draw noise for the reparameterized embeddings. Zero noise reproduces
// the inference rule exactly.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual Array draw(std::size_t d) = 0;
};

class ZeroNoise final : public NoiseSource {
 public:
  Array draw(std::size_t d) override { return Array({d}); }
};

class GaussianNoise final : public NoiseSource {
 public:
  explicit GaussianNoise(Rng& rng) : rng_(rng) {}
  Array draw(std::size_t d) override {
    Array a({d});
    for (std::size_t i = 0; i < d; ++i) a[i] = rng_.normal();
    return a;
  }

 private:
  Rng& rng_;
};

// Plays back a fixed list of noise vectors; test oracle for draw decomposition.
class FixedNoise final : public NoiseSource {
 public:
  explicit FixedNoise(std::vector<Array> draws) : draws_(std::move(draws)) {}
  Array draw(std::size_t d) override;

 private:
  std::vector<Array> draws_;
  std::size_t next_ = 0;
};

// sigmoid(MLP(e_u ++ e_q ++ M ++ e_c)): one hidden layer of width 2d, tanh.
// Shared by training and inference.
NodeId predict(BoundModel& model, NodeId e_u, NodeId e_q, NodeId M, NodeId e_c);

// Mean over L Monte Carlo draws of the cross-entropy under reparameterized
// embeddings. With sample = false the means are used directly (single pass).
// first_prediction, when given, receives the first draw's prediction node.
NodeId reconstruction_loss(BoundModel& model, const Gauss& q_u, const Gauss& q_q, NodeId M,
                           NodeId e_c, int label, int mc_samples, NoiseSource& noise,
                           bool sample = true, NodeId* first_prediction = nullptr);

// Posteriors, priors and prediction-path vectors for one record, assembled
// per the active variant.
struct RecordParts {
  Gauss q_u, q_q;
  std::optional<Gauss> p_m, p_c;  // absent for the point variant
  NodeId pooled_modes = -1;       // M
  NodeId concept_mean = -1;       // e_c
};
RecordParts build_record_parts(BoundModel& model, const InteractionEvent& target, NodeId h,
                               const ObjectiveConfig& config);

// Loss components averaged over a batch; every term is stored pre-weighting.
struct LossBreakdown {
  double reconstruction = 0.0;
  double kl_student_mode = 0.0;      // KL(q_u || p_m)
  double kl_question_concept = 0.0;  // KL(q_q || p_c)
  double kl_std_normal = 0.0;        // sum of the standard-normal terms
  double total = 0.0;
};

struct BatchGraph {
  NodeId total = -1;                // scalar node: mean weighted loss
  LossBreakdown breakdown;          // value-level, averaged over the batch
  std::vector<double> predictions;  // first-draw prediction per record
};

// Builds the full objective for a batch of records on the given tape.
// Records are grouped per student so each sequence is folded once; beta
// weights come from the training-split frequency stats.
BatchGraph total_loss(BoundModel& model, const Dataset& data, std::span<const RecordRef> batch,
                      const FrequencyStats& stats, const ObjectiveConfig& config,
                      NoiseSource& noise);

// Zero-noise inference (embeddings = posterior means) over arbitrary records;
// uses the same prediction head as training.
std::vector<double> predict_records(const ModelParams& params, const Dataset& data,
                                    std::span<const RecordRef> records,
                                    const ObjectiveConfig& config);

// Reverse-mode vs central-difference comparison of the full objective over
// the given records, with Xavier parameters from `seed` and frozen noise.
// Covers every parameter group once.
GradCheckReport model_gradient_check(const Dataset& data, std::span<const RecordRef> records,
                                     const FrequencyStats& stats, const ObjectiveConfig& config,
                                     const ModelDims& dims, std::uint64_t seed);

}  // namespace cmvf
