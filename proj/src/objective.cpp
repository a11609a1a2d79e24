#include "cmvf/objective.hpp"

#include <algorithm>
#include <unordered_map>

#include "cmvf/errors.hpp"

namespace cmvf {

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "uniform") return Variant::uniform;
  if (name == "r_capsule") return Variant::r_capsule;
  if (name == "r_reg") return Variant::r_reg;
  if (name == "point") return Variant::point;
  throw ValidationError("unknown variant '" + name +
                        "' (expected full|uniform|r_capsule|r_reg|point)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::uniform: return "uniform";
    case Variant::r_capsule: return "r_capsule";
    case Variant::r_reg: return "r_reg";
    case Variant::point: return "point";
  }
  throw ValidationError("unknown variant tag");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> variants = {Variant::full, Variant::uniform,
                                                Variant::r_capsule, Variant::r_reg,
                                                Variant::point};
  return variants;
}

Array FixedNoise::draw(std::size_t d) {
  if (next_ >= draws_.size()) {
    throw ValidationError("FixedNoise: exhausted after " + std::to_string(draws_.size()) +
                          " draws");
  }
  const Array& a = draws_[next_++];
  if (a.size() != d) {
    throw DimensionError("FixedNoise: draw of size " + std::to_string(a.size()) +
                         ", expected " + std::to_string(d));
  }
  return a;
}

NodeId predict(BoundModel& model, NodeId e_u, NodeId e_q, NodeId M, NodeId e_c) {
  Tape& t = model.tape;
  NodeId parts[] = {e_u, e_q, M, e_c};
  NodeId features = t.concat(parts);
  NodeId hidden = t.tanh_(t.linear(model.pred_w1, features, model.pred_b1));
  NodeId logit = t.linear(model.pred_w2, hidden, model.pred_b2);
  return t.sigmoid(logit);
}

NodeId reconstruction_loss(BoundModel& model, const Gauss& q_u, const Gauss& q_q, NodeId M,
                           NodeId e_c, int label, int mc_samples, NoiseSource& noise,
                           bool sample, NodeId* first_prediction) {
  Tape& t = model.tape;
  if (mc_samples < 1) {
    throw ValidationError("reconstruction_loss: mc_samples must be >= 1, got " +
                          std::to_string(mc_samples));
  }
  if (!sample) {
    NodeId yhat = predict(model, q_u.mu, q_q.mu, M, e_c);
    if (first_prediction) *first_prediction = yhat;
    return t.binary_cross_entropy(yhat, label);
  }
  std::size_t d = t.value(q_u.mu).size();
  std::vector<NodeId> losses;
  losses.reserve(static_cast<std::size_t>(mc_samples));
  for (int i = 0; i < mc_samples; ++i) {
    NodeId e_u = reparameterize(t, q_u, noise.draw(d));
    NodeId e_q = reparameterize(t, q_q, noise.draw(d));
    NodeId yhat = predict(model, e_u, e_q, M, e_c);
    if (first_prediction && i == 0) *first_prediction = yhat;
    losses.push_back(t.binary_cross_entropy(yhat, label));
  }
  if (losses.size() == 1) return losses[0];
  return t.mean_of(losses);
}

RecordParts build_record_parts(BoundModel& model, const InteractionEvent& target, NodeId h,
                               const ObjectiveConfig& config) {
  Tape& t = model.tape;
  std::size_t d = model.params.dims.embedding;

  RecordParts parts;
  parts.q_u = gaussian_head(t, model.head_student, model.student_row(target.student));
  parts.q_q = gaussian_head(t, model.head_question, model.question_row(target.question));

  std::vector<NodeId> concept_rows;
  concept_rows.reserve(target.concepts.size());
  for (std::size_t c : target.concepts) concept_rows.push_back(model.concept_row(c));
  parts.concept_mean = concept_rows.size() == 1 ? concept_rows[0] : t.mean_of(concept_rows);

  if (config.variant == Variant::r_capsule) {
    // routing removed: the raw sequence encoding stands in for the pooled
    // modes and feeds the prior head directly
    parts.pooled_modes = h;
    parts.p_m = gaussian_head(t, model.head_capsule, h);
  } else {
    Routed routed = route(t, model.caps_s, h, config.routing_iterations, config.membership);
    parts.pooled_modes = mode_pool(t, routed.capsules, routed.membership);
    if (config.variant == Variant::full || config.variant == Variant::r_reg) {
      parts.p_m = capsule_mixture(t, model.head_capsule, routed.capsules, routed.membership);
    }
  }

  switch (config.variant) {
    case Variant::full:
    case Variant::r_capsule:
    case Variant::r_reg:
      parts.p_c = gaussian_head(t, model.head_concept, parts.concept_mean);
      break;
    case Variant::uniform: {
      // VAE-style fixed priors
      Gauss std_normal{t.constant(Array({d})), t.constant(Array({d}))};
      parts.p_m = std_normal;
      parts.p_c = std_normal;
      break;
    }
    case Variant::point:
      break;  // no priors: every KL term is dropped
  }
  return parts;
}

namespace {

struct RecordLossNodes {
  NodeId loss;
  double yhat;
  double recon, kl_u, kl_q, kl_std;
};

RecordLossNodes record_loss(BoundModel& model, const InteractionEvent& target, NodeId h,
                            double beta_u, double beta_q, const ObjectiveConfig& config,
                            NoiseSource& noise) {
  Tape& t = model.tape;
  RecordParts parts = build_record_parts(model, target, h, config);
  bool sample = config.variant != Variant::point;
  NodeId yhat = -1;
  NodeId recon =
      reconstruction_loss(model, parts.q_u, parts.q_q, parts.pooled_modes, parts.concept_mean,
                          target.response, config.mc_samples, noise, sample, &yhat);

  RecordLossNodes out{recon, t.value(yhat)[0], t.value(recon)[0], 0.0, 0.0, 0.0};
  NodeId loss = recon;
  if (config.variant == Variant::point) {
    out.loss = loss;
    return out;
  }

  NodeId kl_u = kl(t, parts.q_u, *parts.p_m);
  NodeId kl_q = kl(t, parts.q_q, *parts.p_c);
  out.kl_u = t.value(kl_u)[0];
  out.kl_q = t.value(kl_q)[0];
  if (config.variant != Variant::r_reg) {
    loss = t.add(loss, t.add(t.scale(kl_u, beta_u), t.scale(kl_q, beta_q)));
  }

  NodeId kl_std_sum = t.add(kl_standard(t, parts.q_u), kl_standard(t, parts.q_q));
  if (config.variant != Variant::uniform) {
    // with fixed standard-normal priors these two terms are identically zero
    kl_std_sum = t.add(kl_std_sum, t.add(kl_standard(t, *parts.p_m), kl_standard(t, *parts.p_c)));
  }
  out.kl_std = t.value(kl_std_sum)[0];
  if (config.alpha != 0.0) {
    loss = t.add(loss, t.scale(kl_std_sum, config.alpha));
  }
  out.loss = loss;
  return out;
}

}  // namespace

BatchGraph total_loss(BoundModel& model, const Dataset& data, std::span<const RecordRef> batch,
                      const FrequencyStats& stats, const ObjectiveConfig& config,
                      NoiseSource& noise) {
  if (batch.empty()) throw ValidationError("total_loss: empty batch");
  if (config.alpha < 0.0) {
    throw ValidationError("total_loss: alpha must be >= 0, got " + std::to_string(config.alpha));
  }
  Tape& t = model.tape;

  // group per student, preserving first-appearance order
  std::vector<std::size_t> group_order;
  std::unordered_map<std::size_t, std::vector<std::size_t>> groups;  // student -> batch positions
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto [it, added] = groups.try_emplace(batch[i].student);
    if (added) group_order.push_back(batch[i].student);
    it->second.push_back(i);
  }

  BatchGraph out;
  out.predictions.assign(batch.size(), 0.0);
  NodeId sum_loss = -1;
  for (std::size_t student : group_order) {
    const auto& positions = groups[student];
    const StudentSequence& seq = data.sequences[student];
    std::vector<std::size_t> taps_needed;
    taps_needed.reserve(positions.size());
    for (std::size_t pos : positions) {
      if (batch[pos].target >= seq.events.size()) {
        throw ValidationError("total_loss: target " + std::to_string(batch[pos].target) +
                              " out of range for student " + std::to_string(student));
      }
      taps_needed.push_back(batch[pos].target);
    }
    std::vector<NodeId> taps = encode_prefix_taps(model, seq.events, taps_needed);
    for (std::size_t i = 0; i < positions.size(); ++i) {
      std::size_t pos = positions[i];
      const InteractionEvent& target = seq.events[batch[pos].target];
      double beta_u = prior_weight(stats.student_events[target.student]);
      double beta_q = prior_weight(stats.question_events[target.question]);
      RecordLossNodes r = record_loss(model, target, taps[i], beta_u, beta_q, config, noise);
      out.predictions[pos] = r.yhat;
      sum_loss = sum_loss < 0 ? r.loss : t.add(sum_loss, r.loss);
      out.breakdown.reconstruction += r.recon;
      out.breakdown.kl_student_mode += r.kl_u;
      out.breakdown.kl_question_concept += r.kl_q;
      out.breakdown.kl_std_normal += r.kl_std;
    }
  }
  double inv = 1.0 / static_cast<double>(batch.size());
  out.total = t.scale(sum_loss, inv);
  out.breakdown.reconstruction *= inv;
  out.breakdown.kl_student_mode *= inv;
  out.breakdown.kl_question_concept *= inv;
  out.breakdown.kl_std_normal *= inv;
  out.breakdown.total = t.value(out.total)[0];
  return out;
}

GradCheckReport model_gradient_check(const Dataset& data, std::span<const RecordRef> records,
                                     const FrequencyStats& stats, const ObjectiveConfig& config,
                                     const ModelDims& dims, std::uint64_t seed) {
  ModelParams params = init_params(dims, seed);

  // frozen noise: two draws per record per Monte Carlo sample
  Rng noise_rng(stream_seed(seed, "gradcheck-noise"));
  std::vector<Array> draws;
  std::size_t needed = records.size() * 2 * static_cast<std::size_t>(config.mc_samples);
  for (std::size_t i = 0; i < needed; ++i) {
    Array a({dims.embedding});
    for (std::size_t j = 0; j < dims.embedding; ++j) a[j] = noise_rng.normal();
    draws.push_back(std::move(a));
  }

  ModelParams grads = zeros_like(params);
  {
    Tape tape;
    BoundModel model(tape, params, &grads);
    FixedNoise noise(draws);
    BatchGraph graph = total_loss(model, data, records, stats, config, noise);
    tape.backward(graph.total);
  }

  auto param_entries = params.entries();
  auto grad_entries = grads.entries();
  std::vector<GradCheckTarget> targets;
  for (std::size_t i = 0; i < param_entries.size(); ++i) {
    targets.push_back({param_entries[i].first, param_entries[i].second, grad_entries[i].second});
  }
  auto eval = [&]() -> double {
    Tape tape(false);
    BoundModel model(tape, params, nullptr);
    FixedNoise noise(draws);
    return tape.value(total_loss(model, data, records, stats, config, noise).total)[0];
  };
  return gradient_check(targets, eval);
}

std::vector<double> predict_records(const ModelParams& params, const Dataset& data,
                                    std::span<const RecordRef> records,
                                    const ObjectiveConfig& config) {
  std::vector<double> preds(records.size(), 0.0);

  // per student: one frozen tape, shared sequence fold
  std::vector<std::size_t> group_order;
  std::unordered_map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto [it, added] = groups.try_emplace(records[i].student);
    if (added) group_order.push_back(records[i].student);
    it->second.push_back(i);
  }

  for (std::size_t student : group_order) {
    const auto& positions = groups[student];
    const StudentSequence& seq = data.sequences[student];
    Tape tape(false);
    BoundModel model(tape, params, nullptr);
    std::vector<std::size_t> taps_needed;
    for (std::size_t pos : positions) {
      if (records[pos].target >= seq.events.size()) {
        throw ValidationError("predict_records: target out of range for student " +
                              std::to_string(student));
      }
      taps_needed.push_back(records[pos].target);
    }
    std::vector<NodeId> taps = encode_prefix_taps(model, seq.events, taps_needed);
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const InteractionEvent& target = seq.events[records[positions[i]].target];
      RecordParts parts = build_record_parts(model, target, taps[i], config);
      // inference rule: embeddings are the posterior means
      NodeId yhat = predict(model, parts.q_u.mu, parts.q_q.mu, parts.pooled_modes,
                            parts.concept_mean);
      preds[positions[i]] = tape.value(yhat)[0];
    }
  }
  return preds;
}

}  // namespace cmvf
