#include "cmvf/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "cmvf/errors.hpp"
#include "cmvf/metrics.hpp"
#include "cmvf/rng.hpp"

namespace cmvf {

void TrainConfig::validate() const {
  if (embedding_dim == 0 || capsule_count == 0) {
    throw ValidationError("config: embedding_dim and capsule_count must be positive");
  }
  if (routing_iterations < 1) throw ValidationError("config: routing_iterations must be >= 1");
  if (alpha < 0.0 || alpha > 1.0) throw ValidationError("config: alpha must be in [0, 1]");
  if (mc_samples < 1) throw ValidationError("config: mc_samples must be >= 1");
  if (batch_size == 0) throw ValidationError("config: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("config: learning_rate must be positive");
  if (max_epochs < 1) throw ValidationError("config: max_epochs must be >= 1");
  if (patience < 1) throw ValidationError("config: patience must be >= 1");
  if (!(valid_fraction > 0.0 && valid_fraction < 0.5)) {
    throw ValidationError("config: valid_fraction must be in (0, 0.5)");
  }
}

ObjectiveConfig TrainConfig::objective() const {
  ObjectiveConfig o;
  o.alpha = alpha;
  o.mc_samples = mc_samples;
  o.routing_iterations = routing_iterations;
  o.variant = variant;
  o.membership = membership;
  return o;
}

OptimizerState init_optimizer(const ModelParams& params) {
  OptimizerState state;
  for (const auto& [name, arr] : params.entries()) {
    state.first_moment.emplace_back(arr->shape());
    state.second_moment.emplace_back(arr->shape());
  }
  return state;
}

void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
               const AdamConfig& adam) {
  auto param_entries = params.entries();
  auto grad_entries = grads.entries();
  if (state.first_moment.size() != param_entries.size()) {
    throw DimensionError("adam_step: optimizer state has " +
                         std::to_string(state.first_moment.size()) + " slots for " +
                         std::to_string(param_entries.size()) + " parameters");
  }
  state.step_count += 1;
  double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step_count));
  double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step_count));
  for (std::size_t e = 0; e < param_entries.size(); ++e) {
    Array& p = *param_entries[e].second;
    const Array& g = *grad_entries[e].second;
    Array& m = state.first_moment[e];
    Array& v = state.second_moment[e];
    if (!g.same_shape(p)) {
      throw DimensionError("adam_step: gradient shape mismatch for " + param_entries[e].first);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("adam_step: non-finite gradient in '" + param_entries[e].first + "[" +
                           std::to_string(i) + "]'");
      }
      m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i];
      v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + adam.eps);
    }
  }
}

ValidationSplit carve_validation(const Dataset& train_split, double valid_fraction) {
  ValidationSplit split;
  for (const StudentSequence& seq : train_split.sequences) {
    std::size_t n = seq.events.size();
    std::size_t valid_len = 0;
    if (n >= 3) {
      valid_len = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(valid_fraction * static_cast<double>(n))));
      valid_len = std::min(valid_len, n - 2);  // keep at least two training events
    }
    std::size_t train_len = n - valid_len;
    for (std::size_t t = 0; t < train_len; ++t) split.train_records.push_back({seq.student, t});
    for (std::size_t t = train_len; t < n; ++t) {
      split.valid_records.push_back({seq.student, t});
      split.valid_labels.push_back(seq.events[t].response);
    }
  }
  if (split.train_records.empty()) {
    throw ValidationError("carve_validation: no training records remain");
  }
  if (split.valid_records.empty()) {
    throw ValidationError("carve_validation: no validation records; dataset too sparse");
  }
  return split;
}

namespace {

Checkpoint snapshot(const ModelParams& params, const OptimizerState& optimizer,
                    const TrainConfig& config, int epoch, double best_auc, int best_epoch,
                    const std::vector<EpochStats>& history) {
  Checkpoint c;
  c.params = params;
  c.optimizer = optimizer;
  c.config = config;
  c.epoch = epoch;
  c.best_auc = best_auc;
  c.best_epoch = best_epoch;
  c.history = history;
  return c;
}

}  // namespace

TrainResult train_model(const Dataset& train_split, const TrainConfig& config,
                  const std::optional<Checkpoint>& resume) {
  config.validate();
  ModelDims dims{train_split.student_count(), train_split.question_count(),
                 train_split.concept_count(), config.embedding_dim, config.capsule_count};

  ValidationSplit split = carve_validation(train_split, config.valid_fraction);
  FrequencyStats stats = frequency_stats(train_split);
  ObjectiveConfig objective = config.objective();

  ModelParams params;
  OptimizerState optimizer;
  std::vector<EpochStats> history;
  double best_auc = -1.0;
  int best_epoch = 0;
  int start_epoch = 0;
  if (resume) {
    TrainConfig resumed = resume->config;
    resumed.max_epochs = config.max_epochs;  // extending a run is allowed
    if (resumed != config) {
      throw ValidationError("train: resume checkpoint was produced with a different config");
    }
    if (resume->params.dims != dims) {
      throw ValidationError("train: resume checkpoint vocabulary does not match the dataset");
    }
    params = resume->params;
    optimizer = resume->optimizer;
    history = resume->history;
    best_auc = resume->best_auc;
    best_epoch = resume->best_epoch;
    start_epoch = resume->epoch;
  } else {
    params = init_params(dims, config.seed);
    optimizer = init_optimizer(params);
  }

  // On a resumed run the best parameters are tracked from the resume point
  // forward; the metadata (best_auc, best_epoch) carries over, so callers
  // keep their stored best checkpoint unless a later epoch beats it.
  Checkpoint best =
      snapshot(params, optimizer, config, start_epoch, best_auc, best_epoch, history);

  TrainResult result;
  std::vector<std::string> dead_params;

  for (int epoch = start_epoch + 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<RecordRef> order = split.train_records;
    Rng shuffle_rng(stream_seed(config.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    ModelParams grads = zeros_like(params);
    ModelParams coverage = zeros_like(params);
    bool track_coverage = epoch == start_epoch + 1;

    double loss_sum = 0.0;
    LossBreakdown epoch_loss;
    std::size_t batches = (order.size() + config.batch_size - 1) / config.batch_size;
    for (std::size_t b = 0; b < batches; ++b) {
      std::size_t begin = b * config.batch_size;
      std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::span<const RecordRef> batch(order.data() + begin, end - begin);

      for (auto& [name, arr] : grads.entries()) arr->fill(0.0);
      Rng noise_rng(stream_seed(config.seed, "noise", static_cast<std::uint64_t>(epoch), b));
      GaussianNoise noise(noise_rng);

      Tape tape;
      BoundModel model(tape, params, &grads);
      BatchGraph graph = total_loss(model, train_split, batch, stats, objective, noise);
      if (!std::isfinite(graph.breakdown.total)) {
        throw NumericError("train: loss diverged at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b) + "; last good checkpoint at epoch " +
                           std::to_string(best.epoch));
      }
      tape.backward(graph.total);

      double w = static_cast<double>(batch.size());
      loss_sum += graph.breakdown.total * w;
      epoch_loss.reconstruction += graph.breakdown.reconstruction * w;
      epoch_loss.kl_student_mode += graph.breakdown.kl_student_mode * w;
      epoch_loss.kl_question_concept += graph.breakdown.kl_question_concept * w;
      epoch_loss.kl_std_normal += graph.breakdown.kl_std_normal * w;

      if (track_coverage) {
        auto g = grads.entries();
        auto c = coverage.entries();
        for (std::size_t e = 0; e < g.size(); ++e) {
          for (std::size_t i = 0; i < g[e].second->size(); ++i) {
            if ((*g[e].second)[i] != 0.0) (*c[e].second)[i] = 1.0;
          }
        }
      }
      adam_step(params, grads, optimizer, config.learning_rate);
    }

    double n = static_cast<double>(order.size());
    epoch_loss.total = loss_sum / n;
    epoch_loss.reconstruction /= n;
    epoch_loss.kl_student_mode /= n;
    epoch_loss.kl_question_concept /= n;
    epoch_loss.kl_std_normal /= n;

    if (track_coverage) {
      for (auto& [name, arr] : coverage.entries()) {
        bool any = false;
        for (std::size_t i = 0; i < arr->size(); ++i) any = any || (*arr)[i] != 0.0;
        if (!any) dead_params.push_back(name);
      }
    }

    std::vector<double> valid_preds =
        predict_records(params, train_split, split.valid_records, objective);
    double valid_auc = auc(valid_preds, split.valid_labels);

    EpochStats stats_row{epoch, epoch_loss, valid_auc, false};
    if (valid_auc > best_auc) {
      best_auc = valid_auc;
      best_epoch = epoch;
      stats_row.is_best = true;
      history.push_back(stats_row);
      best = snapshot(params, optimizer, config, epoch, best_auc, best_epoch, history);
    } else {
      history.push_back(stats_row);
    }

    if (epoch - best_epoch >= config.patience) break;
  }

  result.history = history;
  result.dead_params = std::move(dead_params);
  result.best = std::move(best);
  result.best.best_auc = best_auc;
  result.best.best_epoch = best_epoch;
  result.best.history = history;
  result.last =
      snapshot(params, optimizer, config, history.empty() ? start_epoch : history.back().epoch,
               best_auc, best_epoch, history);
  return result;
}

}  // namespace cmvf
