#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cmvf/errors.hpp"
#include "cmvf/objective.hpp"
#include "cmvf/rng.hpp"
#include "support/model_check.hpp"
#include "support/test_support.hpp"

using namespace cmvf;

namespace {

ModelDims tiny_dims(std::size_t d = 4, std::size_t k = 2) {
  return ModelDims{.students = 3, .questions = 5, .concepts = 4, .embedding = d, .capsules = k};
}

// small learnable dataset shared across the objective tests
SynthResult tiny_data() {
  SynthConfig cfg;
  cfg.students = 3;
  cfg.questions = 5;
  cfg.concepts = 4;
  cfg.min_length = 4;
  cfg.max_length = 8;
  return synthesize(cfg, 77);
}

ModelDims dims_for(const Dataset& d, std::size_t emb = 4, std::size_t k = 2) {
  return ModelDims{.students = d.student_count(),
                   .questions = d.question_count(),
                   .concepts = d.concept_count(),
                   .embedding = emb,
                   .capsules = k};
}

std::vector<RecordRef> all_records(const Dataset& d) {
  std::vector<RecordRef> out;
  for (const auto& seq : d.sequences) {
    for (std::size_t t = 0; t < seq.events.size(); ++t) out.push_back({seq.student, t});
  }
  return out;
}

FrequencyStats stats_for(const Dataset& d) { return frequency_stats(d); }

}  // namespace

TEST_CASE("predict with zero head weights is 0.5 and is monotone in the logit") {
  ModelParams params = init_params(tiny_dims(), 1);
  params.pred_w1.fill(0.0);
  params.pred_b1.fill(0.0);
  params.pred_w2.fill(0.0);
  params.pred_b2.fill(0.0);

  Rng rng(2);
  Array e_u = test::random_array({4}, rng);
  Array e_q = test::random_array({4}, rng);
  Array m = test::random_array({4}, rng);
  Array e_c = test::random_array({4}, rng);

  double prev = 0.0;
  for (int step = 0; step < 5; ++step) {
    params.pred_b2[0] = -1.0 + 0.5 * step;  // raise the final-layer pre-activation
    Tape tape(false);
    BoundModel model(tape, params, nullptr);
    NodeId yhat = predict(model, tape.constant(e_u), tape.constant(e_q), tape.constant(m),
                          tape.constant(e_c));
    double y = tape.value(yhat)[0];
    if (step == 2) CHECK(y == 0.5);  // b2 = 0, all weights zero
    if (step > 0) CHECK(y > prev);
    CHECK(y > 0.0);
    CHECK(y < 1.0);
    prev = y;
  }
}

TEST_CASE("predict reproduces a hand-built single-unit calculation") {
  // d = 1: features [0.5, -1, 0.25, 0.8], hidden tanh pair, sigmoid output
  ModelDims dims{.students = 1, .questions = 1, .concepts = 1, .embedding = 1, .capsules = 1};
  ModelParams params = init_params(dims, 1);
  params.pred_w1 = Array({2, 4}, {0.1, 0.2, -0.3, 0.4, -0.2, 0.1, 0.5, -0.1});
  params.pred_b1 = Array({2}, {0.05, -0.15});
  params.pred_w2 = Array({1, 2}, {0.7, -0.6});
  params.pred_b2 = Array({1}, {0.2});

  Tape tape(false);
  BoundModel model(tape, params, nullptr);
  NodeId yhat = predict(model, tape.constant(Array({1}, {0.5})),
                        tape.constant(Array({1}, {-1.0})), tape.constant(Array({1}, {0.25})),
                        tape.constant(Array({1}, {0.8})));
  CHECK(tape.value(yhat)[0] == doctest::Approx(0.6173519271170854).epsilon(1e-14));
}

TEST_CASE("reconstruction with an uninformative model is ln 2 per record") {
  SynthResult synth = tiny_data();
  ModelParams params = init_params(dims_for(synth.dataset), 1);
  for (auto& [name, arr] : params.entries()) arr->fill(0.0);

  std::vector<RecordRef> records = all_records(synth.dataset);
  FrequencyStats stats = stats_for(synth.dataset);
  ObjectiveConfig config;
  Tape tape;
  ModelParams grads = zeros_like(params);
  BoundModel model(tape, params, &grads);
  Rng rng(3);
  GaussianNoise noise(rng);
  BatchGraph g = total_loss(model, synth.dataset, records, stats, config, noise);
  CHECK(g.breakdown.reconstruction == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  for (double p : g.predictions) CHECK(p == 0.5);
  // zero heads mean every posterior and prior is N(0, I): all KL terms vanish
  CHECK(g.breakdown.kl_student_mode == doctest::Approx(0.0));
  CHECK(g.breakdown.kl_question_concept == doctest::Approx(0.0));
  CHECK(g.breakdown.kl_std_normal == doctest::Approx(0.0));
  CHECK(g.breakdown.total == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("zero noise collapses the Monte Carlo draws") {
  SynthResult synth = tiny_data();
  ModelParams params = init_params(dims_for(synth.dataset), 4);
  std::vector<RecordRef> records = all_records(synth.dataset);
  FrequencyStats stats = stats_for(synth.dataset);

  auto run = [&](int mc_samples) {
    ObjectiveConfig config;
    config.mc_samples = mc_samples;
    Tape tape(false);
    BoundModel model(tape, params, nullptr);
    ZeroNoise noise;
    return total_loss(model, synth.dataset, records, stats, config, noise).breakdown.total;
  };
  CHECK(run(1) == run(4));  // identical draws make L irrelevant, exactly
}

TEST_CASE("L = 4 reconstruction equals the mean of four L = 1 evaluations") {
  SynthResult synth = tiny_data();
  std::size_t d = 4;
  ModelParams params = init_params(dims_for(synth.dataset, d), 5);
  FrequencyStats stats = stats_for(synth.dataset);
  std::vector<RecordRef> one = {{0, 2}};

  Rng noise_rng(9);
  std::vector<Array> draws;
  for (int i = 0; i < 8; ++i) {
    Array a({d});
    for (std::size_t j = 0; j < d; ++j) a[j] = noise_rng.normal();
    draws.push_back(std::move(a));
  }

  ObjectiveConfig config;
  config.alpha = 0.0;
  config.mc_samples = 4;
  double combined;
  {
    Tape tape(false);
    BoundModel model(tape, params, nullptr);
    FixedNoise noise(draws);
    combined = total_loss(model, synth.dataset, one, stats, config, noise)
                   .breakdown.reconstruction;
  }
  config.mc_samples = 1;
  double mean = 0.0;
  for (int i = 0; i < 4; ++i) {
    Tape tape(false);
    BoundModel model(tape, params, nullptr);
    FixedNoise noise({draws[2 * i], draws[2 * i + 1]});
    mean += total_loss(model, synth.dataset, one, stats, config, noise)
                .breakdown.reconstruction;
  }
  mean /= 4.0;
  CHECK(combined == doctest::Approx(mean).epsilon(1e-14));
}

TEST_CASE("saturated prior weights leave only reconstruction and alpha terms") {
  SynthResult synth = tiny_data();
  ModelParams params = init_params(dims_for(synth.dataset), 6);
  std::vector<RecordRef> records = all_records(synth.dataset);
  FrequencyStats stats = stats_for(synth.dataset);
  // frequent-entity saturation: beta(1000) ~ 0
  for (auto& c : stats.student_events) c = 1000;
  for (auto& c : stats.question_events) c = 1000;

  ObjectiveConfig config;
  config.alpha = 0.0;
  Tape tape(false);
  BoundModel model(tape, params, nullptr);
  ZeroNoise noise;
  BatchGraph g = total_loss(model, synth.dataset, records, stats, config, noise);
  CHECK(g.breakdown.total == doctest::Approx(g.breakdown.reconstruction).epsilon(1e-12));
}

TEST_CASE("full vs point with zeroed noise differ by exactly the weighted KL terms") {
  SynthResult synth = tiny_data();
  ModelParams params = init_params(dims_for(synth.dataset), 7);
  FrequencyStats stats = stats_for(synth.dataset);
  std::vector<RecordRef> one = {{1, 3}};
  const InteractionEvent& target = synth.dataset.sequences[1].events[3];

  ObjectiveConfig config;
  config.alpha = 0.5;

  ZeroNoise noise;
  Tape tf(false);
  BoundModel mf(tf, params, nullptr);
  BatchGraph full = total_loss(mf, synth.dataset, one, stats, config, noise);

  config.variant = Variant::point;
  Tape tp(false);
  BoundModel mp(tp, params, nullptr);
  BatchGraph point = total_loss(mp, synth.dataset, one, stats, config, noise);

  // zero noise makes the sampled embeddings equal the means
  CHECK(point.breakdown.reconstruction ==
        doctest::Approx(full.breakdown.reconstruction).epsilon(1e-14));
  CHECK(point.predictions[0] == full.predictions[0]);
  CHECK(point.breakdown.total == doctest::Approx(point.breakdown.reconstruction));

  double beta_u = prior_weight(stats.student_events[target.student]);
  double beta_q = prior_weight(stats.question_events[target.question]);
  double expected_delta = beta_u * full.breakdown.kl_student_mode +
                          beta_q * full.breakdown.kl_question_concept +
                          config.alpha * full.breakdown.kl_std_normal;
  CHECK(full.breakdown.total - point.breakdown.total ==
        doctest::Approx(expected_delta).epsilon(1e-12));
}

TEST_CASE("r_reg keeps only the standard-normal regularizers") {
  SynthResult synth = tiny_data();
  ModelParams params = init_params(dims_for(synth.dataset), 8);
  FrequencyStats stats = stats_for(synth.dataset);
  std::vector<RecordRef> one = {{2, 2}};

  ObjectiveConfig config;
  config.variant = Variant::r_reg;
  config.alpha = 0.7;
  Tape tape(false);
  BoundModel model(tape, params, nullptr);
  ZeroNoise noise;
  BatchGraph g = total_loss(model, synth.dataset, one, stats, config, noise);
  CHECK(g.breakdown.total ==
        doctest::Approx(g.breakdown.reconstruction + 0.7 * g.breakdown.kl_std_normal)
            .epsilon(1e-12));
  // the mutual terms are still reported for diagnostics
  CHECK(g.breakdown.kl_student_mode > 0.0);
}

TEST_CASE("uniform variant regularizes towards the standard normal") {
  SynthResult synth = tiny_data();
  ModelParams params = init_params(dims_for(synth.dataset), 9);
  FrequencyStats stats = stats_for(synth.dataset);
  std::vector<RecordRef> one = {{0, 1}};
  const InteractionEvent& target = synth.dataset.sequences[0].events[1];

  ObjectiveConfig config;
  config.variant = Variant::uniform;
  config.alpha = 0.3;
  Tape tape(false);
  BoundModel model(tape, params, nullptr);
  ZeroNoise noise;
  BatchGraph g = total_loss(model, synth.dataset, one, stats, config, noise);
  double beta_u = prior_weight(stats.student_events[target.student]);
  double beta_q = prior_weight(stats.question_events[target.question]);
  // with N(0, I) priors, mutual and standard terms coincide
  CHECK(g.breakdown.kl_std_normal ==
        doctest::Approx(g.breakdown.kl_student_mode + g.breakdown.kl_question_concept)
            .epsilon(1e-12));
  CHECK(g.breakdown.total ==
        doctest::Approx(g.breakdown.reconstruction + beta_u * g.breakdown.kl_student_mode +
                        beta_q * g.breakdown.kl_question_concept +
                        0.3 * g.breakdown.kl_std_normal)
            .epsilon(1e-12));
}

TEST_CASE("point variant never touches the noise source") {
  SynthResult synth = tiny_data();
  ModelParams params = init_params(dims_for(synth.dataset), 10);
  FrequencyStats stats = stats_for(synth.dataset);
  std::vector<RecordRef> records = all_records(synth.dataset);
  ObjectiveConfig config;
  config.variant = Variant::point;

  auto run = [&](NoiseSource& noise, ModelParams& grads) {
    Tape tape;
    BoundModel model(tape, params, &grads);
    BatchGraph g = total_loss(model, synth.dataset, records, stats, config, noise);
    tape.backward(g.total);
    return g.breakdown.total;
  };
  ModelParams ga = zeros_like(params), gb = zeros_like(params);
  ZeroNoise zero;
  Rng rng(11);
  GaussianNoise gauss(rng);
  double la = run(zero, ga);
  double lb = run(gauss, gb);
  CHECK(la == lb);  // bitwise: no stochastic path remains
  auto ea = ga.entries();
  auto eb = gb.entries();
  for (std::size_t i = 0; i < ea.size(); ++i) {
    REQUIRE(ea[i].second->size() == eb[i].second->size());
    for (std::size_t j = 0; j < ea[i].second->size(); ++j) {
      CHECK((*ea[i].second)[j] == (*eb[i].second)[j]);
    }
  }
}

TEST_CASE("r_capsule bypasses routing entirely") {
  SynthResult synth = tiny_data();
  ModelParams params = init_params(dims_for(synth.dataset), 12);
  FrequencyStats stats = stats_for(synth.dataset);
  std::vector<RecordRef> records = all_records(synth.dataset);
  ObjectiveConfig config;
  config.variant = Variant::r_capsule;

  Tape tape;
  ModelParams grads = zeros_like(params);
  BoundModel model(tape, params, &grads);
  ZeroNoise noise;
  BatchGraph g = total_loss(model, synth.dataset, records, stats, config, noise);
  tape.backward(g.total);
  for (std::size_t i = 0; i < grads.caps_s.size(); ++i) CHECK(grads.caps_s[i] == 0.0);
  double head_norm = 0.0;
  for (std::size_t i = 0; i < grads.head_capsule.w_mu.size(); ++i) {
    head_norm += std::fabs(grads.head_capsule.w_mu[i]);
  }
  CHECK(head_norm > 0.0);  // the prior head now feeds off the encoding
}

TEST_CASE("alpha keeps log-variance gradients alive when beta saturates") {
  SynthResult synth = tiny_data();
  ModelParams params = init_params(dims_for(synth.dataset), 13);
  FrequencyStats stats = stats_for(synth.dataset);
  for (auto& c : stats.student_events) c = 1000;  // beta ~ 0
  for (auto& c : stats.question_events) c = 1000;
  std::vector<RecordRef> records = all_records(synth.dataset);

  ObjectiveConfig config;
  config.alpha = 0.5;
  Tape tape;
  ModelParams grads = zeros_like(params);
  BoundModel model(tape, params, &grads);
  ZeroNoise noise;
  BatchGraph g = total_loss(model, synth.dataset, records, stats, config, noise);
  tape.backward(g.total);
  double lv_grad = 0.0;
  for (std::size_t i = 0; i < grads.head_student.w_lv.size(); ++i) {
    lv_grad += std::fabs(grads.head_student.w_lv[i]);
  }
  CHECK(lv_grad > 0.0);
}

TEST_CASE("total_loss gradients match central differences on a 4-record batch") {
  SynthResult synth = tiny_data();
  FrequencyStats stats = stats_for(synth.dataset);
  std::vector<RecordRef> batch = {{0, 1}, {0, 3}, {1, 2}, {2, 0}};

  // frozen noise: enough draws for L=1 (two per record)
  Rng noise_rng(21);
  std::vector<Array> draws;
  for (int i = 0; i < 8; ++i) {
    Array a({4});
    for (std::size_t j = 0; j < 4; ++j) a[j] = noise_rng.normal();
    draws.push_back(std::move(a));
  }

  for (Variant variant : {Variant::full, Variant::point, Variant::r_capsule}) {
    ModelParams params = init_params(dims_for(synth.dataset), 14);
    ObjectiveConfig config;
    config.variant = variant;
    auto loss_fn = [&](Tape& t, BoundModel& model) {
      FixedNoise noise(draws);
      return total_loss(model, synth.dataset, batch, stats, config, noise).total;
    };
    auto report = test::check_model_gradients(params, loss_fn);
    CAPTURE(variant_name(variant));
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("objective validation errors") {
  SynthResult synth = tiny_data();
  ModelParams params = init_params(dims_for(synth.dataset), 15);
  FrequencyStats stats = stats_for(synth.dataset);
  Tape tape(false);
  BoundModel model(tape, params, nullptr);
  ZeroNoise noise;

  ObjectiveConfig config;
  std::vector<RecordRef> empty;
  CHECK_THROWS_AS(total_loss(model, synth.dataset, empty, stats, config, noise),
                  ValidationError);

  std::vector<RecordRef> bad = {{0, 99}};
  CHECK_THROWS_AS(total_loss(model, synth.dataset, bad, stats, config, noise), ValidationError);

  config.alpha = -0.1;
  std::vector<RecordRef> one = {{0, 1}};
  CHECK_THROWS_AS(total_loss(model, synth.dataset, one, stats, config, noise), ValidationError);

  CHECK_THROWS_AS(parse_variant("bogus"), ValidationError);
  CHECK(parse_variant("r_capsule") == Variant::r_capsule);
  CHECK(variant_name(Variant::uniform) == "uniform");
}

TEST_CASE("inference predictions equal a zero-noise sampled forward pass") {
  SynthResult synth = tiny_data();
  ModelParams params = init_params(dims_for(synth.dataset), 16);
  FrequencyStats stats = stats_for(synth.dataset);
  std::vector<RecordRef> records = all_records(synth.dataset);

  ObjectiveConfig config;
  std::vector<double> inferred = predict_records(params, synth.dataset, records, config);

  Tape tape(false);
  BoundModel model(tape, params, nullptr);
  ZeroNoise noise;
  BatchGraph g = total_loss(model, synth.dataset, records, stats, config, noise);
  REQUIRE(inferred.size() == g.predictions.size());
  for (std::size_t i = 0; i < inferred.size(); ++i) {
    CHECK(inferred[i] == g.predictions[i]);  // byte-for-byte
  }
}
