#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cmvf/errors.hpp"
#include "cmvf/metrics.hpp"
#include "cmvf/rng.hpp"
#include "support/test_support.hpp"

using namespace cmvf;

TEST_CASE("accuracy values and the >= 0.5 tie rule") {
  std::vector<double> p1 = {0.9, 0.1};
  std::vector<int> l1 = {1, 0};
  CHECK(accuracy(p1, l1) == 1.0);

  std::vector<double> p2 = {0.5};
  std::vector<int> l2 = {1};
  CHECK(accuracy(p2, l2) == 1.0);  // exactly 0.5 counts as class 1
  std::vector<int> l3 = {0};
  CHECK(accuracy(p2, l3) == 0.0);

  std::vector<double> p4 = {0.6, 0.6, 0.4};
  std::vector<int> l4 = {1, 0, 0};
  CHECK(accuracy(p4, l4) == doctest::Approx(2.0 / 3.0));

  CHECK_THROWS_AS(accuracy(std::vector<double>{}, std::vector<int>{}), ValidationError);
}

TEST_CASE("auc values") {
  std::vector<double> sep = {0.9, 0.8, 0.2, 0.1};
  std::vector<int> lsep = {1, 1, 0, 0};
  CHECK(auc(sep, lsep) == 1.0);

  std::vector<double> ties = {0.5, 0.5, 0.5, 0.5};
  std::vector<int> lt = {1, 0, 1, 0};
  CHECK(auc(ties, lt) == 0.5);

  std::vector<double> p = {0.8, 0.7, 0.6};
  std::vector<int> l = {0, 1, 0};
  CHECK(auc(p, l) == doctest::Approx(0.5));  // one win, one loss over two pairs

  std::vector<double> single = {0.3, 0.4};
  std::vector<int> ls = {1, 1};
  CHECK_THROWS_AS(auc(single, ls), ValidationError);
}

TEST_CASE("auc equals the exhaustive pairwise count on random inputs") {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    Rng rng(stream_seed(seed, "auc-prop"));
    std::size_t n = 2 + rng.below(199);
    std::vector<double> preds(n);
    std::vector<int> labels(n);
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      // coarse grid so ties actually occur
      preds[i] = static_cast<double>(rng.below(20)) / 20.0;
      labels[i] = rng.below(2) ? 1 : 0;
      (labels[i] ? pos : neg) = true;
    }
    if (!pos || !neg) {
      labels[0] = 1;
      labels[n - 1] = 0;
    }
    double fast = auc(preds, labels);
    double oracle = test::pairwise_auc(preds, labels);
    CAPTURE(seed);
    CHECK(fast == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("auc invariances") {
  Rng rng(7);
  std::size_t n = 50;
  std::vector<double> preds(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    preds[i] = rng.uniform();
    labels[i] = rng.below(2) ? 1 : 0;
  }
  labels[0] = 1;
  labels[1] = 0;
  double base = auc(preds, labels);

  // strictly monotone transformation leaves auc unchanged
  std::vector<double> warped(n);
  for (std::size_t i = 0; i < n; ++i) warped[i] = std::exp(3.0 * preds[i]) - 0.5;
  CHECK(auc(warped, labels) == doctest::Approx(base).epsilon(1e-12));

  // complement symmetry under label flip
  std::vector<int> flipped(n);
  for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - labels[i];
  CHECK(auc(preds, flipped) == doctest::Approx(1.0 - base).epsilon(1e-12));

  // permutation invariance
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng prng(8);
  prng.shuffle(perm);
  std::vector<double> pp(n);
  std::vector<int> pl(n);
  for (std::size_t i = 0; i < n; ++i) {
    pp[i] = preds[perm[i]];
    pl[i] = labels[perm[i]];
  }
  CHECK(auc(pp, pl) == doctest::Approx(base).epsilon(1e-12));
  CHECK(accuracy(pp, pl) == doctest::Approx(accuracy(preds, labels)).epsilon(1e-12));
}

TEST_CASE("real_impr reference conversions") {
  CHECK(real_impr(0.7, 0.7) == 0.0);
  // reference values, one-decimal rounding
  double a = real_impr(0.7946, 0.7410);
  CHECK(std::round(a * 10.0) / 10.0 == doctest::Approx(22.2));
  double b = real_impr(0.6683, 0.6139);
  CHECK(std::round(b * 10.0) / 10.0 == doctest::Approx(47.8));
  CHECK_THROWS_AS(real_impr(0.7, 0.5), ValidationError);
  CHECK_THROWS_AS(real_impr(0.7, 0.3), ValidationError);
}

TEST_CASE("group_report covers every test record exactly once") {
  SynthConfig cfg;
  cfg.students = 30;
  cfg.questions = 25;
  cfg.concepts = 6;
  SynthResult synth = synthesize(cfg, 17);
  auto [train, test] = split_per_student(synth.dataset, 0.8);
  StudentGroups groups = group_students(synth.dataset);
  ModelDims dims{synth.dataset.student_count(), synth.dataset.question_count(),
                 synth.dataset.concept_count(), 4, 2};
  ModelParams params = init_params(dims, 3);
  ObjectiveConfig config;

  auto reports = group_report(params, train, test, groups, config, 0.7);
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].group == "overall");
  CHECK(reports[0].n_records == test.total_events());

  std::size_t frequent_expected = 0, infrequent_expected = 0;
  for (std::size_t s : groups.frequent) frequent_expected += test.sequences[s].events.size();
  for (std::size_t s : groups.infrequent) infrequent_expected += test.sequences[s].events.size();
  CHECK(reports[1].n_records == frequent_expected);
  CHECK(reports[2].n_records == infrequent_expected);

  // a group containing every student reproduces the overall numbers
  StudentGroups everyone;
  for (std::size_t s = 0; s < synth.dataset.sequences.size(); ++s) {
    everyone.frequent.push_back(s);
    everyone.infrequent.push_back(s);
  }
  auto all_reports = group_report(params, train, test, everyone, config);
  CHECK(all_reports[1].acc == doctest::Approx(all_reports[0].acc));
  REQUIRE(all_reports[1].auc.has_value());
  CHECK(*all_reports[1].auc == doctest::Approx(*all_reports[0].auc).epsilon(1e-12));

  std::string table = format_report_table(reports);
  CHECK(table.find("overall") != std::string::npos);
  std::string kv = format_report_kv(reports);
  CHECK(kv.find("overall.acc=") != std::string::npos);
  CHECK(kv.find("infrequent.auc=") != std::string::npos);
}
