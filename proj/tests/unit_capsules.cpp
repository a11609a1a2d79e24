#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cmvf/capsules.hpp"
#include "cmvf/errors.hpp"
#include "cmvf/rng.hpp"
#include "support/test_support.hpp"

using namespace cmvf;
using cmvf::test::random_array;

TEST_CASE("squash values") {
  Array zero({4});
  Array out = squash(zero);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == 0.0);

  // unit-norm input: output norm exactly 1/2, same direction
  Array unit({2}, {1.0, 0.0});
  Array su = squash(unit);
  CHECK(su[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(su[1] == 0.0);

  // |s| = 3: coefficient 9/10
  Array three({3}, {3.0, 0.0, 0.0});
  Array st = squash(three);
  CHECK(st[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(st[1] == 0.0);
  CHECK(st[2] == 0.0);
}

TEST_CASE("route with a single capsule always yields p = [1]") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Array s = random_array({1, 3, 3}, rng);
    Array h = random_array({3}, rng);
    int iters = 1 + static_cast<int>(rng.below(4));
    RoutedValues r = route_values(s, h, iters);
    REQUIRE(r.membership.size() == 1);
    CHECK(r.membership[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("identical capsule matrices give uniform membership") {
  Rng rng(22);
  std::size_t k = 4, d = 3;
  Array one = random_array({d, d}, rng);
  Array s({k, d, d});
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < d * d; ++i) s[j * d * d + i] = one[i];
  }
  Array h = random_array({d}, rng);
  RoutedValues r = route_values(s, h, 3);
  for (std::size_t j = 0; j < k; ++j) {
    CHECK(r.membership[j] == doctest::Approx(0.25).epsilon(1e-12));
    for (std::size_t i = 0; i < d; ++i) {
      CHECK(r.capsules[j * d + i] == doctest::Approx(r.capsules[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("routing matches the straight-line transcript, K=2 d=2 r=2") {
  std::vector<std::vector<std::vector<double>>> s_oracle = {
      {{1.2, -0.3}, {0.4, 0.9}},
      {{-0.7, 0.5}, {1.1, 0.2}},
  };
  std::vector<double> h_oracle = {0.8, -0.5};
  test::RoutingTranscript transcript = test::route_oracle(s_oracle, h_oracle, 2);

  Array s({2, 2, 2}, {1.2, -0.3, 0.4, 0.9, -0.7, 0.5, 1.1, 0.2});
  Array h({2}, {0.8, -0.5});
  RoutedValues r = route_values(s, h, 2);

  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(std::fabs(r.capsules[j * 2 + i] - transcript.m[j][i]) < 1e-12);
    }
    CHECK(std::fabs(r.membership[j] - transcript.p[j]) < 1e-12);
  }

  // frozen expected values from the hand-executed transcript
  CHECK(std::fabs(r.capsules[0] - 0.23558416029053736) < 1e-12);
  CHECK(std::fabs(r.capsules[1] - -0.02759093769168455) < 1e-12);
  CHECK(std::fabs(r.capsules[2] - -0.17356435538860315) < 1e-12);
  CHECK(std::fabs(r.capsules[3] - 0.16713604592976603) < 1e-12);
  CHECK(std::fabs(r.membership[0] - 0.4960680656736691) < 1e-12);
  CHECK(std::fabs(r.membership[1] - 0.5039319343263308) < 1e-12);
}

TEST_CASE("membership is a probability vector and capsules stay inside the unit ball") {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    Rng rng(stream_seed(seed, "caps-prop"));
    std::size_t k = 1 + rng.below(5);
    std::size_t d = 2 + rng.below(4);
    Array s = random_array({k, d, d}, rng, -2.0, 2.0);
    Array h = random_array({d}, rng, -2.0, 2.0);
    int iters = 1 + static_cast<int>(rng.below(4));
    RoutedValues r = route_values(s, h, iters);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      CHECK(r.membership[j] >= 0.0);
      CHECK(r.membership[j] <= 1.0);
      total += r.membership[j];
      double n2 = 0.0;
      for (std::size_t i = 0; i < d; ++i) n2 += r.capsules[j * d + i] * r.capsules[j * d + i];
      CHECK(std::sqrt(n2) < 1.0);
    }
    CHECK(std::fabs(total - 1.0) < 1e-10);
  }
}

TEST_CASE("routing against the oracle on randomized draws") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(stream_seed(seed, "caps-oracle"));
    std::size_t k = 1 + rng.below(4);
    std::size_t d = 2 + rng.below(3);
    Array s = random_array({k, d, d}, rng, -1.5, 1.5);
    Array h = random_array({d}, rng, -1.5, 1.5);
    int iters = 1 + static_cast<int>(rng.below(3));

    std::vector<std::vector<std::vector<double>>> s_oracle(
        k, std::vector<std::vector<double>>(d, std::vector<double>(d)));
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t r2 = 0; r2 < d; ++r2) {
        for (std::size_t c = 0; c < d; ++c) s_oracle[j][r2][c] = s[(j * d + r2) * d + c];
      }
    }
    std::vector<double> h_oracle(h.data(), h.data() + d);
    test::RoutingTranscript transcript = test::route_oracle(s_oracle, h_oracle, iters);
    RoutedValues r = route_values(s, h, iters);
    for (std::size_t j = 0; j < k; ++j) {
      CHECK(std::fabs(r.membership[j] - transcript.p[j]) < 1e-12);
      for (std::size_t i = 0; i < d; ++i) {
        CHECK(std::fabs(r.capsules[j * d + i] - transcript.m[j][i]) < 1e-12);
      }
    }
  }
}

TEST_CASE("route is deterministic and starts logits at zero each call") {
  Rng rng(31);
  Array s = random_array({3, 4, 4}, rng);
  Array h = random_array({4}, rng);
  RoutedValues a = route_values(s, h, 3);
  // a second call on fresh state must match: no residue from the first
  RoutedValues b = route_values(s, h, 3);
  for (std::size_t i = 0; i < a.capsules.size(); ++i) CHECK(a.capsules[i] == b.capsules[i]);
  for (std::size_t i = 0; i < a.membership.size(); ++i) CHECK(a.membership[i] == b.membership[i]);

  // same inputs routed twice within one tape also agree
  Tape tape(false);
  NodeId sn = tape.param(&s, nullptr);
  NodeId hn = tape.param(&h, nullptr);
  Routed r1 = route(tape, sn, hn, 3);
  Routed r2 = route(tape, sn, hn, 3);
  for (std::size_t i = 0; i < a.membership.size(); ++i) {
    CHECK(tape.value(r1.membership)[i] == tape.value(r2.membership)[i]);
  }
}

TEST_CASE("zero input vector falls back to uniform membership") {
  Rng rng(33);
  Array s = random_array({4, 3, 3}, rng);
  Array h({3});
  RoutedValues r = route_values(s, h, 2);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(r.membership[j] == doctest::Approx(0.25));
    for (std::size_t i = 0; i < 3; ++i) CHECK(r.capsules[j * 3 + i] == 0.0);
  }
}

TEST_CASE("route validation errors") {
  Tape tape;
  Array s({2, 2, 2});
  Array h({2});
  NodeId sn = tape.param(&s, nullptr);
  NodeId hn = tape.param(&h, nullptr);
  CHECK_THROWS_AS(route(tape, sn, hn, 0), ValidationError);
  Array empty({0, 2, 2});
  NodeId en = tape.param(&empty, nullptr);
  CHECK_THROWS_AS(route(tape, en, hn, 2), ValidationError);
}

TEST_CASE("gradients flow through all routing iterations") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    Rng rng(stream_seed(seed, "caps-grad"));
    std::size_t k = 2, d = 3;
    Array mask_m = random_array({k, d}, rng);
    Array mask_p = random_array({k}, rng);
    std::vector<std::pair<std::string, Array>> params;
    params.emplace_back("S", random_array({k, d, d}, rng));
    params.emplace_back("h", random_array({d}, rng, 0.3, 1.0));
    auto report = test::check_gradients(params, [&](Tape& t, std::span<const NodeId> p) {
      Routed r = route(t, p[0], p[1], 3);
      return t.add(t.sum(t.mul(r.capsules, t.constant(mask_m))),
                   t.dot(r.membership, t.constant(mask_p)));
    });
    CAPTURE(seed);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("mode_pool selects, averages and matches hand values") {
  Tape tape;
  Array m({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Array p_onehot({2}, {0.0, 1.0});
  NodeId pooled =
      mode_pool(tape, tape.constant(m), tape.constant(p_onehot));
  CHECK(tape.value(pooled)[0] == 0.0);
  CHECK(tape.value(pooled)[1] == 1.0);

  // all capsules equal -> that vector, for any valid p
  Array same({3, 2}, {0.4, -0.2, 0.4, -0.2, 0.4, -0.2});
  Array p3({3}, {0.2, 0.5, 0.3});
  NodeId pooled2 = mode_pool(tape, tape.constant(same), tape.constant(p3));
  CHECK(tape.value(pooled2)[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(tape.value(pooled2)[1] == doctest::Approx(-0.2).epsilon(1e-12));

  Array p_mix({2}, {0.25, 0.75});
  NodeId pooled3 = mode_pool(tape, tape.constant(m), tape.constant(p_mix));
  CHECK(tape.value(pooled3)[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(tape.value(pooled3)[1] == doctest::Approx(0.75).epsilon(1e-12));

  CHECK_THROWS_AS(mode_pool(tape, tape.constant(m), tape.constant(p3)), DimensionError);
}

TEST_CASE("softmax membership mode is available behind the switch") {
  Rng rng(44);
  Array s = random_array({3, 3, 3}, rng);
  Array h = random_array({3}, rng);
  RoutedValues r = route_values(s, h, 2, MembershipMode::softmax);
  double total = 0.0;
  for (std::size_t j = 0; j < 3; ++j) total += r.membership[j];
  CHECK(std::fabs(total - 1.0) < 1e-10);
}
