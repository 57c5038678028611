#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "otkt/ctc.hpp"
#include "otkt/error.hpp"
#include "test_util.hpp"

using namespace otkt;

namespace {

// Random grid with rows normalized in log space.
Array2 random_log_probs(std::mt19937_64& rng, std::size_t t, std::size_t v) {
  Array2 out = testing::random_array(rng, t, v, -2.0, 2.0);
  for (std::size_t r = 0; r < t; ++r) {
    double z = 0.0;
    for (double x : out.row(r)) z += std::exp(x);
    for (double& x : out.row(r)) x -= std::log(z);
  }
  return out;
}

std::vector<std::vector<double>> to_rows(const Array2& a) {
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < a.rows(); ++r) rows.emplace_back(a.row(r).begin(), a.row(r).end());
  return rows;
}

}  // namespace

TEST_CASE("ctc single frame and two frame examples") {
  std::mt19937_64 rng(2);
  const Array2 one = random_log_probs(rng, 1, 4);
  CHECK(ctc::ctc_loss(one, {2}) == doctest::Approx(-one(0, 2)));

  const Array2 two = random_log_probs(rng, 2, 4);
  auto p = [&](std::size_t t, std::size_t s) { return std::exp(two(t, s)); };
  const double expected = -std::log(p(0, 3) * p(1, 3) + p(0, 3) * p(1, 0) + p(0, 0) * p(1, 3));
  CHECK(ctc::ctc_loss(two, {3}) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(ctc::ctc_loss(two, {3}) == doctest::Approx(oracle::ctc_brute_force(to_rows(two), {3})));
}

TEST_CASE("ctc empty target is the all-blank path") {
  std::mt19937_64 rng(3);
  const Array2 lp = random_log_probs(rng, 5, 3);
  double expected = 0.0;
  for (std::size_t t = 0; t < 5; ++t) expected -= lp(t, 0);
  CHECK(ctc::ctc_loss(lp, {}) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ctc matches exhaustive path enumeration") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> t_dist(1, 6), v_dist(2, 4), l_dist(0, 3);
  int checked = 0;
  while (checked < 100) {
    const std::size_t t = t_dist(rng), v = v_dist(rng), l = l_dist(rng);
    std::uniform_int_distribution<int> tok(1, static_cast<int>(v) - 1);
    TokenSequence target;
    for (std::size_t k = 0; k < l; ++k) target.push_back(tok(rng));
    if (ctc::min_frames(target) > t) continue;
    const Array2 lp = random_log_probs(rng, t, v);
    CHECK(std::abs(ctc::ctc_loss(lp, target) - oracle::ctc_brute_force(to_rows(lp), target)) < 1e-8);
    ++checked;
  }
}

TEST_CASE("ctc gradient matches finite differences") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Array2 logits = testing::random_array(rng, 6, 5);
    const TokenSequence target{1 + trial % 4, 2, 2};
    auto build = [&](ad::Graph&, const std::vector<ad::Var>& x) {
      return ctc::ctc_loss(ad::log_softmax(x[0]), target);
    };
    const auto report = testing::check_gradients({logits}, build, 1e-4);
    CHECK_MESSAGE(report.failed == 0, "worst " << report.worst_rel);
  }
}

TEST_CASE("ctc rejects infeasible targets and bad ids") {
  const Array2 lp(3, 4, std::log(0.25));
  try {
    (void)ctc::ctc_loss(lp, {1, 1, 2});
    FAIL("expected InvalidInput");
  } catch (const InvalidInput& e) {
    const std::string what = e.what();
    CHECK(what.find("T_a=3") != std::string::npos);
    CHECK(what.find("4") != std::string::npos);
  }
  CHECK_THROWS_AS(ctc::ctc_loss(lp, {0}), InvalidInput);
  CHECK_THROWS_AS(ctc::ctc_loss(lp, {4}), InvalidInput);
  CHECK(ctc::min_frames({1, 1, 2}) == 4);
  CHECK(ctc::min_frames({}) == 0);
}

TEST_CASE("greedy decode examples") {
  auto grid = [](std::vector<int> frames) {
    Array2 out(frames.size(), 4, -5.0);
    for (std::size_t t = 0; t < frames.size(); ++t) out(t, static_cast<std::size_t>(frames[t])) = -0.1;
    return out;
  };
  CHECK(ctc::greedy_decode(grid({3, 3, 0, 3})) == TokenSequence{3, 3});
  CHECK(ctc::greedy_decode(grid({0, 0, 0})).empty());
  CHECK(ctc::greedy_decode(grid({3, 0, 2, 2})) == TokenSequence{3, 2});

  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const TokenSequence out = ctc::greedy_decode(random_log_probs(rng, 12, 4));
    for (int id : out) CHECK(id != kBlank);
  }
}

TEST_CASE("cer examples") {
  CHECK(ctc::cer({3, 4, 5}, {3, 4, 5}) == 0.0);
  CHECK(ctc::cer({3, 9, 5, 6}, {3, 4, 5, 6}) == doctest::Approx(0.25));
  CHECK(ctc::cer({3, 4}, {3, 4, 5, 6}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(ctc::cer({3}, {}), InvalidInput);
}

TEST_CASE("edit distance agrees with the table oracle and is a metric") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> len(0, 8);
  std::uniform_int_distribution<int> tok(3, 6);
  auto draw = [&] {
    TokenSequence s(len(rng));
    for (int& v : s) v = tok(rng);
    return s;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const TokenSequence a = draw(), b = draw(), c = draw();
    const std::size_t ab = ctc::edit_distance(a, b);
    CHECK(ab == oracle::edit_distance(a, b));
    CHECK(ab == ctc::edit_distance(b, a));
    CHECK(ctc::edit_distance(a, a) == 0);
    CHECK(ctc::edit_distance(a, c) <= ab + ctc::edit_distance(b, c));
  }
}
