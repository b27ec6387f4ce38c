#include <algorithm>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "etm/rng.hpp"
#include "etm/surrogate.hpp"
#include "fixtures.hpp"

namespace etm {
namespace {

using testing::error_code_of;
using testing::scratch_dir;
using testing::solved_w3;

// Largest d such that every state within distance d keeps the centre's
// action alpha-optimal, by scanning the whole state space.
int brute_gamma(const testing::SolvedTag& w, std::size_t centre, double alpha) {
  const auto x = w.env.state_at(centre);
  const auto action = w.policy.joint_index(centre);
  int first_bad = w.env.bounds().diameter() + 1;
  for (std::size_t s = 0; s < w.env.state_count(); ++s) {
    if (v_star(w.q, s) - w.q.at(s, action) > alpha)
      first_bad = std::min(first_bad, static_cast<int>(sup_distance(x, w.env.state_at(s))));
  }
  return std::min(first_bad - 1, static_cast<int>(w.env.bounds().diameter()));
}

std::size_t ball_size(const GlobalState& x, int d, const StateBounds& bounds) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < x.dim(); ++i) {
    const Coord lo = std::max(bounds.lower(i), x[i] - d);
    const Coord hi = std::min(bounds.upper(i), x[i] + d);
    n *= static_cast<std::size_t>(hi - lo + 1);
  }
  return n;
}

TEST(Shell, MooreShellSizes) {
  const StateBounds bounds(std::vector<Coord>(6, 0), std::vector<Coord>(6, 9));
  EXPECT_EQ(shell({5, 5, 5, 5, 5, 5}, 1, bounds).size(), 728U);
  EXPECT_EQ(shell({0, 0, 0, 0, 0, 0}, 1, bounds).size(), 63U);
  EXPECT_EQ(error_code_of([&] { shell({0, 0, 0, 0, 0, 0}, 0, bounds); }), ErrorCode::kInvalidArgument);
}

TEST(Shell, MatchesBallDifferenceAndDistance) {
  const StateBounds bounds(std::vector<Coord>(6, 0), std::vector<Coord>(6, 6));
  Rng rng(3);
  std::uniform_int_distribution<Coord> coord(0, 6);
  std::uniform_int_distribution<int> radius(1, 6);
  for (int n = 0; n < 50; ++n) {
    GlobalState x(6);
    for (std::size_t i = 0; i < 6; ++i) x[i] = coord(rng);
    const int d = radius(rng);
    const auto sh = shell(x, d, bounds);
    EXPECT_EQ(sh.size(), ball_size(x, d, bounds) - ball_size(x, d - 1, bounds));
    std::set<GlobalState> unique(sh.begin(), sh.end());
    EXPECT_EQ(unique.size(), sh.size());
    for (const auto& y : sh) {
      ASSERT_EQ(sup_distance(x, y), d);
      ASSERT_TRUE(bounds.contains(y));
    }
  }
}

TEST(GammaAlpha, MatchesBruteForceBallScanOnW3) {
  const auto& w3 = solved_w3();
  for (const double alpha : {0.0, 0.1, 0.2, 0.3, w3.iota, w3.iota + 1.0}) {
    for (std::size_t s = 0; s < w3.env.state_count(); ++s) {
      ASSERT_EQ(gamma_alpha(w3.env, w3.q, w3.policy, w3.env.state_at(s), alpha), brute_gamma(w3, s, alpha))
          << "alpha=" << alpha << " x=" << w3.env.state_at(s);
    }
  }
}

TEST(GammaAlpha, DiameterOnceAlphaReachesTheGap) {
  const auto& w3 = solved_w3();
  const ExactSurrogate exact(w3.env, w3.q, w3.policy, w3.iota);
  for (std::size_t s = 0; s < w3.env.state_count(); ++s) ASSERT_EQ(exact.at_index(s), 2);
}

TEST(GammaAlpha, MonotoneInAlpha) {
  const auto& w3 = solved_w3();
  const std::vector<double> alphas = {0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8, w3.iota};
  std::vector<ExactSurrogate> exact;
  for (const double a : alphas) exact.emplace_back(w3.env, w3.q, w3.policy, a);
  for (std::size_t s = 0; s < w3.env.state_count(); ++s) {
    for (std::size_t k = 1; k < alphas.size(); ++k) {
      ASSERT_LE(exact[k - 1].at_index(s), exact[k].at_index(s));
      ASSERT_GE(exact[k - 1].at_index(s), 0);
    }
  }
}

TEST(GammaAlpha, BallProperty) {
  const auto& w3 = solved_w3();
  const int diameter = w3.env.bounds().diameter();
  const double alpha = 0.2;
  for (std::size_t c = 0; c < w3.env.state_count(); ++c) {
    const auto x = w3.env.state_at(c);
    const auto action = w3.policy.joint_index(c);
    const int d = gamma_alpha(w3.env, w3.q, w3.policy, x, alpha);
    bool violated_at_next = false;
    for (std::size_t s = 0; s < w3.env.state_count(); ++s) {
      const int dist = sup_distance(x, w3.env.state_at(s));
      const bool ok = !(v_star(w3.q, s) - w3.q.at(s, action) > alpha);
      if (dist <= d) ASSERT_TRUE(ok);
      if (dist == d + 1 && !ok) violated_at_next = true;
    }
    if (d < diameter) ASSERT_TRUE(violated_at_next) << x;
  }
}

TEST(GammaAlpha, MemoisedSurrogateAgreesWithDirectEvaluation) {
  const auto& w3 = solved_w3();
  const ExactSurrogate exact(w3.env, w3.q, w3.policy, 0.3);
  exact.precompute_all();
  for (std::size_t s = 0; s < w3.env.state_count(); s += 7) {
    const auto x = w3.env.state_at(s);
    EXPECT_EQ(exact(x), gamma_alpha(w3.env, w3.q, w3.policy, x, 0.3));
    EXPECT_EQ(exact.compute(x), exact.at_index(s));
  }
}

TEST(GammaAlpha, RejectsNegativeAlphaAndForeignStates) {
  const auto& w3 = solved_w3();
  EXPECT_EQ(error_code_of([&] { gamma_alpha(w3.env, w3.q, w3.policy, {0, 0, 0, 0, 0, 0}, -0.1); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_code_of([&] { gamma_alpha(w3.env, w3.q, w3.policy, {0, 0, 0, 0, 0, 3}, 0.1); }),
            ErrorCode::kInvalidArgument);
}

TEST(SampleSurrogates, ExhaustiveWhenSampleCoversTheSpace) {
  const auto& w3 = solved_w3();
  const auto set = sample_surrogates(w3.env, w3.q, w3.policy, 0.2, w3.env.state_count(), 11);
  ASSERT_EQ(set.size(), 729U);
  std::set<GlobalState> seen;
  for (const auto& s : set.samples) {
    seen.insert(s.x);
    EXPECT_EQ(s.gamma, gamma_alpha(w3.env, w3.q, w3.policy, s.x, 0.2));
    EXPECT_EQ(s.alpha, 0.2);
  }
  EXPECT_EQ(seen.size(), 729U);
}

TEST(SampleSurrogates, DeterministicAndWithoutReplacement) {
  const auto& w3 = solved_w3();
  const auto a = sample_surrogates(w3.env, w3.q, w3.policy, 0.1, 300, 42);
  const auto b = sample_surrogates(w3.env, w3.q, w3.policy, 0.1, 300, 42);
  const auto c = sample_surrogates(w3.env, w3.q, w3.policy, 0.1, 300, 43);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, c.samples);
  std::set<GlobalState> unique;
  for (const auto& s : a.samples) unique.insert(s.x);
  EXPECT_EQ(unique.size(), 300U);
}

TEST(SampleSurrogates, OversizedSampleIsAnError) {
  const auto& w3 = solved_w3();
  EXPECT_EQ(error_code_of([&] { sample_surrogates(w3.env, w3.q, w3.policy, 0.1, 730, 1); }),
            ErrorCode::kInvalidArgument);
}

TEST(SampleSurrogates, CsvRoundTrip) {
  const auto dir = scratch_dir("samples_csv");
  const auto& w3 = solved_w3();
  const auto set = sample_surrogates(w3.env, w3.q, w3.policy, 0.3, 50, 9);
  write_samples_csv(dir / "s.csv", set);
  const auto back = read_samples_csv(dir / "s.csv");
  EXPECT_EQ(back.samples, set.samples);
  std::ifstream in(dir / "s.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "x1,x2,x3,x4,x5,x6,gamma,alpha");
  EXPECT_EQ(error_code_of([&] { read_samples_csv(dir / "missing.csv"); }), ErrorCode::kMissingArtifact);
}

}  // namespace
}  // namespace etm
