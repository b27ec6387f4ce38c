#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "etm/planner.hpp"
#include "etm/rng.hpp"
#include "fixtures.hpp"

namespace etm {
namespace {

using testing::error_code_of;
using testing::solved_w3;

// One state, one agent, two actions; every transition loops back with a
// fixed reward per action.
class LoopMdp : public Mmdp {
 public:
  LoopMdp(std::vector<double> rewards, bool enumerable = true)
      : rewards_(std::move(rewards)),
        counts_{static_cast<int>(rewards_.size())},
        blocks_(1, {{0, 1}}, {}),
        bounds_({0}, {0}),
        enumerable_(enumerable) {}

  std::size_t state_dim() const noexcept override { return 1; }
  std::span<const int> action_counts() const noexcept override { return counts_; }
  const AgentBlockMap& blocks() const noexcept override { return blocks_; }
  const StateBounds& bounds() const noexcept override { return bounds_; }
  std::pair<double, double> reward_range() const noexcept override {
    return {*std::min_element(rewards_.begin(), rewards_.end()),
            *std::max_element(rewards_.begin(), rewards_.end())};
  }
  bool is_enumerable() const noexcept override { return enumerable_; }
  std::size_t state_count() const override { return 1; }
  std::size_t state_index(const GlobalState&) const override { return 0; }
  GlobalState state_at(std::size_t) const override { return GlobalState{0}; }
  TransitionOutcome step(const GlobalState& x, const JointAction& a, Rng&) const override {
    return {x, rewards_[static_cast<std::size_t>(a[0])], false};
  }
  void transition_distribution(const GlobalState& x, const JointAction& a,
                               std::vector<TransitionEntry>& out) const override {
    out.assign(1, {x, false, 1.0, rewards_[static_cast<std::size_t>(a[0])]});
  }

 private:
  std::vector<double> rewards_;
  std::vector<int> counts_;
  AgentBlockMap blocks_;
  StateBounds bounds_;
  bool enumerable_;
};

TEST(ValueIteration, AbsorbingZeroRewardStateHasZeroValue) {
  const LoopMdp env({0.0, 0.0});
  const auto q = value_iteration(env, 0.97, 1e-12);
  for (const double v : q.values()) EXPECT_EQ(v, 0.0);
}

TEST(ValueIteration, GeometricSelfLoop) {
  const LoopMdp env({1.0});
  const auto q = value_iteration(env, 0.5, 1e-13);
  EXPECT_NEAR(v_star(q, 0), 2.0, 1e-12);
}

TEST(ValueIteration, NonEnumerableEnvironmentIsUnsupported) {
  const LoopMdp env({1.0}, false);
  EXPECT_EQ(error_code_of([&] { value_iteration(env, 0.9, 1e-6); }), ErrorCode::kUnsupported);
}

TEST(ValueIteration, BellmanResidualWithinToleranceOnW3) {
  const ParticleTag env(EnvConfig{.arena_width = 3});
  const double tol = 1e-8;
  const auto q = value_iteration(env, 0.97, tol);
  EXPECT_LE(bellman_residual(env, q), tol);

  // Independent residual check with an explicit loop over every state.
  std::vector<TransitionEntry> dist;
  double worst = 0.0;
  for (std::size_t s = 0; s < env.state_count(); ++s) {
    const auto x = env.state_at(s);
    double best = -1e300;
    for (std::size_t u = 0; u < env.joint_action_count(); ++u) {
      env.transition_distribution(x, env.decode_action(u), dist);
      double backup = 0.0;
      for (const auto& e : dist) {
        const double next = e.terminal ? 0.0 : v_star(q, env.state_index(e.next_state));
        backup += e.probability * (e.reward + 0.97 * next);
      }
      best = std::max(best, backup);
    }
    worst = std::max(worst, std::abs(v_star(q, s) - best));
  }
  EXPECT_LE(worst, tol);
}

TEST(ValueIteration, QValuesWithinRewardBounds) {
  const auto& w3 = solved_w3();
  const double cap = 1.0 / (1.0 - w3.q.gamma());
  for (const double v : w3.q.values()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_LE(std::abs(v), cap + 1e-9);
  }
}

// Plays pi* on the true state until the tag, returning the discounted reward.
double rollout(const testing::SolvedTag& w, GlobalState x, Rng& rng) {
  const double gamma = w.q.gamma();
  double ret = 0.0, disc = 1.0;
  for (int t = 0; t < 2000; ++t) {
    const auto out = w.env.step(x, w.policy.action(w.env.state_index(x)), rng);
    ret += disc * out.reward;
    if (out.terminal) break;
    disc *= gamma;
    x = out.next_state;
  }
  return ret;
}

TEST(ValueIteration, MatchesMonteCarloPolicyEvaluation) {
  const auto& w3 = solved_w3();
  const std::vector<GlobalState> starts = {
      {0, 0, 2, 2, 1, 1}, {0, 0, 0, 0, 2, 2}, {1, 0, 1, 2, 0, 1}, {2, 2, 0, 1, 1, 0}, {0, 2, 2, 0, 1, 2}};
  constexpr int kRollouts = 1'000'000;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    Rng rng = make_rng(99, k);
    double sum = 0.0, sq = 0.0;
    for (int n = 0; n < kRollouts; ++n) {
      const double r = rollout(w3, starts[k], rng);
      sum += r;
      sq += r * r;
    }
    const double mean = sum / kRollouts;
    const double var = (sq - kRollouts * mean * mean) / (kRollouts - 1);
    const double se = std::sqrt(std::max(var, 0.0) / kRollouts);
    const double v = v_star(w3.q, w3.env.state_index(starts[k]));
    EXPECT_LE(std::abs(mean - v), 2.0 * se + 1e-12) << starts[k] << " mc=" << mean << " vi=" << v;
  }
}

TEST(VStar, RowMaximum) {
  QTable q(2, 3, 0.9);
  EXPECT_EQ(v_star(q, 0), 0.0);
  q.at(1, 0) = 1.0;
  q.at(1, 1) = 2.5;
  q.at(1, 2) = -1.0;
  EXPECT_EQ(v_star(q, 1), 2.5);
  EXPECT_EQ(error_code_of([&] { v_star(q, 2); }), ErrorCode::kInvalidArgument);
}

TEST(PiStar, TieBreakAndOrdering) {
  QTable q(2, 4, 0.9);
  EXPECT_EQ(pi_star_index(q, 0), 0U);
  for (std::size_t a = 0; a < 4; ++a) q.at(1, a) = static_cast<double>(a);
  EXPECT_EQ(pi_star_index(q, 1), 3U);
  EXPECT_EQ(error_code_of([&] { pi_star_index(q, 5); }), ErrorCode::kInvalidArgument);
}

TEST(PiStar, ConsistentWithBruteForceArgmaxOnW3) {
  const auto& w3 = solved_w3();
  for (std::size_t s = 0; s < w3.env.state_count(); ++s) {
    const auto row = w3.q.row(s);
    std::size_t best = 0;
    for (std::size_t u = 1; u < row.size(); ++u)
      if (row[u] > row[best]) best = u;
    ASSERT_EQ(w3.policy.joint_index(s), best);
    ASSERT_EQ(w3.q.at(s, best), v_star(w3.q, s));
    const auto a = pi_star(w3.q, w3.env, s);
    ASSERT_EQ(w3.env.encode_action(a), best);
    ASSERT_EQ(w3.policy.agent_action(s, 0), a[0]);
    ASSERT_EQ(w3.policy.agent_action(s, 1), a[1]);
  }
}

TEST(PiStar, InvariantUnderPositiveScaling) {
  const auto& w3 = solved_w3();
  for (const double scale : {0.25, 4.0, 1024.0}) {
    QTable scaled = w3.q;
    for (auto& v : scaled.values()) v *= scale;
    for (std::size_t s = 0; s < scaled.state_count(); ++s)
      ASSERT_EQ(pi_star_index(scaled, s), pi_star_index(w3.q, s));
  }
}

TEST(SuboptimalityGap, EqualsBruteForceMaximum) {
  const auto& w3 = solved_w3();
  double brute = 0.0;
  for (std::size_t s = 0; s < w3.q.state_count(); ++s) {
    double vmax = w3.q.at(s, 0);
    for (std::size_t u = 1; u < w3.q.action_count(); ++u) vmax = std::max(vmax, w3.q.at(s, u));
    for (std::size_t u = 0; u < w3.q.action_count(); ++u) brute = std::max(brute, vmax - w3.q.at(s, u));
  }
  EXPECT_EQ(suboptimality_gap(w3.q), brute);
  EXPECT_GT(brute, 0.0);
  EXPECT_LT(brute, 1.0 / (1.0 - w3.q.gamma()));
}

TEST(SuboptimalityGap, ZeroWhenAllActionsAreEquivalent) {
  const LoopMdp env({0.5, 0.5});
  EXPECT_NEAR(suboptimality_gap(value_iteration(env, 0.9, 1e-12)), 0.0, 1e-15);
}

TEST(QLearning, ZeroEpisodesReturnsTheInitialTable) {
  const ParticleTag env(EnvConfig{.arena_width = 3});
  TrainConfig cfg;
  cfg.mode = TrainMode::kQLearning;
  cfg.ql_episodes = 0;
  const auto res = q_learning(env, cfg, 200);
  EXPECT_EQ(res.table.state_count(), env.state_count());
  EXPECT_EQ(res.table.action_count(), 25U);
  for (const double v : res.table.values()) EXPECT_EQ(v, 0.0);
  for (const auto n : res.visits) EXPECT_EQ(n, 0U);
}

TEST(QLearning, DeterministicGivenSeed) {
  const ParticleTag env(EnvConfig{.arena_width = 3});
  TrainConfig cfg;
  cfg.mode = TrainMode::kQLearning;
  cfg.ql_episodes = 2000;
  cfg.seed = 5;
  const auto a = q_learning(env, cfg, 50);
  const auto b = q_learning(env, cfg, 50);
  EXPECT_TRUE(std::equal(a.table.values().begin(), a.table.values().end(), b.table.values().begin()));
  EXPECT_EQ(a.visits, b.visits);
}

TEST(TrainConfig, RejectsBadSchedules) {
  TrainConfig cfg;
  cfg.ql_epsilon_start = 0.1;
  cfg.ql_epsilon_end = 0.5;
  EXPECT_EQ(error_code_of([&] { cfg.validate(); }), ErrorCode::kInvalidArgument);
  cfg = TrainConfig{};
  cfg.vi_tolerance = 0.0;
  EXPECT_EQ(error_code_of([&] { cfg.validate(); }), ErrorCode::kInvalidArgument);
  cfg = TrainConfig{};
  cfg.gamma = 1.0;
  EXPECT_EQ(error_code_of([&] { cfg.validate(); }), ErrorCode::kInvalidArgument);
}

}  // namespace
}  // namespace etm
