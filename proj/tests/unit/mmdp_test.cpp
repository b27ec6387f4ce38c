#include <random>

#include <gtest/gtest.h>

#include "etm/mmdp.hpp"
#include "etm/particle_tag.hpp"
#include "etm/rng.hpp"
#include "fixtures.hpp"

namespace etm {
namespace {

using testing::error_code_of;

TEST(SupDistance, Examples) {
  EXPECT_EQ(sup_distance({1, 2, 3, 4, 5, 6}, {1, 2, 3, 4, 5, 6}), 0);
  EXPECT_EQ(sup_distance({0, 0, 0, 0, 0, 0}, {9, 9, 9, 9, 9, 9}), 9);
  EXPECT_EQ(sup_distance({1, 1, 2, 2, 3, 3}, {2, 3, 2, 2, 3, 3}), 2);
}

TEST(SupDistance, DimensionMismatchIsAnError) {
  EXPECT_EQ(error_code_of([] { sup_distance({1, 2}, {1, 2, 3}); }), ErrorCode::kDimensionMismatch);
}

TEST(SupDistance, MetricAxiomsOnRandomTriples) {
  Rng rng(7);
  std::uniform_int_distribution<Coord> coord(0, 9);
  auto draw = [&] {
    GlobalState x(6);
    for (std::size_t i = 0; i < 6; ++i) x[i] = coord(rng);
    return x;
  };
  for (int n = 0; n < 1000; ++n) {
    const auto a = draw(), b = draw(), c = draw();
    EXPECT_EQ(sup_distance(a, a), 0);
    EXPECT_EQ(sup_distance(a, b), sup_distance(b, a));
    EXPECT_EQ(sup_distance(a, b) == 0, a == b);
    EXPECT_LE(sup_distance(a, c), sup_distance(a, b) + sup_distance(b, c));
  }
}

TEST(BlockDistance, RestrictsToTheAgentsBlock) {
  const ParticleTag env(EnvConfig{.arena_width = 10});
  const auto& blocks = env.blocks();
  const GlobalState a{3, 3, 7, 7, 1, 1};
  EXPECT_EQ(block_distance(a, {3, 3, 0, 0, 9, 9}, 0, blocks), 0);
  EXPECT_EQ(block_distance(a, {3, 4, 7, 7, 1, 1}, 0, blocks), 1);
  EXPECT_EQ(block_distance(a, {3, 4, 7, 7, 1, 1}, 1, blocks), 0);
  // The prey block is measurable but belongs to no agent.
  ASSERT_EQ(blocks.local_blocks().size(), 1U);
  EXPECT_EQ(block_distance(a, {3, 3, 7, 7, 6, 1}, blocks.local_blocks()[0]), 5);
  EXPECT_EQ(error_code_of([&] { block_distance(a, a, 2, blocks); }), ErrorCode::kInvalidArgument);
}

TEST(AgentBlockMap, RejectsOverlapAndGaps) {
  EXPECT_EQ(error_code_of([] { AgentBlockMap(4, {{0, 2}, {1, 3}}, {{3, 4}}); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_code_of([] { AgentBlockMap(4, {{0, 2}}, {{3, 4}}); }),
            ErrorCode::kInvalidArgument);
  EXPECT_NO_THROW(AgentBlockMap(4, {{0, 2}, {2, 3}}, {{3, 4}}));
}

TEST(JointAction, EncodingRoundTrips) {
  const ParticleTag env(EnvConfig{.arena_width = 3});
  ASSERT_EQ(env.joint_action_count(), 25U);
  for (std::size_t u = 0; u < env.joint_action_count(); ++u) {
    const auto a = env.decode_action(u);
    EXPECT_EQ(a[0], static_cast<int>(u / 5));
    EXPECT_EQ(a[1], static_cast<int>(u % 5));
    EXPECT_EQ(env.encode_action(a), u);
  }
  EXPECT_FALSE(env.valid_action(JointAction{5, 0}));
  EXPECT_FALSE(env.valid_action(JointAction{0}));
}

TEST(BoxIndexer, LexicographicRoundTrip) {
  const StateBounds bounds({0, -1, 2}, {2, 1, 3});
  const BoxIndexer idx(bounds);
  ASSERT_EQ(idx.count(), 18U);
  GlobalState prev = idx.state(0);
  EXPECT_EQ(prev, (GlobalState{0, -1, 2}));
  for (std::size_t i = 1; i < idx.count(); ++i) {
    const auto x = idx.state(i);
    EXPECT_LT(prev, x);
    EXPECT_EQ(idx.index(x), i);
    prev = x;
  }
}

TEST(StateBounds, DiameterAndContainment) {
  const StateBounds bounds({0, 0}, {4, 2});
  EXPECT_EQ(bounds.diameter(), 4);
  EXPECT_TRUE(bounds.contains({4, 2}));
  EXPECT_FALSE(bounds.contains({5, 0}));
  EXPECT_FALSE(bounds.contains({0, -1}));
}

}  // namespace
}  // namespace etm
