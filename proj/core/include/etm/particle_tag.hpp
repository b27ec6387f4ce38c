#pragma once

// Two-predator / one-prey particle tag on a W x W grid.
//
// State layout: (pred1_x, pred1_y, pred2_x, pred2_y, prey_x, prey_y).
// Each predator owns its own position block; the prey block is sensed
// locally by both predators and is never communicated.

#include <cstdint>
#include <string>
#include <vector>

#include "etm/mmdp.hpp"

namespace etm {

enum class Move : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kWait = 4 };
inline constexpr int kMoveCount = 5;

enum class PreyPolicy { kUniformAdjacent };

struct EnvConfig {
  int arena_width = 10;
  int n_predators = 2;
  int step_cap = 200;
  bool tag_precedence = true;
  PreyPolicy prey_policy = PreyPolicy::kUniformAdjacent;
  std::uint64_t seed = 0;

  /// Throws kInvalidArgument / kUnsupported on bad values.
  void validate() const;
};

std::string to_string(Move m);
Move parse_move(const std::string& name);

class ParticleTag final : public Mmdp {
 public:
  explicit ParticleTag(EnvConfig config);

  const EnvConfig& config() const noexcept { return config_; }
  int width() const noexcept { return config_.arena_width; }

  std::size_t state_dim() const noexcept override { return 6; }
  std::span<const int> action_counts() const noexcept override { return action_counts_; }
  const AgentBlockMap& blocks() const noexcept override { return blocks_; }
  const StateBounds& bounds() const noexcept override { return bounds_; }
  std::pair<double, double> reward_range() const noexcept override { return {-1.0, 1.0}; }

  bool is_enumerable() const noexcept override { return true; }
  std::size_t state_count() const override { return indexer_.count(); }
  std::size_t state_index(const GlobalState& x) const override;
  GlobalState state_at(std::size_t index) const override;

  TransitionOutcome step(const GlobalState& x, const JointAction& action,
                         Rng& rng) const override;
  void transition_distribution(const GlobalState& x, const JointAction& action,
                               std::vector<TransitionEntry>& out) const override;

  /// Predator resolution only (no prey motion): post-move state, reward and
  /// whether the prey was tagged.
  struct PredatorResolution {
    GlobalState moved;
    double reward = 0.0;
    bool tagged = false;
  };
  PredatorResolution resolve_predators(const GlobalState& x, const JointAction& action) const;

  /// In-bounds 8-neighbourhood of a cell, in a fixed order.
  int prey_moves(Coord px, Coord py, std::array<std::pair<Coord, Coord>, 8>& out) const noexcept;

 private:
  void check_state(const GlobalState& x) const;

  EnvConfig config_;
  std::vector<int> action_counts_;
  AgentBlockMap blocks_;
  StateBounds bounds_;
  BoxIndexer indexer_;
};

/// All W^6 states in lexicographic order.
std::vector<GlobalState> enumerate_states(const EnvConfig& config);

}  // namespace etm
