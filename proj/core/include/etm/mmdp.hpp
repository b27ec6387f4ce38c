#pragma once

// Collaborative multi-agent MDP abstraction: joint states with a sup-norm,
// per-agent observation blocks, joint actions and transition models.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "etm/rng.hpp"

namespace etm {

using Coord = std::int32_t;

inline constexpr std::size_t kMaxStateDim = 12;
inline constexpr std::size_t kMaxAgents = 6;

/// Joint state: a fixed-length vector of integer coordinates. Stored inline
/// so that states can be copied freely in the simulation hot loops.
class GlobalState {
 public:
  GlobalState() = default;
  explicit GlobalState(std::size_t dim);
  GlobalState(std::initializer_list<Coord> values);
  explicit GlobalState(std::span<const Coord> values);

  std::size_t dim() const noexcept { return dim_; }
  Coord operator[](std::size_t i) const noexcept { return c_[i]; }
  Coord& operator[](std::size_t i) noexcept { return c_[i]; }
  std::span<const Coord> components() const noexcept { return {c_.data(), dim_}; }

  friend bool operator==(const GlobalState& a, const GlobalState& b) noexcept;
  friend std::strong_ordering operator<=>(const GlobalState& a, const GlobalState& b) noexcept;

 private:
  std::array<Coord, kMaxStateDim> c_{};
  std::size_t dim_ = 0;
};

std::ostream& operator<<(std::ostream& os, const GlobalState& x);
std::string to_string(const GlobalState& x);

/// Half-open range of state components [begin, end).
struct ComponentRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
  friend bool operator==(const ComponentRange&, const ComponentRange&) = default;
};

/// Inclusive per-component coordinate bounds of an integer box state space.
class StateBounds {
 public:
  StateBounds() = default;
  StateBounds(std::vector<Coord> lower, std::vector<Coord> upper);

  std::size_t dim() const noexcept { return lower_.size(); }
  Coord lower(std::size_t i) const { return lower_[i]; }
  Coord upper(std::size_t i) const { return upper_[i]; }
  bool contains(const GlobalState& x) const noexcept;
  /// Largest sup-norm distance between two states of the box.
  Coord diameter() const noexcept;

 private:
  std::vector<Coord> lower_;
  std::vector<Coord> upper_;
};

/// Which components each agent measures and communicates, plus the blocks
/// every agent senses locally (never communicated).
class AgentBlockMap {
 public:
  AgentBlockMap() = default;
  AgentBlockMap(std::size_t dim, std::vector<ComponentRange> communicated,
                std::vector<ComponentRange> local);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t agent_count() const noexcept { return communicated_.size(); }
  const ComponentRange& block(std::size_t agent) const;
  std::span<const ComponentRange> local_blocks() const noexcept { return local_; }

 private:
  std::size_t dim_ = 0;
  std::vector<ComponentRange> communicated_;
  std::vector<ComponentRange> local_;
};

/// max_i |a_i - b_i|. Throws kDimensionMismatch on unequal lengths.
Coord sup_distance(const GlobalState& a, const GlobalState& b);

/// Sup-norm restricted to one component range.
Coord block_distance(const GlobalState& a, const GlobalState& b, const ComponentRange& block);

/// Sup-norm restricted to `agent`'s communicated block.
Coord block_distance(const GlobalState& a, const GlobalState& b, std::size_t agent,
                     const AgentBlockMap& map);

/// Per-agent action ids, one per agent.
class JointAction {
 public:
  JointAction() = default;
  JointAction(std::initializer_list<int> ids);
  explicit JointAction(std::size_t agents);

  std::size_t size() const noexcept { return n_; }
  int operator[](std::size_t agent) const noexcept { return ids_[agent]; }
  int& operator[](std::size_t agent) noexcept { return ids_[agent]; }

  friend bool operator==(const JointAction& a, const JointAction& b) noexcept;

 private:
  std::array<int, kMaxAgents> ids_{};
  std::size_t n_ = 0;
};

struct TransitionOutcome {
  GlobalState next_state;
  double reward = 0.0;
  /// True when the transition entered the absorbing terminal marker.
  bool terminal = false;
};

/// One atom of a transition distribution. `terminal` atoms lead to the
/// absorbing terminal marker whose value is fixed at zero.
struct TransitionEntry {
  GlobalState next_state;
  bool terminal = false;
  double probability = 0.0;
  double reward = 0.0;
};

/// Abstract collaborative multi-agent MDP with a metric joint state space.
class Mmdp {
 public:
  virtual ~Mmdp() = default;

  virtual std::size_t state_dim() const noexcept = 0;
  virtual std::span<const int> action_counts() const noexcept = 0;
  virtual const AgentBlockMap& blocks() const noexcept = 0;
  virtual const StateBounds& bounds() const noexcept = 0;
  /// Smallest and largest one-step reward.
  virtual std::pair<double, double> reward_range() const noexcept = 0;

  std::size_t agent_count() const noexcept { return action_counts().size(); }
  std::size_t joint_action_count() const noexcept;
  /// Mixed-radix encoding with agent 0 most significant.
  std::size_t encode_action(const JointAction& action) const;
  JointAction decode_action(std::size_t index) const;
  bool valid_action(const JointAction& action) const noexcept;

  /// Finite state spaces override these; the defaults throw kUnsupported.
  virtual bool is_enumerable() const noexcept { return false; }
  virtual std::size_t state_count() const;
  virtual std::size_t state_index(const GlobalState& x) const;
  virtual GlobalState state_at(std::size_t index) const;

  virtual TransitionOutcome step(const GlobalState& x, const JointAction& action,
                                 Rng& rng) const = 0;
  /// Fills `out` (cleared first) with the full next-state distribution.
  virtual void transition_distribution(const GlobalState& x, const JointAction& action,
                                       std::vector<TransitionEntry>& out) const = 0;
};

/// Row-major (lexicographic) indexing of an integer box.
class BoxIndexer {
 public:
  BoxIndexer() = default;
  explicit BoxIndexer(const StateBounds& bounds);

  std::size_t count() const noexcept { return count_; }
  std::size_t index(const GlobalState& x) const noexcept;
  GlobalState state(std::size_t index) const noexcept;

 private:
  std::vector<Coord> lower_;
  std::vector<std::size_t> extent_;
  std::vector<std::size_t> stride_;
  std::size_t count_ = 0;
};

}  // namespace etm
