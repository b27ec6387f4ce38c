#pragma once

// Optimal joint value functions: exact value iteration over an enumerable
// model (reference path) and tabular joint Q-learning.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "etm/mmdp.hpp"

namespace etm {

/// Dense Q-values indexed by (state index, joint-action index). Terminal
/// markers are implicit and valued at zero.
class QTable {
 public:
  QTable() = default;
  QTable(std::size_t state_count, std::size_t action_count, double gamma);

  std::size_t state_count() const noexcept { return states_; }
  std::size_t action_count() const noexcept { return actions_; }
  double gamma() const noexcept { return gamma_; }

  double at(std::size_t s, std::size_t a) const { return values_[s * actions_ + a]; }
  double& at(std::size_t s, std::size_t a) { return values_[s * actions_ + a]; }
  std::span<const double> row(std::size_t s) const;
  std::span<double> row(std::size_t s);
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

 private:
  std::size_t states_ = 0;
  std::size_t actions_ = 0;
  double gamma_ = 0.0;
  std::vector<double> values_;
};

/// Greedy joint action per state, with per-agent projections.
class PolicyTable {
 public:
  PolicyTable() = default;
  PolicyTable(std::vector<std::uint32_t> joint, std::vector<int> action_counts);

  std::size_t state_count() const noexcept { return joint_.size(); }
  std::span<const int> action_counts() const noexcept { return action_counts_; }
  std::size_t joint_index(std::size_t s) const;
  JointAction action(std::size_t s) const;
  /// Agent `agent`'s component of the joint action at state s.
  int agent_action(std::size_t s, std::size_t agent) const;
  std::span<const std::uint32_t> joint() const noexcept { return joint_; }

 private:
  std::vector<std::uint32_t> joint_;
  std::vector<int> action_counts_;
};

enum class TrainMode { kValueIteration, kQLearning };

struct TrainConfig {
  TrainMode mode = TrainMode::kValueIteration;
  double gamma = 0.97;
  double vi_tolerance = 1e-8;
  std::int64_t vi_max_sweeps = 1'000'000;
  std::int64_t ql_episodes = 0;
  /// Learning rate 1 / (1 + visits(x,U))^exponent.
  double ql_lr_exponent = 0.6;
  /// epsilon-greedy exploration decays linearly from start to end.
  double ql_epsilon_start = 1.0;
  double ql_epsilon_end = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Jacobi value iteration until sup |V_{k+1} - V_k| <= tol. The returned
/// table's own greedy value has Bellman residual <= gamma * tol.
/// Throws kUnsupported for non-enumerable environments and kNonConvergence
/// if max_sweeps is exhausted.
QTable value_iteration(const Mmdp& env, double gamma, double tol,
                       std::int64_t max_sweeps = 1'000'000);

struct QLearningResult {
  QTable table;
  /// Update count per (state, joint action), row-major like the table.
  std::vector<std::uint32_t> visits;
};

/// Tabular joint Q-learning from uniformly random start states with
/// epsilon-greedy exploration. Episodes end on the terminal marker or after
/// `step_cap` steps (truncated episodes still bootstrap).
QLearningResult q_learning(const Mmdp& env, const TrainConfig& config, int step_cap);

double v_star(const QTable& q, std::size_t s);
/// Lowest-index argmax of the state's row.
std::size_t pi_star_index(const QTable& q, std::size_t s);
JointAction pi_star(const QTable& q, const Mmdp& env, std::size_t s);
PolicyTable greedy_policy(const QTable& q, const Mmdp& env);

/// iota = max over (x, U) of V*(x) - Q*(x, U).
double suboptimality_gap(const QTable& q);

/// sup_x |V(x) - max_U sum_x' P(x'|x,U) (r + gamma V(x'))| with V = row max of q.
double bellman_residual(const Mmdp& env, const QTable& q);

}  // namespace etm
