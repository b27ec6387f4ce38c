#include "etm/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "etm/error.hpp"
#include "etm/parallel.hpp"

namespace etm {

QTable::QTable(std::size_t state_count, std::size_t action_count, double gamma)
    : states_(state_count), actions_(action_count), gamma_(gamma),
      values_(state_count * action_count, 0.0) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorCode::kInvalidArgument, "gamma must be in (0,1)");
}

std::span<const double> QTable::row(std::size_t s) const {
  if (s >= states_) throw Error(ErrorCode::kInvalidArgument, "state index out of range");
  return {values_.data() + s * actions_, actions_};
}

std::span<double> QTable::row(std::size_t s) {
  if (s >= states_) throw Error(ErrorCode::kInvalidArgument, "state index out of range");
  return {values_.data() + s * actions_, actions_};
}

PolicyTable::PolicyTable(std::vector<std::uint32_t> joint, std::vector<int> action_counts)
    : joint_(std::move(joint)), action_counts_(std::move(action_counts)) {}

std::size_t PolicyTable::joint_index(std::size_t s) const {
  if (s >= joint_.size()) throw Error(ErrorCode::kInvalidArgument, "state index out of range");
  return joint_[s];
}

JointAction PolicyTable::action(std::size_t s) const {
  std::size_t index = joint_index(s);
  JointAction action(action_counts_.size());
  for (std::size_t i = action_counts_.size(); i-- > 0;) {
    const auto c = static_cast<std::size_t>(action_counts_[i]);
    action[i] = static_cast<int>(index % c);
    index /= c;
  }
  return action;
}

int PolicyTable::agent_action(std::size_t s, std::size_t agent) const {
  if (agent >= action_counts_.size()) throw Error(ErrorCode::kInvalidArgument, "invalid agent id");
  return action(s)[agent];
}

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorCode::kInvalidArgument, "gamma must be in (0,1)");
  if (!(vi_tolerance > 0.0)) throw Error(ErrorCode::kInvalidArgument, "vi_tolerance must be > 0");
  if (vi_max_sweeps < 1) throw Error(ErrorCode::kInvalidArgument, "vi_max_sweeps must be >= 1");
  if (ql_episodes < 0) throw Error(ErrorCode::kInvalidArgument, "ql_episodes must be >= 0");
  if (!(ql_lr_exponent > 0.0 && ql_lr_exponent <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "ql_lr_exponent must be in (0,1]");
  }
  if (!(ql_epsilon_start >= ql_epsilon_end && ql_epsilon_end >= 0.0 && ql_epsilon_start <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "exploration schedule must be non-increasing within [0,1]");
  }
}

namespace {

constexpr std::int32_t kTerminal = -1;

// Sparse (state, action) -> successor list, used when it fits in memory.
struct CompiledModel {
  std::vector<std::uint32_t> offsets;
  std::vector<std::int32_t> next;
  std::vector<double> prob;
  std::vector<double> reward;
};

constexpr std::size_t kMaxCompiledEntries = std::size_t{1} << 26;

bool compile_model(const Mmdp& env, CompiledModel& model) {
  const std::size_t n = env.state_count();
  const std::size_t a_count = env.joint_action_count();
  if (n * a_count * 9 > kMaxCompiledEntries ||
      n > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
    return false;
  }
  model.offsets.assign(n * a_count + 1, 0);
  std::vector<TransitionEntry> buf;
  for (std::size_t s = 0; s < n; ++s) {
    const GlobalState x = env.state_at(s);
    for (std::size_t a = 0; a < a_count; ++a) {
      env.transition_distribution(x, env.decode_action(a), buf);
      for (const auto& e : buf) {
        model.next.push_back(e.terminal ? kTerminal
                                        : static_cast<std::int32_t>(env.state_index(e.next_state)));
        model.prob.push_back(e.probability);
        model.reward.push_back(e.reward);
      }
      model.offsets[s * a_count + a + 1] = static_cast<std::uint32_t>(model.next.size());
    }
  }
  return true;
}

double row_max(std::span<const double> row) { return *std::max_element(row.begin(), row.end()); }

}  // namespace

QTable value_iteration(const Mmdp& env, double gamma, double tol, std::int64_t max_sweeps) {
  if (!env.is_enumerable()) {
    throw Error(ErrorCode::kUnsupported, "value iteration needs an enumerable state space");
  }
  if (!(tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tolerance must be > 0");
  const std::size_t n = env.state_count();
  const std::size_t a_count = env.joint_action_count();
  QTable q(n, a_count, gamma);

  CompiledModel model;
  const bool compiled = compile_model(env, model);

  std::vector<double> v(n, 0.0);
  std::vector<double> v_next(n, 0.0);
  for (std::int64_t sweep = 0; sweep < max_sweeps; ++sweep) {
    parallel_for(n, [&](std::size_t s) {
      auto row = q.row(s);
      if (compiled) {
        for (std::size_t a = 0; a < a_count; ++a) {
          double acc = 0.0;
          const std::size_t k = s * a_count + a;
          for (std::uint32_t e = model.offsets[k]; e < model.offsets[k + 1]; ++e) {
            const double cont = model.next[e] == kTerminal ? 0.0 : v[static_cast<std::size_t>(model.next[e])];
            acc += model.prob[e] * (model.reward[e] + gamma * cont);
          }
          row[a] = acc;
        }
      } else {
        std::vector<TransitionEntry> buf;
        const GlobalState x = env.state_at(s);
        for (std::size_t a = 0; a < a_count; ++a) {
          env.transition_distribution(x, env.decode_action(a), buf);
          double acc = 0.0;
          for (const auto& e : buf) {
            const double cont = e.terminal ? 0.0 : v[env.state_index(e.next_state)];
            acc += e.probability * (e.reward + gamma * cont);
          }
          row[a] = acc;
        }
      }
      v_next[s] = row_max(row);
    }, 256);
    double diff = 0.0;
    for (std::size_t s = 0; s < n; ++s) diff = std::max(diff, std::abs(v_next[s] - v[s]));
    v.swap(v_next);
    if (diff <= tol) return q;
  }
  throw Error(ErrorCode::kNonConvergence, "value iteration did not reach tolerance");
}

QLearningResult q_learning(const Mmdp& env, const TrainConfig& config, int step_cap) {
  config.validate();
  if (!env.is_enumerable()) throw Error(ErrorCode::kUnsupported, "tabular Q-learning needs an enumerable state space");
  if (step_cap < 1) throw Error(ErrorCode::kInvalidArgument, "step_cap must be >= 1");
  const std::size_t n = env.state_count();
  const std::size_t a_count = env.joint_action_count();
  QLearningResult out{QTable(n, a_count, config.gamma), std::vector<std::uint32_t>(n * a_count, 0)};
  QTable& q = out.table;

  Rng rng(derive_seed(config.seed, 0x51));
  std::uniform_int_distribution<std::size_t> pick_state(0, n - 1);
  std::uniform_int_distribution<std::size_t> pick_action(0, a_count - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double span = static_cast<double>(std::max<std::int64_t>(config.ql_episodes - 1, 1));
  for (std::int64_t ep = 0; ep < config.ql_episodes; ++ep) {
    const double frac = static_cast<double>(ep) / span;
    const double epsilon =
        config.ql_epsilon_start + (config.ql_epsilon_end - config.ql_epsilon_start) * std::min(frac, 1.0);
    GlobalState x = env.state_at(pick_state(rng));
    std::size_t s = env.state_index(x);
    for (int t = 0; t < step_cap; ++t) {
      const std::size_t a = unit(rng) < epsilon ? pick_action(rng) : pi_star_index(q, s);
      const auto outcome = env.step(x, env.decode_action(a), rng);
      double target = outcome.reward;
      std::size_t s_next = 0;
      if (!outcome.terminal) {
        s_next = env.state_index(outcome.next_state);
        target += config.gamma * v_star(q, s_next);
      }
      auto& visits = out.visits[s * a_count + a];
      ++visits;
      const double lr = 1.0 / std::pow(1.0 + visits, config.ql_lr_exponent);
      q.at(s, a) += lr * (target - q.at(s, a));
      if (outcome.terminal) break;
      x = outcome.next_state;
      s = s_next;
    }
  }
  return out;
}

double v_star(const QTable& q, std::size_t s) { return row_max(q.row(s)); }

std::size_t pi_star_index(const QTable& q, std::size_t s) {
  const auto row = q.row(s);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

JointAction pi_star(const QTable& q, const Mmdp& env, std::size_t s) {
  return env.decode_action(pi_star_index(q, s));
}

PolicyTable greedy_policy(const QTable& q, const Mmdp& env) {
  if (q.action_count() != env.joint_action_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "Q-table action count does not match environment");
  }
  std::vector<std::uint32_t> joint(q.state_count());
  for (std::size_t s = 0; s < q.state_count(); ++s) {
    joint[s] = static_cast<std::uint32_t>(pi_star_index(q, s));
  }
  const auto counts = env.action_counts();
  return PolicyTable(std::move(joint), std::vector<int>(counts.begin(), counts.end()));
}

double suboptimality_gap(const QTable& q) {
  double iota = 0.0;
  for (std::size_t s = 0; s < q.state_count(); ++s) {
    const auto row = q.row(s);
    const double v = row_max(row);
    for (double value : row) iota = std::max(iota, v - value);
  }
  return iota;
}

double bellman_residual(const Mmdp& env, const QTable& q) {
  const std::size_t n = env.state_count();
  if (q.state_count() != n || q.action_count() != env.joint_action_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "Q-table shape does not match environment");
  }
  std::vector<double> v(n);
  for (std::size_t s = 0; s < n; ++s) v[s] = v_star(q, s);
  double residual = 0.0;
  std::vector<TransitionEntry> buf;
  for (std::size_t s = 0; s < n; ++s) {
    const GlobalState x = env.state_at(s);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < q.action_count(); ++a) {
      env.transition_distribution(x, env.decode_action(a), buf);
      double acc = 0.0;
      for (const auto& e : buf) {
        acc += e.probability * (e.reward + q.gamma() * (e.terminal ? 0.0 : v[env.state_index(e.next_state)]));
      }
      best = std::max(best, acc);
    }
    residual = std::max(residual, std::abs(v[s] - best));
  }
  return residual;
}

}  // namespace etm
