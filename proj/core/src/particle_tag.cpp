#include "etm/particle_tag.hpp"

#include <algorithm>
#include <cstdlib>

#include "etm/error.hpp"

namespace etm {

namespace {

constexpr std::array<std::pair<Coord, Coord>, kMoveCount> kMoveDelta = {{
    {0, 1},   // up
    {0, -1},  // down
    {-1, 0},  // left
    {1, 0},   // right
    {0, 0},   // wait
}};

bool four_adjacent(Coord ax, Coord ay, Coord bx, Coord by) noexcept {
  return std::abs(ax - bx) + std::abs(ay - by) == 1;
}

}  // namespace

void EnvConfig::validate() const {
  if (arena_width < 3) throw Error(ErrorCode::kInvalidArgument, "arena_width must be >= 3");
  if (step_cap < 1) throw Error(ErrorCode::kInvalidArgument, "step_cap must be >= 1");
  if (n_predators != 2) {
    throw Error(ErrorCode::kUnsupported, "only the 2-predator benchmark is implemented");
  }
  if (!tag_precedence) throw Error(ErrorCode::kUnsupported, "tag_precedence must be true");
}

std::string to_string(Move m) {
  switch (m) {
    case Move::kUp: return "up";
    case Move::kDown: return "down";
    case Move::kLeft: return "left";
    case Move::kRight: return "right";
    case Move::kWait: return "wait";
  }
  return "?";
}

Move parse_move(const std::string& name) {
  for (int i = 0; i < kMoveCount; ++i) {
    if (to_string(static_cast<Move>(i)) == name) return static_cast<Move>(i);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown move '" + name + "'");
}

ParticleTag::ParticleTag(EnvConfig config)
    : config_(config), action_counts_(2, kMoveCount) {
  config_.validate();
  const Coord hi = config_.arena_width - 1;
  bounds_ = StateBounds(std::vector<Coord>(6, 0), std::vector<Coord>(6, hi));
  blocks_ = AgentBlockMap(6, {{0, 2}, {2, 4}}, {{4, 6}});
  indexer_ = BoxIndexer(bounds_);
}

void ParticleTag::check_state(const GlobalState& x) const {
  if (x.dim() != 6) throw Error(ErrorCode::kDimensionMismatch, "particle tag state has 6 components");
  if (!bounds_.contains(x)) throw Error(ErrorCode::kInvalidArgument, "state out of arena: " + to_string(x));
}

std::size_t ParticleTag::state_index(const GlobalState& x) const {
  check_state(x);
  return indexer_.index(x);
}

GlobalState ParticleTag::state_at(std::size_t index) const {
  if (index >= indexer_.count()) throw Error(ErrorCode::kInvalidArgument, "state index out of range");
  return indexer_.state(index);
}

ParticleTag::PredatorResolution ParticleTag::resolve_predators(const GlobalState& x,
                                                               const JointAction& action) const {
  if (!valid_action(action)) throw Error(ErrorCode::kInvalidArgument, "invalid joint action");
  const Coord hi = config_.arena_width - 1;
  PredatorResolution res{x, 0.0, false};
  for (std::size_t agent = 0; agent < 2; ++agent) {
    const auto [dx, dy] = kMoveDelta[static_cast<std::size_t>(action[agent])];
    const std::size_t base = 2 * agent;
    res.moved[base] = std::clamp<Coord>(x[base] + dx, 0, hi);
    res.moved[base + 1] = std::clamp<Coord>(x[base + 1] + dy, 0, hi);
  }
  const Coord qx = x[4];
  const Coord qy = x[5];
  const bool both_adjacent = four_adjacent(x[0], x[1], qx, qy) && four_adjacent(x[2], x[3], qx, qy);
  const bool both_on_prey = res.moved[0] == qx && res.moved[1] == qy && res.moved[2] == qx &&
                            res.moved[3] == qy;
  if (both_adjacent && both_on_prey) {
    res.tagged = true;
    res.reward = 1.0;
  } else if (res.moved[0] == res.moved[2] && res.moved[1] == res.moved[3]) {
    res.reward = -1.0;
  }
  return res;
}

int ParticleTag::prey_moves(Coord px, Coord py,
                            std::array<std::pair<Coord, Coord>, 8>& out) const noexcept {
  const Coord hi = config_.arena_width - 1;
  int n = 0;
  for (Coord dx = -1; dx <= 1; ++dx) {
    for (Coord dy = -1; dy <= 1; ++dy) {
      if (dx == 0 && dy == 0) continue;
      const Coord nx = px + dx;
      const Coord ny = py + dy;
      if (nx < 0 || ny < 0 || nx > hi || ny > hi) continue;
      out[static_cast<std::size_t>(n++)] = {nx, ny};
    }
  }
  return n;
}

TransitionOutcome ParticleTag::step(const GlobalState& x, const JointAction& action,
                                    Rng& rng) const {
  check_state(x);
  auto res = resolve_predators(x, action);
  if (res.tagged) return {res.moved, res.reward, true};
  std::array<std::pair<Coord, Coord>, 8> moves;
  const int n = prey_moves(x[4], x[5], moves);
  std::uniform_int_distribution<int> pick(0, n - 1);
  const auto [nx, ny] = moves[static_cast<std::size_t>(pick(rng))];
  res.moved[4] = nx;
  res.moved[5] = ny;
  return {res.moved, res.reward, false};
}

void ParticleTag::transition_distribution(const GlobalState& x, const JointAction& action,
                                          std::vector<TransitionEntry>& out) const {
  check_state(x);
  out.clear();
  const auto res = resolve_predators(x, action);
  if (res.tagged) {
    out.push_back({res.moved, true, 1.0, res.reward});
    return;
  }
  std::array<std::pair<Coord, Coord>, 8> moves;
  const int n = prey_moves(x[4], x[5], moves);
  const double p = 1.0 / n;
  for (int k = 0; k < n; ++k) {
    GlobalState next = res.moved;
    next[4] = moves[static_cast<std::size_t>(k)].first;
    next[5] = moves[static_cast<std::size_t>(k)].second;
    out.push_back({next, false, p, res.reward});
  }
}

std::vector<GlobalState> enumerate_states(const EnvConfig& config) {
  const ParticleTag env(config);
  std::vector<GlobalState> states;
  states.reserve(env.state_count());
  for (std::size_t i = 0; i < env.state_count(); ++i) states.push_back(env.state_at(i));
  return states;
}

}  // namespace etm
