#include "etm/mmdp.hpp"

#include <algorithm>
#include <cstdlib>
#include <ostream>
#include <sstream>

#include "etm/error.hpp"

namespace etm {

GlobalState::GlobalState(std::size_t dim) : dim_(dim) {
  if (dim > kMaxStateDim) {
    throw Error(ErrorCode::kInvalidArgument, "state dimension exceeds kMaxStateDim");
  }
}

GlobalState::GlobalState(std::initializer_list<Coord> values)
    : GlobalState(std::span<const Coord>(values.begin(), values.size())) {}

GlobalState::GlobalState(std::span<const Coord> values) : GlobalState(values.size()) {
  std::copy(values.begin(), values.end(), c_.begin());
}

bool operator==(const GlobalState& a, const GlobalState& b) noexcept {
  return a.dim_ == b.dim_ && std::equal(a.c_.begin(), a.c_.begin() + a.dim_, b.c_.begin());
}

std::strong_ordering operator<=>(const GlobalState& a, const GlobalState& b) noexcept {
  const auto sa = a.components();
  const auto sb = b.components();
  return std::lexicographical_compare_three_way(sa.begin(), sa.end(), sb.begin(), sb.end());
}

std::ostream& operator<<(std::ostream& os, const GlobalState& x) {
  os << '(';
  for (std::size_t i = 0; i < x.dim(); ++i) {
    if (i) os << ',';
    os << x[i];
  }
  return os << ')';
}

std::string to_string(const GlobalState& x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

StateBounds::StateBounds(std::vector<Coord> lower, std::vector<Coord> upper)
    : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() != upper_.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "bounds: lower/upper length differ");
  }
  for (std::size_t i = 0; i < lower_.size(); ++i) {
    if (lower_[i] > upper_[i]) throw Error(ErrorCode::kInvalidArgument, "bounds: empty range");
  }
}

bool StateBounds::contains(const GlobalState& x) const noexcept {
  if (x.dim() != dim()) return false;
  for (std::size_t i = 0; i < dim(); ++i) {
    if (x[i] < lower_[i] || x[i] > upper_[i]) return false;
  }
  return true;
}

Coord StateBounds::diameter() const noexcept {
  Coord d = 0;
  for (std::size_t i = 0; i < dim(); ++i) d = std::max(d, upper_[i] - lower_[i]);
  return d;
}

AgentBlockMap::AgentBlockMap(std::size_t dim, std::vector<ComponentRange> communicated,
                             std::vector<ComponentRange> local)
    : dim_(dim), communicated_(std::move(communicated)), local_(std::move(local)) {
  std::vector<int> owner(dim, 0);
  auto mark = [&](const ComponentRange& r) {
    if (r.begin >= r.end || r.end > dim) {
      throw Error(ErrorCode::kInvalidArgument, "block map: range out of bounds");
    }
    for (std::size_t i = r.begin; i < r.end; ++i) {
      if (owner[i]++ != 0) throw Error(ErrorCode::kInvalidArgument, "block map: overlapping blocks");
    }
  };
  for (const auto& r : communicated_) mark(r);
  for (const auto& r : local_) mark(r);
  if (std::find(owner.begin(), owner.end(), 0) != owner.end()) {
    throw Error(ErrorCode::kInvalidArgument, "block map: blocks do not cover the state");
  }
}

const ComponentRange& AgentBlockMap::block(std::size_t agent) const {
  if (agent >= communicated_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "invalid agent id " + std::to_string(agent));
  }
  return communicated_[agent];
}

Coord sup_distance(const GlobalState& a, const GlobalState& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "sup_distance: dimension mismatch");
  }
  return block_distance(a, b, ComponentRange{0, a.dim()});
}

Coord block_distance(const GlobalState& a, const GlobalState& b, const ComponentRange& block) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "block_distance: dimension mismatch");
  }
  if (block.end > a.dim()) throw Error(ErrorCode::kInvalidArgument, "block outside state");
  Coord d = 0;
  for (std::size_t i = block.begin; i < block.end; ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

Coord block_distance(const GlobalState& a, const GlobalState& b, std::size_t agent,
                     const AgentBlockMap& map) {
  return block_distance(a, b, map.block(agent));
}

JointAction::JointAction(std::initializer_list<int> ids) : JointAction(ids.size()) {
  std::copy(ids.begin(), ids.end(), ids_.begin());
}

JointAction::JointAction(std::size_t agents) : n_(agents) {
  if (agents > kMaxAgents) throw Error(ErrorCode::kInvalidArgument, "too many agents");
}

bool operator==(const JointAction& a, const JointAction& b) noexcept {
  return a.n_ == b.n_ && std::equal(a.ids_.begin(), a.ids_.begin() + a.n_, b.ids_.begin());
}

std::size_t Mmdp::joint_action_count() const noexcept {
  std::size_t n = 1;
  for (int c : action_counts()) n *= static_cast<std::size_t>(c);
  return n;
}

bool Mmdp::valid_action(const JointAction& action) const noexcept {
  const auto counts = action_counts();
  if (action.size() != counts.size()) return false;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (action[i] < 0 || action[i] >= counts[i]) return false;
  }
  return true;
}

std::size_t Mmdp::encode_action(const JointAction& action) const {
  if (!valid_action(action)) throw Error(ErrorCode::kInvalidArgument, "invalid joint action");
  std::size_t index = 0;
  const auto counts = action_counts();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    index = index * static_cast<std::size_t>(counts[i]) + static_cast<std::size_t>(action[i]);
  }
  return index;
}

JointAction Mmdp::decode_action(std::size_t index) const {
  if (index >= joint_action_count()) {
    throw Error(ErrorCode::kInvalidArgument, "joint action index out of range");
  }
  const auto counts = action_counts();
  JointAction action(counts.size());
  for (std::size_t i = counts.size(); i-- > 0;) {
    const auto c = static_cast<std::size_t>(counts[i]);
    action[i] = static_cast<int>(index % c);
    index /= c;
  }
  return action;
}

std::size_t Mmdp::state_count() const {
  throw Error(ErrorCode::kUnsupported, "state space is not enumerable");
}

std::size_t Mmdp::state_index(const GlobalState&) const {
  throw Error(ErrorCode::kUnsupported, "state space is not enumerable");
}

GlobalState Mmdp::state_at(std::size_t) const {
  throw Error(ErrorCode::kUnsupported, "state space is not enumerable");
}

BoxIndexer::BoxIndexer(const StateBounds& bounds)
    : lower_(bounds.dim()), extent_(bounds.dim()), stride_(bounds.dim()) {
  count_ = 1;
  for (std::size_t i = bounds.dim(); i-- > 0;) {
    lower_[i] = bounds.lower(i);
    extent_[i] = static_cast<std::size_t>(bounds.upper(i) - bounds.lower(i) + 1);
    stride_[i] = count_;
    count_ *= extent_[i];
  }
}

std::size_t BoxIndexer::index(const GlobalState& x) const noexcept {
  std::size_t index = 0;
  for (std::size_t i = 0; i < lower_.size(); ++i) {
    index += static_cast<std::size_t>(x[i] - lower_[i]) * stride_[i];
  }
  return index;
}

GlobalState BoxIndexer::state(std::size_t index) const noexcept {
  GlobalState x(lower_.size());
  for (std::size_t i = 0; i < lower_.size(); ++i) {
    x[i] = lower_[i] + static_cast<Coord>(index / stride_[i]);
    index %= stride_[i];
  }
  return x;
}

}  // namespace etm
