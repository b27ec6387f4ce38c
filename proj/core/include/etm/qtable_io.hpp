#pragma once

// Binary persistence of Q-tables and policy tables.
//
// Q-table layout (little-endian):
//   "ETMQ" | version u32 | arena_width u32 | n_agents u32 | action_count u32
//   | state_count u64 | gamma f64 | values f64[state_count * action_count]
// Policy layout (little-endian):
//   "ETMP" | version u32 | arena_width u32 | n_agents u32
//   | action_counts u32[n_agents] | state_count u64 | joint u32[state_count]

#include <cstdint>
#include <filesystem>

#include "etm/planner.hpp"

namespace etm {

inline constexpr std::uint32_t kQTableFormatVersion = 1;
inline constexpr std::uint32_t kPolicyFormatVersion = 1;

struct QTableFile {
  QTable table;
  std::uint32_t arena_width = 0;
  std::uint32_t n_agents = 0;
};

void write_qtable(const std::filesystem::path& path, const QTable& table,
                  std::uint32_t arena_width, std::uint32_t n_agents);
QTableFile read_qtable(const std::filesystem::path& path);

struct PolicyFile {
  PolicyTable policy;
  std::uint32_t arena_width = 0;
};

void write_policy(const std::filesystem::path& path, const PolicyTable& policy,
                  std::uint32_t arena_width);
PolicyFile read_policy(const std::filesystem::path& path);

}  // namespace etm
