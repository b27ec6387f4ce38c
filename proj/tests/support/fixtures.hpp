#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "etm/error.hpp"
#include "etm/particle_tag.hpp"
#include "etm/planner.hpp"

namespace etm::testing {

/// Solved W-wide particle tag, built once per process and shared read-only.
struct SolvedTag {
  ParticleTag env;
  QTable q;
  PolicyTable policy;
  double iota;

  explicit SolvedTag(int width, double gamma = 0.97)
      : env(EnvConfig{.arena_width = width}),
        q(value_iteration(env, gamma, 1e-10)),
        policy(greedy_policy(q, env)),
        iota(suboptimality_gap(q)) {}
};

inline const SolvedTag& solved_w3() {
  static const SolvedTag tag(3);
  return tag;
}

inline const SolvedTag& solved_w5() {
  static const SolvedTag tag(5, 0.97);
  return tag;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("etm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename Fn>
ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an etm::Error";
  return ErrorCode::kIo;
}

}  // namespace etm::testing
