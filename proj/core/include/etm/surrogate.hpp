#pragma once

// Exact robustness surrogate: the largest sup-norm radius around a state
// within which the action chosen at the centre stays alpha-close to optimal
// at every state of the ball.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "etm/mmdp.hpp"
#include "etm/planner.hpp"

namespace etm {

struct SurrogateSample {
  GlobalState x;
  int gamma = 0;
  double alpha = 0.0;

  friend bool operator==(const SurrogateSample&, const SurrogateSample&) = default;
};

struct SampleSet {
  std::vector<SurrogateSample> samples;
  double alpha = 0.0;
  std::uint64_t source_seed = 0;

  std::size_t size() const noexcept { return samples.size(); }
};

/// Visits the in-bounds states at sup-distance exactly d >= 1 from x, in
/// lexicographic order. Stops early when fn returns false; returns whether
/// the walk completed.
template <typename Fn>
bool for_each_in_shell(const GlobalState& x, int d, const StateBounds& bounds, Fn&& fn) {
  const std::size_t dim = x.dim();
  GlobalState lo(dim), hi(dim), cur(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    lo[i] = std::max(bounds.lower(i), x[i] - d);
    hi[i] = std::min(bounds.upper(i), x[i] + d);
    cur[i] = lo[i];
  }
  for (;;) {
    bool on_shell = false;
    for (std::size_t i = 0; i < dim; ++i) {
      if (cur[i] - x[i] == d || x[i] - cur[i] == d) {
        on_shell = true;
        break;
      }
    }
    if (on_shell && !fn(static_cast<const GlobalState&>(cur))) return false;
    std::size_t i = dim;
    for (;;) {
      if (i == 0) return true;
      --i;
      if (cur[i] < hi[i]) {
        ++cur[i];
        break;
      }
      cur[i] = lo[i];
    }
  }
}

/// The shell {x' in bounds : ||x - x'||_inf = d}; requires d >= 1.
std::vector<GlobalState> shell(const GlobalState& x, int d, const StateBounds& bounds);

/// Gamma_alpha(x) by shell expansion, capped at the arena diameter.
int gamma_alpha(const Mmdp& env, const QTable& q, const PolicyTable& policy,
                const GlobalState& x, double alpha);

/// Gamma_alpha over a whole state space, computed on demand and memoised.
/// Holds non-owning references: env, q and policy must outlive it.
class ExactSurrogate {
 public:
  ExactSurrogate(const Mmdp& env, const QTable& q, const PolicyTable& policy, double alpha);

  double alpha() const noexcept { return alpha_; }
  int operator()(const GlobalState& x) const;
  int at_index(std::size_t s) const;
  /// Evaluates without touching the memo.
  int compute(const GlobalState& x) const;
  /// Fills the memo for every state.
  void precompute_all() const;

 private:
  const Mmdp& env_;
  const QTable& q_;
  const PolicyTable& policy_;
  double alpha_;
  std::vector<double> v_;
  std::unique_ptr<std::atomic<std::int16_t>[]> memo_;
};

/// Uniform sample (without replacement) of S states, each labelled with
/// Gamma_alpha. Deterministic given seed. Throws if S exceeds the number of
/// non-terminal states.
SampleSet sample_surrogates(const Mmdp& env, const QTable& q, const PolicyTable& policy,
                            double alpha, std::size_t sample_size, std::uint64_t seed);

/// CSV with header x1..xn,gamma,alpha; one row per sample in sample order.
void write_samples_csv(const std::filesystem::path& path, const SampleSet& set);
SampleSet read_samples_csv(const std::filesystem::path& path);

}  // namespace etm
