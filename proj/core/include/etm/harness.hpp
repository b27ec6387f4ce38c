#pragma once

// Experiment pipeline: train -> surrogate -> fit -> bounds -> simulate -> report.
// Every stage reads its inputs from the artifact directory, checks them
// against the manifest and writes its outputs back with checksums.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "etm/event_exec.hpp"
#include "etm/particle_tag.hpp"
#include "etm/planner.hpp"

namespace etm {

inline constexpr const char* kToolVersion = "0.3.0";

/// SVR settings; either (rho, tau) or scikit-learn style (nu, C).
struct SvrSetting {
  std::optional<double> alpha;
  std::optional<double> rho;
  std::optional<double> tau;
  std::optional<double> nu;
  std::optional<double> c;
  /// Defaults to 1 / (dim * component variance) of the sample.
  std::optional<double> bandwidth;
  double tolerance = 1e-6;
  std::int64_t max_iterations = 1'000'000;
};

/// Published numbers the report prints next to ours.
struct ReferenceRow {
  double alpha = 0.0;
  double eps_hi = 0.0;
  std::optional<double> delta;
};

struct RunConfig {
  EnvConfig env;
  TrainConfig train;
  std::vector<double> alphas{0.0};
  std::size_t sample_size = 10'000;
  double beta = 1e-3;
  SvrSetting svr_defaults;
  std::vector<SvrSetting> svr_per_alpha;
  std::size_t n_games = 2000;
  std::uint64_t master_seed = 0;
  std::vector<TriggerKind> triggers{TriggerKind::kFullComm, TriggerKind::kExact, TriggerKind::kSvr};
  std::filesystem::path artifacts_dir = "artifacts";
  std::filesystem::path results_dir = "results";
  double reference_iota = 1.57;
  double reference_gamma = 0.97;
  std::vector<ReferenceRow> reference_rows;

  /// Throws kConfig on inconsistent values.
  void validate() const;
  /// Canonical JSON of every field (sorted keys, no whitespace).
  std::string canonical_json() const;
  std::string hash() const;
  /// Resolved (rho, tau, bandwidth-or-nullopt, tolerance, cap) for one alpha.
  SvrSetting svr_for(double alpha) const;
};

/// Parses the JSON config. Unknown keys are errors (kConfig).
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<double> alpha;
  std::optional<TriggerKind> trigger;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> games;
  std::optional<int> arena;
};

/// --alpha and --trigger narrow the sweep to one value.
void apply_overrides(RunConfig& config, const Overrides& overrides);

/// Seeds derived from master_seed; nothing else feeds randomness.
std::uint64_t training_seed(const RunConfig& config);
std::uint64_t sampling_seed(const RunConfig& config, double alpha);
std::uint64_t simulation_seed(const RunConfig& config);

struct StageResult {
  std::vector<std::filesystem::path> written;
  /// Human-readable per-item problems that did not abort the stage.
  std::vector<std::string> warnings;
};

StageResult cmd_train(const RunConfig& config);
StageResult cmd_surrogate(const RunConfig& config);
/// Fits every alpha; a non-converging alpha is recorded and the others still
/// run. Throws kNonConvergence afterwards if any alpha failed.
StageResult cmd_fit(const RunConfig& config);
StageResult cmd_bounds(const RunConfig& config);
StageResult cmd_simulate(const RunConfig& config);
StageResult cmd_report(const RunConfig& config);

/// File-name fragment for an alpha value, e.g. "a0.4".
std::string alpha_tag(double alpha);

}  // namespace etm
