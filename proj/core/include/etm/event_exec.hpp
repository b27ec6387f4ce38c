#pragma once

// Self-triggered state sharing: agents act on a shared last-known joint state
// and broadcast their own block only when it drifts beyond a state-dependent
// threshold.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "etm/mmdp.hpp"
#include "etm/planner.hpp"
#include "etm/surrogate.hpp"
#include "etm/svr.hpp"

namespace etm {

enum class TriggerKind { kFullComm, kExact, kSvr, kNever };

std::string_view to_string(TriggerKind kind);
/// Accepts "full-comm", "exact", "svr", "never".
TriggerKind parse_trigger_kind(std::string_view name);

/// Maps the last known state to the deviation an agent may accumulate
/// silently. Cheap to copy; shares its evaluator.
class TriggerPolicy {
 public:
  using Evaluator = std::function<double(const GlobalState&)>;

  /// Threshold -inf: every agent transmits at every step.
  static TriggerPolicy full_comm();
  /// Threshold +inf: nobody ever transmits.
  static TriggerPolicy never();
  /// Gamma_alpha of the exact surrogate.
  static TriggerPolicy exact(std::shared_ptr<const ExactSurrogate> surrogate);
  /// f(x) - kappa of a fitted model, memoised per state when env is enumerable.
  static TriggerPolicy svr(const Mmdp& env, SvrThreshold threshold);
  static TriggerPolicy custom(TriggerKind kind, double alpha, Evaluator evaluator);

  TriggerKind kind() const noexcept { return kind_; }
  double alpha() const noexcept { return alpha_; }
  double threshold(const GlobalState& xhat) const { return evaluator_(xhat); }

 private:
  TriggerPolicy(TriggerKind kind, double alpha, Evaluator evaluator)
      : kind_(kind), alpha_(alpha), evaluator_(std::move(evaluator)) {}

  TriggerKind kind_;
  double alpha_;
  Evaluator evaluator_;
};

struct RunSettings {
  double gamma = 0.97;
  int step_cap = 200;
  /// Keep (t, agent) for every transmission in the records.
  bool record_triggers = false;
};

struct EpisodeRecord {
  double discounted_return = 0.0;
  double total_reward = 0.0;
  int length = 0;
  bool tagged = false;
  std::vector<int> messages;
  std::vector<std::pair<int, int>> triggered_steps;

  int total_messages() const;
};

/// Everything needed to audit one step after the fact.
struct StepTrace {
  int t = 0;
  GlobalState state;
  GlobalState xhat_prev;
  double threshold = 0.0;
  std::vector<bool> triggered;
  /// Each agent's copy of the last known state after communication.
  std::vector<GlobalState> copies;
  JointAction action;
};

struct EpisodeTrace {
  std::vector<StepTrace> steps;
};

EpisodeRecord run_episode(const Mmdp& env, const PolicyTable& policy, const TriggerPolicy& trigger,
                          const GlobalState& x0, Rng& rng, const RunSettings& settings,
                          EpisodeTrace* trace = nullptr);

struct BatchSummary {
  std::size_t games = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_length = 0.0;
  double std_length = 0.0;
  double mean_messages = 0.0;
  double std_messages = 0.0;
  /// Total messages over total steps.
  double msg_rate = 0.0;
};

struct BatchResult {
  std::vector<EpisodeRecord> episodes;
  BatchSummary summary;
};

BatchSummary summarize(std::span<const EpisodeRecord> episodes);

/// Game g draws its start state uniformly (then plays) from the stream
/// derive_seed(seed, g), so equal seeds pair games across triggers.
BatchResult run_batch(const Mmdp& env, const PolicyTable& policy, const TriggerPolicy& trigger,
                      std::size_t n_games, std::uint64_t seed, const RunSettings& settings);

/// As run_batch but every game starts from x0.
BatchResult run_batch_from(const Mmdp& env, const PolicyTable& policy, const TriggerPolicy& trigger,
                           const GlobalState& x0, std::size_t n_games, std::uint64_t seed,
                           const RunSettings& settings);

enum class ViolationKind { kCopiesDiverge, kUnsoundSilence, kStaleBroadcast };

struct Violation {
  int t = 0;
  int agent = -1;
  ViolationKind kind = ViolationKind::kCopiesDiverge;
};

struct PropositionReport {
  bool ok = true;
  std::vector<Violation> violations;
};

/// Audits (a) identical copies of the last known state at every step and
/// (b) that every silent agent's block deviation from the previous last
/// known state was within the threshold. A triggering agent's block must
/// match the true state in every copy. Thresholds are recomputed from the
/// trigger when one is supplied, otherwise taken from the trace.
PropositionReport check_proposition(const EpisodeTrace& trace, const AgentBlockMap& blocks,
                                    const TriggerPolicy* trigger = nullptr);

/// V*(x0) - alpha gamma / (1 - gamma).
double theorem1_bound(double v_star_x0, double alpha, double gamma);
/// Same bound with the geometric series summed from k = 0: alpha / (1 - gamma).
double theorem1_bound_from_zero(double v_star_x0, double alpha, double gamma);
/// (alpha + eps_hi (iota - alpha)) gamma / (1 - gamma). Throws if alpha > iota.
double corollary1_delta(double alpha, double eps_hi, double iota, double gamma);
double corollary1_delta_from_zero(double alpha, double eps_hi, double iota, double gamma);

struct BoundReport {
  double alpha = 0.0;
  double gamma = 0.0;
  double iota = 0.0;
  double eps_hi = 0.0;
  double theorem1 = 0.0;
  double theorem1_from_zero = 0.0;
  double delta = 0.0;
  double delta_from_zero = 0.0;
};

BoundReport make_bound_report(double v_star_x0, double alpha, double gamma, double iota, double eps_hi);

/// game_id,alpha,trigger_kind,return,length,messages,msg_rate
void write_episodes_csv(const std::filesystem::path& path, std::span<const EpisodeRecord> episodes,
                        double alpha, TriggerKind kind);

struct SummaryRow {
  double alpha = 0.0;
  BatchSummary summary;
  /// NaN renders as an empty cell.
  double eps_hi = 0.0;
  double delta = 0.0;
};

/// alpha,mean_return,std_return,mean_length,std_length,mean_msgs,std_msgs,msg_rate,eps_hi,delta
void write_summary_csv(const std::filesystem::path& path, std::span<const SummaryRow> rows);

}  // namespace etm
