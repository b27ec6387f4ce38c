#include "etm/event_exec.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>

#include "etm/error.hpp"
#include "etm/parallel.hpp"
#include "etm/text.hpp"

namespace etm {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_settings(const RunSettings& s) {
  if (!(s.gamma > 0.0 && s.gamma < 1.0)) throw Error(ErrorCode::kInvalidArgument, "gamma must lie in (0, 1)");
  if (s.step_cap < 1) throw Error(ErrorCode::kInvalidArgument, "step_cap must be >= 1");
}

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorCode::kInvalidArgument, "gamma must lie in (0, 1)");
}

void copy_block(GlobalState& dst, const GlobalState& src, const ComponentRange& r) {
  for (std::size_t c = r.begin; c < r.end; ++c) dst[c] = src[c];
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (const double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string cell(double v) { return std::isnan(v) ? std::string() : format_double(v); }

}  // namespace

std::string_view to_string(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::kFullComm: return "full-comm";
    case TriggerKind::kExact: return "exact";
    case TriggerKind::kSvr: return "svr";
    case TriggerKind::kNever: return "never";
  }
  return "unknown";
}

TriggerKind parse_trigger_kind(std::string_view name) {
  if (name == "full-comm") return TriggerKind::kFullComm;
  if (name == "exact") return TriggerKind::kExact;
  if (name == "svr") return TriggerKind::kSvr;
  if (name == "never") return TriggerKind::kNever;
  throw Error(ErrorCode::kInvalidArgument, "unknown trigger kind '" + std::string(name) + "'");
}

TriggerPolicy TriggerPolicy::full_comm() {
  return {TriggerKind::kFullComm, 0.0, [](const GlobalState&) { return -kInf; }};
}

TriggerPolicy TriggerPolicy::never() {
  return {TriggerKind::kNever, 0.0, [](const GlobalState&) { return kInf; }};
}

TriggerPolicy TriggerPolicy::exact(std::shared_ptr<const ExactSurrogate> surrogate) {
  if (!surrogate) throw Error(ErrorCode::kInvalidArgument, "exact trigger needs a surrogate");
  const double alpha = surrogate->alpha();
  return {TriggerKind::kExact, alpha,
          [s = std::move(surrogate)](const GlobalState& x) { return static_cast<double>((*s)(x)); }};
}

TriggerPolicy TriggerPolicy::svr(const Mmdp& env, SvrThreshold threshold) {
  auto shared = std::make_shared<const SvrThreshold>(std::move(threshold));
  if (!env.is_enumerable()) {
    return {TriggerKind::kSvr, 0.0, [shared](const GlobalState& x) { return (*shared)(x); }};
  }
  struct Memo {
    std::size_t n;
    std::unique_ptr<std::atomic<double>[]> values;
  };
  const std::size_t n = env.state_count();
  auto memo = std::make_shared<Memo>(Memo{n, std::make_unique<std::atomic<double>[]>(n)});
  for (std::size_t i = 0; i < n; ++i) memo->values[i].store(std::numeric_limits<double>::quiet_NaN());
  return {TriggerKind::kSvr, 0.0, [shared, memo, &env](const GlobalState& x) {
            const std::size_t s = env.state_index(x);
            double v = memo->values[s].load(std::memory_order_relaxed);
            if (std::isnan(v)) {
              v = (*shared)(x);
              memo->values[s].store(v, std::memory_order_relaxed);
            }
            return v;
          }};
}

TriggerPolicy TriggerPolicy::custom(TriggerKind kind, double alpha, Evaluator evaluator) {
  if (!evaluator) throw Error(ErrorCode::kInvalidArgument, "custom trigger needs an evaluator");
  return {kind, alpha, std::move(evaluator)};
}

int EpisodeRecord::total_messages() const {
  int n = 0;
  for (const int m : messages) n += m;
  return n;
}

EpisodeRecord run_episode(const Mmdp& env, const PolicyTable& policy, const TriggerPolicy& trigger,
                          const GlobalState& x0, Rng& rng, const RunSettings& settings,
                          EpisodeTrace* trace) {
  check_settings(settings);
  if (x0.dim() != env.state_dim() || !env.bounds().contains(x0))
    throw Error(ErrorCode::kInvalidArgument, "start state " + to_string(x0) + " is not a valid state");
  if (policy.state_count() != env.state_count())
    throw Error(ErrorCode::kDimensionMismatch, "policy does not cover the environment's states");

  const std::size_t n = env.agent_count();
  const auto& blocks = env.blocks();
  EpisodeRecord rec;
  rec.messages.assign(n, 0);
  // Before the first step every agent's copy is x0 itself.
  std::vector<GlobalState> copies(n, x0);
  std::vector<double> thresholds(n);
  std::vector<bool> triggered(n);
  GlobalState x = x0;
  double discount = 1.0;

  for (int t = 0;; ++t) {
    const GlobalState xhat_prev = copies[0];
    for (std::size_t i = 0; i < n; ++i) {
      thresholds[i] = trigger.threshold(copies[i]);
      triggered[i] = static_cast<double>(block_distance(x, copies[i], i, blocks)) > thresholds[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!triggered[i]) continue;
      ++rec.messages[i];
      if (settings.record_triggers) rec.triggered_steps.emplace_back(t, static_cast<int>(i));
      for (auto& copy : copies) copy_block(copy, x, blocks.block(i));
    }
    for (auto& copy : copies)
      for (const auto& local : blocks.local_blocks()) copy_block(copy, x, local);

    JointAction action(n);
    for (std::size_t i = 0; i < n; ++i)
      action[i] = policy.agent_action(env.state_index(copies[i]), i);

    if (trace) trace->steps.push_back({t, x, xhat_prev, thresholds[0], triggered, copies, action});

    const auto out = env.step(x, action, rng);
    rec.discounted_return += discount * out.reward;
    rec.total_reward += out.reward;
    discount *= settings.gamma;
    rec.length = t + 1;
    if (out.terminal) {
      rec.tagged = true;
      break;
    }
    x = out.next_state;
    if (rec.length >= settings.step_cap) break;
  }
  return rec;
}

BatchSummary summarize(std::span<const EpisodeRecord> episodes) {
  BatchSummary s;
  s.games = episodes.size();
  std::vector<double> ret, len, msg;
  double total_msgs = 0.0, total_len = 0.0;
  for (const auto& e : episodes) {
    ret.push_back(e.discounted_return);
    len.push_back(e.length);
    msg.push_back(e.total_messages());
    total_msgs += e.total_messages();
    total_len += e.length;
  }
  s.mean_return = mean_of(ret);
  s.std_return = std_of(ret, s.mean_return);
  s.mean_length = mean_of(len);
  s.std_length = std_of(len, s.mean_length);
  s.mean_messages = mean_of(msg);
  s.std_messages = std_of(msg, s.mean_messages);
  s.msg_rate = total_len > 0.0 ? total_msgs / total_len : 0.0;
  return s;
}

namespace {

template <typename StartFn>
BatchResult run_games(const Mmdp& env, const PolicyTable& policy, const TriggerPolicy& trigger,
                      std::size_t n_games, std::uint64_t seed, const RunSettings& settings,
                      StartFn&& start) {
  check_settings(settings);
  if (n_games == 0) throw Error(ErrorCode::kInvalidArgument, "n_games must be >= 1");
  BatchResult r;
  r.episodes.resize(n_games);
  parallel_for(
      n_games,
      [&](std::size_t g) {
        Rng rng = make_rng(seed, g);
        const GlobalState x0 = start(rng);
        r.episodes[g] = run_episode(env, policy, trigger, x0, rng, settings);
      },
      16);
  r.summary = summarize(r.episodes);
  return r;
}

}  // namespace

BatchResult run_batch(const Mmdp& env, const PolicyTable& policy, const TriggerPolicy& trigger,
                      std::size_t n_games, std::uint64_t seed, const RunSettings& settings) {
  const std::size_t count = env.state_count();
  return run_games(env, policy, trigger, n_games, seed, settings, [&](Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    return env.state_at(pick(rng));
  });
}

BatchResult run_batch_from(const Mmdp& env, const PolicyTable& policy, const TriggerPolicy& trigger,
                           const GlobalState& x0, std::size_t n_games, std::uint64_t seed,
                           const RunSettings& settings) {
  return run_games(env, policy, trigger, n_games, seed, settings, [&](Rng&) { return x0; });
}

PropositionReport check_proposition(const EpisodeTrace& trace, const AgentBlockMap& blocks,
                                    const TriggerPolicy* trigger) {
  PropositionReport rep;
  const auto flag = [&](int t, int agent, ViolationKind kind) {
    rep.ok = false;
    rep.violations.push_back({t, agent, kind});
  };
  for (const auto& st : trace.steps) {
    for (std::size_t j = 1; j < st.copies.size(); ++j)
      if (!(st.copies[j] == st.copies[0])) flag(st.t, static_cast<int>(j), ViolationKind::kCopiesDiverge);
    const double thr = trigger ? trigger->threshold(st.xhat_prev) : st.threshold;
    for (std::size_t i = 0; i < st.triggered.size(); ++i) {
      const auto d = static_cast<double>(block_distance(st.state, st.xhat_prev, i, blocks));
      if (!st.triggered[i]) {
        if (d > thr) flag(st.t, static_cast<int>(i), ViolationKind::kUnsoundSilence);
        continue;
      }
      for (const auto& copy : st.copies)
        if (block_distance(st.state, copy, i, blocks) != 0) {
          flag(st.t, static_cast<int>(i), ViolationKind::kStaleBroadcast);
          break;
        }
    }
  }
  return rep;
}

double theorem1_bound(double v_star_x0, double alpha, double gamma) {
  check_gamma(gamma);
  return v_star_x0 - alpha * gamma / (1.0 - gamma);
}

double theorem1_bound_from_zero(double v_star_x0, double alpha, double gamma) {
  check_gamma(gamma);
  return v_star_x0 - alpha / (1.0 - gamma);
}

namespace {

double delta_numerator(double alpha, double eps_hi, double iota) {
  if (!(alpha >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must be >= 0");
  if (alpha > iota) throw Error(ErrorCode::kInvalidArgument, "alpha exceeds the suboptimality gap iota");
  if (!(eps_hi >= 0.0 && eps_hi <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "eps_hi must lie in [0, 1]");
  return alpha + eps_hi * (iota - alpha);
}

}  // namespace

double corollary1_delta(double alpha, double eps_hi, double iota, double gamma) {
  check_gamma(gamma);
  return delta_numerator(alpha, eps_hi, iota) * gamma / (1.0 - gamma);
}

double corollary1_delta_from_zero(double alpha, double eps_hi, double iota, double gamma) {
  check_gamma(gamma);
  return delta_numerator(alpha, eps_hi, iota) / (1.0 - gamma);
}

BoundReport make_bound_report(double v_star_x0, double alpha, double gamma, double iota, double eps_hi) {
  return {alpha,
          gamma,
          iota,
          eps_hi,
          theorem1_bound(v_star_x0, alpha, gamma),
          theorem1_bound_from_zero(v_star_x0, alpha, gamma),
          corollary1_delta(alpha, eps_hi, iota, gamma),
          corollary1_delta_from_zero(alpha, eps_hi, iota, gamma)};
}

void write_episodes_csv(const std::filesystem::path& path, std::span<const EpisodeRecord> episodes,
                        double alpha, TriggerKind kind) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "game_id,alpha,trigger_kind,return,length,messages,msg_rate\n";
  for (std::size_t g = 0; g < episodes.size(); ++g) {
    const auto& e = episodes[g];
    const int m = e.total_messages();
    out << g << ',' << format_double(alpha) << ',' << to_string(kind) << ','
        << format_double(e.discounted_return) << ',' << e.length << ',' << m << ','
        << format_double(static_cast<double>(m) / e.length) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

void write_summary_csv(const std::filesystem::path& path, std::span<const SummaryRow> rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "alpha,mean_return,std_return,mean_length,std_length,mean_msgs,std_msgs,msg_rate,eps_hi,delta\n";
  for (const auto& r : rows) {
    const auto& s = r.summary;
    out << format_double(r.alpha) << ',' << format_double(s.mean_return) << ','
        << format_double(s.std_return) << ',' << format_double(s.mean_length) << ','
        << format_double(s.std_length) << ',' << format_double(s.mean_messages) << ','
        << format_double(s.std_messages) << ',' << format_double(s.msg_rate) << ','
        << cell(r.eps_hi) << ',' << cell(r.delta) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace etm
