#include "etm/surrogate.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>

#include "etm/error.hpp"
#include "etm/parallel.hpp"
#include "etm/rng.hpp"
#include "etm/text.hpp"

namespace etm {

namespace {

// Expands shells around x until some x' has V(x') - Q(x', U) > alpha. The
// gap is formed first so alpha = iota admits every state exactly.
template <typename ValueAt>
int expand_shells(const Mmdp& env, const QTable& q, std::size_t action, const GlobalState& x,
                  double alpha, ValueAt&& value_at) {
  const StateBounds& bounds = env.bounds();
  const int diameter = bounds.diameter();
  for (int d = 1; d <= diameter; ++d) {
    const bool clean = for_each_in_shell(x, d, bounds, [&](const GlobalState& xp) {
      const std::size_t s = env.state_index(xp);
      return !(value_at(s) - q.at(s, action) > alpha);
    });
    if (!clean) return d - 1;
  }
  return diameter;
}

void check_query(const Mmdp& env, const QTable& q, const PolicyTable& policy, const GlobalState& x,
                 double alpha) {
  if (!(alpha >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must be >= 0");
  if (!env.bounds().contains(x)) throw Error(ErrorCode::kInvalidArgument, "state outside the state space");
  if (q.state_count() != env.state_count() || policy.state_count() != env.state_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "tables do not match the environment");
  }
}

}  // namespace

std::vector<GlobalState> shell(const GlobalState& x, int d, const StateBounds& bounds) {
  if (d < 1) throw Error(ErrorCode::kInvalidArgument, "shell radius must be >= 1");
  if (x.dim() != bounds.dim()) throw Error(ErrorCode::kDimensionMismatch, "shell: dimension mismatch");
  std::vector<GlobalState> out;
  for_each_in_shell(x, d, bounds, [&](const GlobalState& xp) {
    out.push_back(xp);
    return true;
  });
  return out;
}

int gamma_alpha(const Mmdp& env, const QTable& q, const PolicyTable& policy, const GlobalState& x,
                double alpha) {
  check_query(env, q, policy, x, alpha);
  const std::size_t action = policy.joint_index(env.state_index(x));
  return expand_shells(env, q, action, x, alpha, [&](std::size_t s) { return v_star(q, s); });
}

ExactSurrogate::ExactSurrogate(const Mmdp& env, const QTable& q, const PolicyTable& policy,
                               double alpha)
    : env_(env), q_(q), policy_(policy), alpha_(alpha) {
  if (!(alpha >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must be >= 0");
  const std::size_t n = env.state_count();
  if (q.state_count() != n || policy.state_count() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "tables do not match the environment");
  }
  v_.resize(n);
  for (std::size_t s = 0; s < n; ++s) v_[s] = v_star(q, s);
  memo_ = std::make_unique<std::atomic<std::int16_t>[]>(n);
  for (std::size_t s = 0; s < n; ++s) memo_[s].store(-1, std::memory_order_relaxed);
}

int ExactSurrogate::compute(const GlobalState& x) const {
  const std::size_t action = policy_.joint_index(env_.state_index(x));
  return expand_shells(env_, q_, action, x, alpha_, [&](std::size_t s) { return v_[s]; });
}

int ExactSurrogate::at_index(std::size_t s) const {
  auto& slot = memo_[s];
  std::int16_t cached = slot.load(std::memory_order_relaxed);
  if (cached < 0) {
    cached = static_cast<std::int16_t>(compute(env_.state_at(s)));
    slot.store(cached, std::memory_order_relaxed);
  }
  return cached;
}

int ExactSurrogate::operator()(const GlobalState& x) const { return at_index(env_.state_index(x)); }

void ExactSurrogate::precompute_all() const {
  parallel_for(env_.state_count(), [&](std::size_t s) { at_index(s); }, 128);
}

SampleSet sample_surrogates(const Mmdp& env, const QTable& q, const PolicyTable& policy,
                            double alpha, std::size_t sample_size, std::uint64_t seed) {
  if (sample_size < 1) throw Error(ErrorCode::kInvalidArgument, "sample size must be >= 1");
  const std::size_t n = env.state_count();
  if (sample_size > n) {
    throw Error(ErrorCode::kInvalidArgument, "sample size exceeds the number of non-terminal states");
  }
  Rng rng(derive_seed(seed, 0x5a));
  std::vector<std::size_t> picked;
  picked.reserve(sample_size);
  // Selection sampling: ascending indices, each subset equally likely.
  for (std::size_t i = 0; i < n && picked.size() < sample_size; ++i) {
    std::uniform_int_distribution<std::size_t> u(0, n - i - 1);
    if (u(rng) < sample_size - picked.size()) picked.push_back(i);
  }

  const ExactSurrogate surrogate(env, q, policy, alpha);
  SampleSet set;
  set.alpha = alpha;
  set.source_seed = seed;
  set.samples.resize(sample_size);
  parallel_for(sample_size, [&](std::size_t i) {
    const GlobalState x = env.state_at(picked[i]);
    set.samples[i] = {x, surrogate.compute(x), alpha};
  }, 32);
  return set;
}

void write_samples_csv(const std::filesystem::path& path, const SampleSet& set) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot open for writing: " + path.string());
  const std::size_t dim = set.samples.empty() ? 6 : set.samples.front().x.dim();
  for (std::size_t i = 0; i < dim; ++i) out << 'x' << (i + 1) << ',';
  out << "gamma,alpha\n";
  for (const auto& s : set.samples) {
    for (std::size_t i = 0; i < s.x.dim(); ++i) out << s.x[i] << ',';
    out << s.gamma << ',' << format_double(s.alpha) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

SampleSet read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "sample set not found: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kIo, "empty sample file: " + path.string());
  const auto header = split(line, ',');
  if (header.size() < 3 || header[header.size() - 2] != "gamma" || header.back() != "alpha") {
    throw Error(ErrorCode::kIo, "unexpected sample header in " + path.string());
  }
  const std::size_t dim = header.size() - 2;
  SampleSet set;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != dim + 2) {
      throw Error(ErrorCode::kIo, path.string() + ":" + std::to_string(row) + ": wrong field count");
    }
    SurrogateSample s;
    s.x = GlobalState(dim);
    bool ok = true;
    for (std::size_t i = 0; i < dim; ++i) ok &= parse_number(fields[i], s.x[i]);
    ok &= parse_number(fields[dim], s.gamma);
    ok &= parse_number(fields[dim + 1], s.alpha);
    if (!ok) throw Error(ErrorCode::kIo, path.string() + ":" + std::to_string(row) + ": bad number");
    set.alpha = s.alpha;
    set.samples.push_back(s);
  }
  return set;
}

}  // namespace etm
