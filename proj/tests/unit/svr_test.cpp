#include <cmath>
#include <cstring>
#include <fstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "etm/risk_bounds.hpp"
#include "etm/rng.hpp"
#include "etm/surrogate.hpp"
#include "etm/svr.hpp"
#include "fixtures.hpp"

namespace etm {
namespace {

using testing::error_code_of;
using testing::scratch_dir;

struct CorpusInstance {
  std::string name;
  std::vector<GlobalState> xs;
  std::vector<double> ys;
  double rho, tau, bandwidth, objective, kappa;
};

std::vector<CorpusInstance> load_corpus() {
  std::ifstream in(std::string(ETM_TEST_DATA_DIR) + "/svr_corpus.json");
  const auto doc = nlohmann::json::parse(in);
  std::vector<CorpusInstance> out;
  for (const auto& j : doc.at("instances")) {
    CorpusInstance c;
    c.name = j.at("name");
    for (const auto& row : j.at("xs")) {
      const auto v = row.get<std::vector<Coord>>();
      c.xs.emplace_back(std::span<const Coord>(v));
    }
    c.ys = j.at("ys").get<std::vector<double>>();
    c.rho = j.at("rho");
    c.tau = j.at("tau");
    c.bandwidth = j.at("bandwidth");
    c.objective = j.at("objective");
    c.kappa = j.at("kappa");
    out.push_back(std::move(c));
  }
  return out;
}

SvrParams params(double rho, double tau, double bandwidth) {
  SvrParams p;
  p.rho = rho;
  p.tau = tau;
  p.kernel.bandwidth = bandwidth;
  return p;
}

std::vector<GlobalState> random_states(std::size_t n, std::uint64_t seed, Coord hi = 4) {
  Rng rng(seed);
  std::uniform_int_distribution<Coord> coord(0, hi);
  std::vector<GlobalState> xs;
  for (std::size_t k = 0; k < n; ++k) {
    GlobalState x(6);
    for (std::size_t i = 0; i < 6; ++i) x[i] = coord(rng);
    xs.push_back(x);
  }
  return xs;
}

SampleSet as_sample_set(const std::vector<GlobalState>& xs, const std::vector<double>& ys) {
  SampleSet set;
  for (std::size_t i = 0; i < xs.size(); ++i)
    set.samples.push_back({xs[i], static_cast<int>(std::lround(ys[i])), 0.0});
  return set;
}

TEST(FitSvr, MatchesQuadraticProgramOracleOnCorpus) {
  const auto corpus = load_corpus();
  ASSERT_GE(corpus.size(), 10U);
  for (const auto& c : corpus) {
    ASSERT_LE(c.xs.size(), 20U);
    const auto fit = fit_svr(c.xs, c.ys, params(c.rho, c.tau, c.bandwidth));
    const double obj = primal_objective(fit.model, c.xs, c.ys);
    EXPECT_LE(obj, c.objective + 1e-4) << c.name;
    EXPECT_NEAR(obj, c.objective, 1e-4) << c.name;
    // Strong duality: the program optimum is the negated dual minimum.
    EXPECT_NEAR(-fit.diagnostics.dual_objective, c.objective, 1e-4) << c.name;
    EXPECT_GE(fit.model.kappa, 0.0);
    EXPECT_LE(fit.model.support.size(), c.xs.size());
    EXPECT_LE(fit.diagnostics.kkt_violation, 1e-6);
  }
}

TEST(FitSvr, ConstantTargetsGiveAZeroTube) {
  const auto xs = random_states(40, 5);
  const std::vector<double> ys(xs.size(), 3.0);
  for (const auto& [rho, tau] : {std::pair{0.05, 1.0}, std::pair{0.01, 1.0}, std::pair{0.2, 0.01}}) {
    const auto fit = fit_svr(xs, ys, params(rho, tau, 0.2));
    EXPECT_EQ(fit.model.kappa, 0.0);
    EXPECT_EQ(count_outliers(fit.model, as_sample_set(xs, ys)), 0U);
    for (const auto& x : random_states(20, 6)) EXPECT_NEAR(fit.model.predict(x), 3.0, 1e-12);
  }
}

TEST(FitSvr, RejectsBadInputs) {
  const auto xs = random_states(5, 1);
  const std::vector<double> ys(5, 1.0);
  EXPECT_EQ(error_code_of([&] { fit_svr(std::span(xs).first(1), std::span(ys).first(1), SvrParams{}); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_code_of([&] { fit_svr(xs, ys, params(0.0, 1.0, 1.0)); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_code_of([&] { fit_svr(xs, ys, params(0.1, -1.0, 1.0)); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_code_of([&] { fit_svr(xs, ys, params(0.1, 1.0, 0.0)); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_code_of([&] { fit_svr(xs, std::span(ys).first(4), SvrParams{}); }),
            ErrorCode::kDimensionMismatch);
}

TEST(FitSvr, IterationCapRaisesWithBestIterate) {
  const auto corpus = load_corpus();
  const auto& c = corpus.back();
  auto p = params(c.rho, c.tau, c.bandwidth);
  p.max_iterations = 1;
  try {
    fit_svr(c.xs, c.ys, p);
    FAIL() << "expected non-convergence";
  } catch (const SvrNonConvergence& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonConvergence);
    EXPECT_GT(e.residual(), p.tolerance);
    EXPECT_EQ(e.best().diagnostics.iterations, 1);
    EXPECT_TRUE(std::isfinite(e.best().model.predict(c.xs[0])));
  }
}

TEST(FitSvr, DeterministicGivenInputs) {
  const auto xs = random_states(200, 8);
  std::vector<double> ys;
  for (const auto& x : xs) ys.push_back(std::min(4, std::abs(x[0] - x[4]) + (x[1] > 2 ? 1 : 0)));
  const auto a = fit_svr(xs, ys, params(0.02, 0.05, 0.1));
  const auto b = fit_svr(xs, ys, params(0.02, 0.05, 0.1));
  EXPECT_EQ(a.model.coefficients, b.model.coefficients);
  EXPECT_EQ(a.model.bias, b.model.bias);
  EXPECT_EQ(a.model.kappa, b.model.kappa);
}

TEST(ProgramParams, FromNuAndC) {
  const auto p = program_params_from_nu_c(0.1, 10.0, 2000);
  EXPECT_DOUBLE_EQ(p.rho, 1.0 / 200.0);
  EXPECT_DOUBLE_EQ(p.tau, 1.0 / 4000.0);
  EXPECT_EQ(error_code_of([] { program_params_from_nu_c(0.0, 1.0, 10); }), ErrorCode::kInvalidArgument);
}

TEST(Predict, EmptySupportIsTheBias) {
  SvrModel m;
  m.bias = 1.75;
  EXPECT_EQ(predict(m, {0, 1, 2, 3, 4, 5}), 1.75);
}

TEST(Predict, SingleSupportVectorAtTheQuery) {
  SvrModel m;
  m.kernel.bandwidth = 0.3;
  m.support = {{1, 2, 3, 4, 0, 1}};
  m.coefficients = {0.8};
  m.bias = -0.1;
  EXPECT_DOUBLE_EQ(predict(m, {1, 2, 3, 4, 0, 1}), 0.7);
}

TEST(Predict, HandEvaluatedKernelSum) {
  SvrModel m;
  m.kernel.bandwidth = 0.5;
  m.support = {{0, 0, 0, 0, 0, 0}, {1, 0, 0, 0, 0, 0}, {1, 1, 0, 0, 0, 2}};
  m.coefficients = {1.0, -2.0, 0.5};
  m.bias = 0.25;
  // Squared distances from the query (1,0,0,0,0,0): 1, 0, 5.
  const double expected = 1.0 * std::exp(-0.5) - 2.0 + 0.5 * std::exp(-2.5) + 0.25;
  EXPECT_NEAR(predict(m, {1, 0, 0, 0, 0, 0}), expected, 1e-15);
}

TEST(CountOutliers, MatchesNaiveResidualScan) {
  const auto xs = random_states(150, 12);
  std::vector<double> ys;
  Rng rng(4);
  std::uniform_int_distribution<int> noise(0, 3);
  for (std::size_t i = 0; i < xs.size(); ++i) ys.push_back(noise(rng));
  const auto fit = fit_svr(xs, ys, params(0.05, 0.1, 0.2));
  const auto set = as_sample_set(xs, ys);
  std::size_t naive = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (std::abs(ys[i] - fit.model.predict(xs[i])) > fit.model.kappa) ++naive;
  EXPECT_EQ(count_outliers(fit.model, set), naive);
  EXPECT_LE(count_outliers(fit.model, set, 1e-6), naive);
}

TEST(CountOutliers, ZeroTubeCountsNonzeroResiduals) {
  SvrModel m;
  m.bias = 1.0;
  const auto xs = random_states(6, 2);
  const std::vector<double> ys = {1, 0, 1, 2, 1, 3};
  EXPECT_EQ(count_outliers(m, as_sample_set(xs, ys)), 3U);
  m.kappa = 5.0;
  EXPECT_EQ(count_outliers(m, as_sample_set(xs, ys)), 0U);
}

TEST(SvrModelIo, RoundTripIsBitIdentical) {
  const auto dir = scratch_dir("svr_io");
  const auto xs = random_states(120, 21);
  std::vector<double> ys;
  for (const auto& x : xs) ys.push_back(std::abs(x[2] - x[5]) / 2.0);
  const auto fit = fit_svr(xs, ys, params(0.03, 0.02, 0.137));
  write_svr_model(dir / "m.txt", fit.model);
  const auto back = read_svr_model(dir / "m.txt");
  EXPECT_EQ(back.kappa, fit.model.kappa);
  EXPECT_EQ(back.bias, fit.model.bias);
  EXPECT_EQ(back.rho, fit.model.rho);
  EXPECT_EQ(back.tau, fit.model.tau);
  EXPECT_EQ(back.kernel.bandwidth, fit.model.kernel.bandwidth);
  EXPECT_EQ(back.support, fit.model.support);
  for (const auto& x : random_states(100, 77)) {
    const double a = fit.model.predict(x), b = back.predict(x);
    EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
  }
  EXPECT_EQ(error_code_of([&] { read_svr_model(dir / "absent.txt"); }), ErrorCode::kMissingArtifact);
}

TEST(Threshold, SubtractsTheTube) {
  SvrModel m;
  m.bias = 2.0;
  m.kappa = 0.3;
  const auto th = triggered_threshold(m);
  EXPECT_DOUBLE_EQ(th({0, 0, 0, 0, 0, 0}), 1.7);
  EXPECT_EQ(th.floor_value({0, 0, 0, 0, 0, 0}), 1.0);
  m.kappa = 0.0;
  EXPECT_EQ(triggered_threshold(m)({4, 4, 4, 4, 4, 4}), 2.0);
}

// Fresh states where the integer part of the threshold exceeds the true
// surrogate, the only over-estimation that changes a trigger decision on the
// integer grid. Desk-scale settings.
TEST(Threshold, FreshOverEstimationWithinRiskBound) {
  const auto& w = testing::solved_w5();
  for (const double alpha : {0.2, 0.4, 0.6}) {
    const auto set = sample_surrogates(w.env, w.q, w.policy, alpha, 2000, 31);
    std::vector<GlobalState> xs;
    std::vector<double> ys;
    std::vector<bool> seen(w.env.state_count(), false);
    for (const auto& s : set.samples) {
      xs.push_back(s.x);
      ys.push_back(s.gamma);
      seen[w.env.state_index(s.x)] = true;
    }
    const auto pp = program_params_from_nu_c(0.2, 10.0, xs.size());
    const auto fit = fit_svr(xs, ys, params(pp.rho, pp.tau, 0.3));
    const auto bound = epsilon_bounds(xs.size(), count_outliers(fit.model, set, 1e-6), 1e-3);
    const SvrThreshold th(fit.model);
    const ExactSurrogate exact(w.env, w.q, w.policy, alpha);
    std::size_t fresh = 0, over = 0;
    for (std::size_t s = 0; s < w.env.state_count(); ++s) {
      if (seen[s]) continue;
      ++fresh;
      if (exact.at_index(s) < th.floor_value(w.env.state_at(s))) ++over;
    }
    const double n = static_cast<double>(fresh);
    const double sigma = std::sqrt(bound.eps_hi * (1.0 - bound.eps_hi) / n);
    EXPECT_LE(static_cast<double>(over) / n, bound.eps_hi + 3.0 * sigma) << "alpha=" << alpha;
  }
}

TEST(DefaultBandwidth, InverseOfDimTimesVariance) {
  const std::vector<GlobalState> xs = {{0, 0}, {2, 2}};
  EXPECT_DOUBLE_EQ(default_bandwidth(xs), 1.0 / (2.0 * 1.0));
  const std::vector<GlobalState> flat = {{1, 1}, {1, 1}};
  EXPECT_EQ(default_bandwidth(flat), 1.0);
}

}  // namespace
}  // namespace etm
