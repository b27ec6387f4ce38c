#include "etm/risk_bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "etm/error.hpp"
#include "etm/parallel.hpp"
#include "etm/text.hpp"

namespace etm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Terms this far (in log units) below the largest one cannot move a double.
constexpr double kCutoff = 40.0;

double log_binomial(std::size_t n, std::size_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

void check_inputs(std::size_t s, std::size_t k, double beta) {
  if (s == 0) throw Error(ErrorCode::kInvalidArgument, "risk bounds: S must be >= 1");
  if (k > s) throw Error(ErrorCode::kInvalidArgument, "risk bounds: s* exceeds S");
  if (!(beta > 0.0 && beta < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "risk bounds: beta must lie in (0, 1)");
}

// log C(i, k) for i in [k, 4S], shared by every evaluation of one polynomial.
class Polynomial {
 public:
  Polynomial(std::size_t s, std::size_t k, double beta) : s_(s), k_(k) {
    lbin_.resize(4 * s - k + 1);
    for (std::size_t i = k; i <= 4 * s; ++i) lbin_[i - k] = log_binomial(i, k);
    log_c1_ = std::log(beta / (2.0 * static_cast<double>(s)));
    log_c2_ = std::log(beta / (6.0 * static_cast<double>(s)));
  }

  SignedLog operator()(double t) const {
    const double lt = std::log(t);
    const double lp = lbin_[s_ - k_] + static_cast<double>(s_ - k_) * lt;
    const double ln1 = log_sum(k_, s_ - 1, lt, log_c1_);
    const double ln2 = log_sum(s_ + 1, 4 * s_, lt, log_c2_);
    const double ln = log_add(ln1, ln2);
    if (lp == ln) return {0, kNegInf};
    if (lp > ln) return {+1, lp + std::log1p(-std::exp(ln - lp))};
    return {-1, ln + std::log1p(-std::exp(lp - ln))};
  }

 private:
  static double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
  }

  double term(std::size_t i, double lt) const {
    return lbin_[i - k_] + static_cast<double>(i - k_) * lt;
  }

  // log of coef * sum_{i=lo}^{hi} C(i,k) t^(i-k). The terms are log-concave
  // in i, so we start at the peak and walk outward until they vanish.
  double log_sum(std::size_t lo, std::size_t hi, double lt, double log_coef) const {
    if (lo > hi) return kNegInf;
    const double one_minus_t = -std::expm1(lt);
    double peak_real = one_minus_t > 0.0 ? static_cast<double>(k_) / one_minus_t - 1.0
                                         : static_cast<double>(hi);
    peak_real = std::clamp(peak_real, static_cast<double>(lo), static_cast<double>(hi));
    std::size_t peak = static_cast<std::size_t>(peak_real);
    if (peak < hi && term(peak + 1, lt) > term(peak, lt)) ++peak;
    const double top = term(peak, lt);
    double acc = 0.0;
    for (std::size_t i = peak;; ++i) {
      const double v = term(i, lt) - top;
      if (v < -kCutoff || i > hi) break;
      acc += std::exp(v);
      if (i == hi) break;
    }
    for (std::size_t i = peak; i > lo;) {
      --i;
      const double v = term(i, lt) - top;
      if (v < -kCutoff) break;
      acc += std::exp(v);
    }
    return log_coef + top + std::log(acc);
  }

  std::size_t s_;
  std::size_t k_;
  std::vector<double> lbin_;
  double log_c1_ = 0.0;
  double log_c2_ = 0.0;
};

double bisect(const Polynomial& b, double lo, double hi, int sign_lo) {
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    const int s = b(mid).sign;
    if (s == 0) return mid;
    if (s == sign_lo) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double SignedLog::value() const { return sign == 0 ? 0.0 : sign * std::exp(log_abs); }

SignedLog scenario_polynomial(std::size_t sample_size, std::size_t s_star, double beta, double t) {
  check_inputs(sample_size, s_star, beta);
  if (!(t > 0.0 && t <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "risk bounds: t must lie in (0, 1]");
  return Polynomial(sample_size, s_star, beta)(t);
}

RiskBounds epsilon_bounds(std::size_t sample_size, std::size_t s_star, double beta) {
  check_inputs(sample_size, s_star, beta);
  RiskBounds r{sample_size, s_star, beta, 0.0, 1.0, 0.0, 1.0};
  if (s_star == sample_size) return r;

  // Uniform points plus points clustered towards t = 1, where the roots for
  // small s*/S sit; t = 1 closes the scan.
  constexpr std::size_t kPoints = 10'000;
  std::vector<double> grid;
  grid.reserve(2 * kPoints + 1);
  const double t0 = 1e-6, t1 = 1.0 - 1e-9;
  for (std::size_t j = 0; j < kPoints; ++j)
    grid.push_back(t0 + (t1 - t0) * static_cast<double>(j) / static_cast<double>(kPoints - 1));
  for (std::size_t j = 0; j < kPoints; ++j) {
    const double e = -9.0 + (std::log10(0.5) + 9.0) * static_cast<double>(j) / static_cast<double>(kPoints - 1);
    grid.push_back(1.0 - std::pow(10.0, e));
  }
  grid.push_back(1.0);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const Polynomial b(sample_size, s_star, beta);
  std::vector<int> signs(grid.size());
  parallel_for(grid.size(), [&](std::size_t j) { signs[j] = b(grid[j]).sign; }, 256);

  std::vector<std::size_t> changes;
  for (std::size_t j = 1; j < grid.size(); ++j)
    if (signs[j] != signs[j - 1]) changes.push_back(j);
  if (changes.empty() || signs.front() >= 0)
    throw Error(ErrorCode::kNumericalFailure,
                "risk bounds: no sign change of the polynomial for S=" + std::to_string(sample_size) +
                    ", s*=" + std::to_string(s_star) + ", beta=" + format_double(beta));

  const std::size_t first = changes.front();
  r.t_lower = bisect(b, grid[first - 1], grid[first], signs[first - 1]);
  if (changes.size() >= 2) {
    const std::size_t second = changes.back();
    r.t_upper = bisect(b, grid[second - 1], grid[second], signs[second - 1]);
  } else {
    r.t_upper = 1.0;
  }
  r.eps_hi = 1.0 - r.t_lower;
  r.eps_lo = std::max(0.0, 1.0 - r.t_upper);
  return r;
}

}  // namespace etm
