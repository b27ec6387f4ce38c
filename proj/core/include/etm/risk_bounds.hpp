#pragma once

// Scenario-approach risk bounds for a model with s* outliers out of S samples.

#include <cstddef>

namespace etm {

struct RiskBounds {
  std::size_t sample_size = 0;
  std::size_t s_star = 0;
  double beta = 0.0;
  double eps_lo = 0.0;
  double eps_hi = 1.0;
  /// Roots of the bound polynomial (t_upper = 1 when no root lies below 1).
  double t_lower = 0.0;
  double t_upper = 1.0;
};

/// A real number stored as sign * exp(log_abs); sign is -1, 0 or +1.
struct SignedLog {
  int sign = 0;
  double log_abs = 0.0;

  double value() const;
};

/// B(t) = C(S,k) t^(S-k) - beta/(2S) sum_{i=k}^{S-1} C(i,k) t^(i-k)
///                       - beta/(6S) sum_{i=S+1}^{4S} C(i,k) t^(i-k),
/// evaluated in log space for t in (0, 1]. Requires k <= S, beta in (0,1).
SignedLog scenario_polynomial(std::size_t sample_size, std::size_t s_star, double beta, double t);

/// eps_hi = 1 - (lower root), eps_lo = max(0, 1 - upper root). s* = S gives
/// the vacuous (0, 1). Throws kInvalidArgument on bad inputs and
/// kNumericalFailure when no sign change is found.
RiskBounds epsilon_bounds(std::size_t sample_size, std::size_t s_star, double beta);

}  // namespace etm
