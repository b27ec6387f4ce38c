#pragma once

// Kernel support vector regression with a self-tuned tube.
//
// Solves
//   min_{theta, b, kappa >= 0, xi >= 0}  kappa + tau ||theta||^2 + rho sum_i xi_i
//   s.t. |y_i - <theta, phi(x_i)> - b| - kappa <= xi_i
// through its dual, which is a nu-SVR-type QP:
//   min 1/(4 tau) beta' K beta - y' beta
//   s.t. sum beta = 0, sum |beta_i| <= 1, |beta_i| <= rho,
// so the fitted predictor is f(x) = sum_j beta_j / (2 tau) k(x_j, x) + b.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "etm/error.hpp"
#include "etm/mmdp.hpp"
#include "etm/surrogate.hpp"

namespace etm {

/// k(a, b) = exp(-bandwidth * ||a - b||_2^2).
struct RbfKernel {
  double bandwidth = 1.0;

  double operator()(const GlobalState& a, const GlobalState& b) const;
};

/// 1 / (dim * variance of all pooled components); 1 when the variance is 0.
double default_bandwidth(std::span<const GlobalState> xs);

struct SvrParams {
  double rho = 0.01;
  double tau = 1.0;
  RbfKernel kernel;
  /// Stopping tolerance on the maximal KKT violation (residual units).
  double tolerance = 1e-6;
  std::int64_t max_iterations = 1'000'000;
  /// Kernel rows kept in the LRU cache.
  std::size_t cache_rows = 4096;

  void validate() const;
};

struct ProgramParams {
  double rho = 0.0;
  double tau = 0.0;
};

/// Converts nu-SVR settings (box C, tube fraction nu, as in libsvm and
/// scikit-learn) on S samples to the (rho, tau) of the program above:
/// rho = 1 / (nu S), tau = 1 / (2 C nu S).
ProgramParams program_params_from_nu_c(double nu, double c, std::size_t sample_size);

struct SvrModel {
  std::vector<GlobalState> support;
  std::vector<double> coefficients;
  double bias = 0.0;
  double kappa = 0.0;
  RbfKernel kernel;
  double rho = 0.0;
  double tau = 0.0;

  double predict(const GlobalState& x) const;
};

struct SvrDiagnostics {
  std::int64_t iterations = 0;
  double kkt_violation = 0.0;
  /// Value of the dual minimisation; the program optimum is its negation.
  double dual_objective = 0.0;
  /// False when rho * S <= 1, where kappa* = 0 and the tube constraint drops.
  bool tube_active = true;
};

struct SvrFit {
  SvrModel model;
  SvrDiagnostics diagnostics;
};

class SvrNonConvergence : public Error {
 public:
  SvrNonConvergence(SvrFit best, double residual);

  const SvrFit& best() const noexcept { return best_; }
  double residual() const noexcept { return residual_; }

 private:
  SvrFit best_;
  double residual_;
};

/// Throws kInvalidArgument for fewer than 2 samples or bad parameters and
/// SvrNonConvergence when the iteration cap is hit.
SvrFit fit_svr(std::span<const GlobalState> xs, std::span<const double> ys, const SvrParams& params);
SvrFit fit_svr(const SampleSet& data, const SvrParams& params);

inline double predict(const SvrModel& model, const GlobalState& x) { return model.predict(x); }

/// Number of samples strictly outside the tube: |y - f(x)| > kappa + boundary_tolerance.
std::size_t count_outliers(const SvrModel& model, const SampleSet& data,
                           double boundary_tolerance = 0.0);

/// kappa + tau ||theta||^2 + rho sum max(0, |y - f(x)| - kappa) at the model.
double primal_objective(const SvrModel& model, std::span<const GlobalState> xs,
                        std::span<const double> ys);

/// Conservative trigger threshold x -> f(x) - kappa*.
class SvrThreshold {
 public:
  explicit SvrThreshold(SvrModel model) : model_(std::move(model)) {}

  double operator()(const GlobalState& x) const { return model_.predict(x) - model_.kappa; }
  /// On an integer grid the trigger effectively compares against the floor.
  double floor_value(const GlobalState& x) const;
  const SvrModel& model() const noexcept { return model_; }

 private:
  SvrModel model_;
};

inline SvrThreshold triggered_threshold(SvrModel model) { return SvrThreshold(std::move(model)); }

void write_svr_model(const std::filesystem::path& path, const SvrModel& model);
SvrModel read_svr_model(const std::filesystem::path& path);

}  // namespace etm
