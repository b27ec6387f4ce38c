#include "etm/svr.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <list>
#include <sstream>
#include <string>

#include "etm/text.hpp"

namespace etm {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMinCurvature = 1e-12;

std::int64_t squared_distance(const GlobalState& a, const GlobalState& b) {
  std::int64_t acc = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const std::int64_t d = std::int64_t{a[i]} - b[i];
    acc += d * d;
  }
  return acc;
}

// Integer coordinates give integer squared distances, so the kernel is a
// table lookup over the range spanned by the data.
class KernelEvaluator {
 public:
  KernelEvaluator(std::span<const GlobalState> xs, double bandwidth) : bandwidth_(bandwidth) {
    const std::size_t dim = xs.front().dim();
    std::int64_t max_sq = 0;
    for (std::size_t i = 0; i < dim; ++i) {
      Coord lo = xs.front()[i], hi = lo;
      for (const auto& x : xs) {
        lo = std::min(lo, x[i]);
        hi = std::max(hi, x[i]);
      }
      max_sq += std::int64_t{hi - lo} * (hi - lo);
    }
    if (max_sq <= 1'000'000) {
      table_.resize(static_cast<std::size_t>(max_sq) + 1);
      for (std::size_t d = 0; d < table_.size(); ++d)
        table_[d] = std::exp(-bandwidth_ * static_cast<double>(d));
    }
  }

  double operator()(const GlobalState& a, const GlobalState& b) const {
    const auto d = squared_distance(a, b);
    if (static_cast<std::size_t>(d) < table_.size()) return table_[static_cast<std::size_t>(d)];
    return std::exp(-bandwidth_ * static_cast<double>(d));
  }

 private:
  double bandwidth_;
  std::vector<double> table_;
};

class KernelRowCache {
 public:
  KernelRowCache(std::span<const GlobalState> xs, const KernelEvaluator& k, std::size_t capacity)
      : xs_(xs), k_(k), capacity_(std::max<std::size_t>(capacity, 2)),
        where_(xs.size(), lru_.end()) {}

  const std::vector<double>& row(std::size_t i) {
    auto it = where_[i];
    if (it != lru_.end()) {
      lru_.splice(lru_.begin(), lru_, it);
      return it->values;
    }
    if (lru_.size() >= capacity_) {
      auto& victim = lru_.back();
      where_[victim.owner] = lru_.end();
      victim.owner = i;
      lru_.splice(lru_.begin(), lru_, std::prev(lru_.end()));
    } else {
      lru_.push_front(Entry{i, std::vector<double>(xs_.size())});
    }
    auto& entry = lru_.front();
    entry.owner = i;
    for (std::size_t m = 0; m < xs_.size(); ++m) entry.values[m] = k_(xs_[i], xs_[m]);
    where_[i] = lru_.begin();
    return entry.values;
  }

 private:
  struct Entry {
    std::size_t owner;
    std::vector<double> values;
  };
  std::span<const GlobalState> xs_;
  const KernelEvaluator& k_;
  std::size_t capacity_;
  std::list<Entry> lru_;
  std::vector<std::list<Entry>::iterator> where_;
};

// Variables a[0..n) are alpha (sign +1), a[n..2n) are alpha* (sign -1);
// beta = alpha - alpha*. With the tube active the pair updates stay inside a
// sign class (two equality constraints); otherwise there is a single class
// and each variable moves along its sign.
class SmoSolver {
 public:
  SmoSolver(std::span<const GlobalState> xs, std::span<const double> ys, const SvrParams& p)
      : xs_(xs), ys_(ys), p_(p), n_(xs.size()), kernel_(xs, p.kernel.bandwidth),
        cache_(xs, kernel_, std::min(p.cache_rows, xs.size())), a_(2 * n_, 0.0), e_(n_) {
    tube_ = static_cast<double>(n_) * p_.rho > 1.0;
    if (tube_) {
      double left = 0.5;
      for (std::size_t i = 0; i < n_ && left > 0.0; ++i) {
        const double v = std::min(left, p_.rho);
        a_[i] = v;
        a_[i + n_] = v;
        left -= v;
      }
    }
    for (std::size_t i = 0; i < n_; ++i) e_[i] = -ys_[i];
  }

  SvrFit run() {
    std::int64_t iter = 0;
    int refreshes = 0;
    for (;;) {
      Selection sel = select();
      if (sel.violation <= p_.tolerance) {
        // Remove accumulated drift in the gradient before accepting.
        refresh_gradient();
        ++refreshes;
        sel = select();
        if (sel.violation <= p_.tolerance || refreshes > 8) {
          if (sel.violation > p_.tolerance)
            throw SvrNonConvergence(snapshot(iter, sel.violation), sel.violation);
          return snapshot(iter, sel.violation);
        }
      }
      if (iter >= p_.max_iterations) {
        refresh_gradient();
        const double v = select().violation;
        throw SvrNonConvergence(snapshot(iter, v), v);
      }
      update(sel);
      ++iter;
    }
  }

 private:
  struct Selection {
    std::size_t i = 0;
    std::size_t j = 0;
    double violation = 0.0;
  };

  double sign(std::size_t k) const { return k < n_ ? 1.0 : -1.0; }
  double sigma(std::size_t k) const { return tube_ ? 1.0 : sign(k); }
  std::size_t sample(std::size_t k) const { return k < n_ ? k : k - n_; }
  // Gradient of the dual along each variable's direction sigma.
  double g(std::size_t k) const {
    return tube_ ? sign(k) * e_[sample(k)] : e_[sample(k)];
  }
  double room_up(std::size_t k) const { return sigma(k) > 0 ? p_.rho - a_[k] : a_[k]; }
  double room_down(std::size_t k) const { return sigma(k) > 0 ? a_[k] : p_.rho - a_[k]; }
  bool can_up(std::size_t k) const { return room_up(k) > 0.0; }
  bool can_down(std::size_t k) const { return room_down(k) > 0.0; }
  int group(std::size_t k) const { return tube_ && k >= n_ ? 1 : 0; }

  Selection select() {
    const int groups = tube_ ? 2 : 1;
    std::array<double, 2> g_min{kInf, kInf};
    std::array<double, 2> g_max{-kInf, -kInf};
    std::array<std::size_t, 2> i_best{0, 0};
    for (std::size_t k = 0; k < 2 * n_; ++k) {
      const int c = group(k);
      const double gk = g(k);
      if (can_up(k) && gk < g_min[c]) {
        g_min[c] = gk;
        i_best[c] = k;
      }
      if (can_down(k) && gk > g_max[c]) g_max[c] = gk;
    }
    Selection sel;
    sel.violation = 0.0;
    for (int c = 0; c < groups; ++c)
      if (g_min[c] < kInf && g_max[c] > -kInf)
        sel.violation = std::max(sel.violation, g_max[c] - g_min[c]);
    if (sel.violation <= p_.tolerance) return sel;

    // Second-order choice of j for each group's i; keep the best pair.
    double best_gain = -1.0;
    for (int c = 0; c < groups; ++c) {
      if (!(g_min[c] < kInf)) continue;
      const std::size_t i = i_best[c];
      const auto& ki = cache_.row(sample(i));
      const double gi = g(i);
      const std::size_t begin = (tube_ && c == 1) ? n_ : 0;
      const std::size_t end = (tube_ && c == 0) ? n_ : 2 * n_;
      for (std::size_t k = begin; k < end; ++k) {
        if (!can_down(k)) continue;
        const double diff = g(k) - gi;
        if (diff <= 0.0) continue;
        const double curv = std::max((2.0 - 2.0 * ki[sample(k)]) / (2.0 * p_.tau), kMinCurvature);
        const double gain = diff * diff / curv;
        if (gain > best_gain) {
          best_gain = gain;
          sel.i = i;
          sel.j = k;
        }
      }
    }
    return sel;
  }

  void update(const Selection& sel) {
    const std::size_t i = sel.i, j = sel.j;
    const std::size_t si = sample(i), sj = sample(j);
    const auto& ki = cache_.row(si);
    const double kij = ki[sj];
    const double curv = std::max((2.0 - 2.0 * kij) / (2.0 * p_.tau), kMinCurvature);
    const double up = room_up(i), down = room_down(j);
    double t = (g(j) - g(i)) / curv;
    bool hit_i = false, hit_j = false;
    if (t >= up) {
      t = up;
      hit_i = true;
    }
    if (t >= down) {
      t = down;
      hit_j = true;
      hit_i = (t == up);
    }
    if (hit_i) a_[i] = sigma(i) > 0 ? p_.rho : 0.0;
    else a_[i] += sigma(i) * t;
    if (hit_j) a_[j] = sigma(j) > 0 ? 0.0 : p_.rho;
    else a_[j] -= sigma(j) * t;

    const double dbi = sign(i) * sigma(i) * t / (2.0 * p_.tau);
    const double dbj = -sign(j) * sigma(j) * t / (2.0 * p_.tau);
    if (si == sj) {
      const double d = dbi + dbj;
      if (d != 0.0)
        for (std::size_t m = 0; m < n_; ++m) e_[m] += d * ki[m];
      return;
    }
    // Row si is most recently used, so fetching sj cannot evict it.
    const auto& kj = cache_.row(sj);
    for (std::size_t m = 0; m < n_; ++m) e_[m] += dbi * ki[m] + dbj * kj[m];
  }

  std::vector<double> betas() const {
    std::vector<double> b(n_);
    for (std::size_t i = 0; i < n_; ++i) b[i] = a_[i] - a_[i + n_];
    return b;
  }

  void refresh_gradient() {
    const auto beta = betas();
    std::vector<std::size_t> nz;
    for (std::size_t i = 0; i < n_; ++i)
      if (beta[i] != 0.0) nz.push_back(i);
    for (std::size_t m = 0; m < n_; ++m) {
      double acc = 0.0;
      for (const auto j : nz) acc += beta[j] * kernel_(xs_[j], xs_[m]);
      e_[m] = acc / (2.0 * p_.tau) - ys_[m];
    }
  }

  // Multiplier of a sign class's equality constraint.
  double multiplier(int c) const {
    double sum = 0.0, lo = -kInf, hi = kInf;
    std::size_t free = 0;
    for (std::size_t k = 0; k < 2 * n_; ++k) {
      if (group(k) != c) continue;
      const double gk = g(k);
      const bool up = can_up(k), down = can_down(k);
      if (up && down) {
        sum += gk;
        ++free;
      } else if (up) {
        hi = std::min(hi, gk);
      } else if (down) {
        lo = std::max(lo, gk);
      }
    }
    if (free > 0) return sum / static_cast<double>(free);
    if (hi < kInf && lo > -kInf) return 0.5 * (hi + lo);
    return hi < kInf ? hi : (lo > -kInf ? lo : 0.0);
  }

  SvrFit snapshot(std::int64_t iter, double violation) const {
    SvrFit fit;
    auto& m = fit.model;
    m.kernel = p_.kernel;
    m.rho = p_.rho;
    m.tau = p_.tau;
    const auto beta = betas();
    for (std::size_t i = 0; i < n_; ++i) {
      if (beta[i] == 0.0) continue;
      m.support.push_back(xs_[i]);
      m.coefficients.push_back(beta[i] / (2.0 * p_.tau));
    }
    if (tube_) {
      const double lp = multiplier(0), lm = multiplier(1);
      m.bias = 0.5 * (lm - lp);
      m.kappa = std::max(0.0, -0.5 * (lp + lm));
    } else {
      m.bias = -multiplier(0);
      m.kappa = 0.0;
    }
    double dual = 0.0;
    for (std::size_t k = 0; k < 2 * n_; ++k) {
      const double pk = -sign(k) * ys_[sample(k)];
      const double gk = sign(k) * e_[sample(k)];
      dual += 0.5 * a_[k] * (gk + pk);
    }
    fit.diagnostics = {iter, violation, dual, tube_};
    return fit;
  }

  std::span<const GlobalState> xs_;
  std::span<const double> ys_;
  const SvrParams& p_;
  std::size_t n_;
  KernelEvaluator kernel_;
  KernelRowCache cache_;
  bool tube_ = true;
  std::vector<double> a_;
  std::vector<double> e_;
};

}  // namespace

double RbfKernel::operator()(const GlobalState& a, const GlobalState& b) const {
  if (a.dim() != b.dim()) throw Error(ErrorCode::kDimensionMismatch, "kernel: state dimensions differ");
  return std::exp(-bandwidth * static_cast<double>(squared_distance(a, b)));
}

double default_bandwidth(std::span<const GlobalState> xs) {
  if (xs.empty()) return 1.0;
  const std::size_t dim = xs.front().dim();
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  for (const auto& x : xs) {
    for (std::size_t i = 0; i < dim; ++i) {
      sum += x[i];
      sq += static_cast<double>(x[i]) * x[i];
    }
    count += dim;
  }
  const double mean = sum / static_cast<double>(count);
  const double var = sq / static_cast<double>(count) - mean * mean;
  if (!(var > 0.0)) return 1.0;
  return 1.0 / (static_cast<double>(dim) * var);
}

void SvrParams::validate() const {
  if (!(rho > 0.0) || !std::isfinite(rho)) throw Error(ErrorCode::kInvalidArgument, "svr: rho must be positive");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorCode::kInvalidArgument, "svr: tau must be positive");
  if (!(kernel.bandwidth > 0.0) || !std::isfinite(kernel.bandwidth))
    throw Error(ErrorCode::kInvalidArgument, "svr: kernel bandwidth must be positive");
  if (!(tolerance > 0.0)) throw Error(ErrorCode::kInvalidArgument, "svr: tolerance must be positive");
  if (max_iterations < 1) throw Error(ErrorCode::kInvalidArgument, "svr: max_iterations must be >= 1");
}

ProgramParams program_params_from_nu_c(double nu, double c, std::size_t sample_size) {
  if (!(nu > 0.0 && nu <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "svr: nu must lie in (0, 1]");
  if (!(c > 0.0)) throw Error(ErrorCode::kInvalidArgument, "svr: C must be positive");
  if (sample_size == 0) throw Error(ErrorCode::kInvalidArgument, "svr: empty sample");
  const double s = static_cast<double>(sample_size);
  return {1.0 / (nu * s), 1.0 / (2.0 * c * nu * s)};
}

double SvrModel::predict(const GlobalState& x) const {
  double acc = bias;
  for (std::size_t j = 0; j < support.size(); ++j) acc += coefficients[j] * kernel(support[j], x);
  return acc;
}

SvrNonConvergence::SvrNonConvergence(SvrFit best, double residual)
    : Error(ErrorCode::kNonConvergence,
            "svr: iteration cap reached with KKT violation " + format_double(residual)),
      best_(std::move(best)), residual_(residual) {}

SvrFit fit_svr(std::span<const GlobalState> xs, std::span<const double> ys, const SvrParams& params) {
  params.validate();
  if (xs.size() != ys.size()) throw Error(ErrorCode::kDimensionMismatch, "svr: xs and ys differ in length");
  if (xs.size() < 2) throw Error(ErrorCode::kInvalidArgument, "svr: need at least 2 samples");
  for (const auto& x : xs)
    if (x.dim() != xs.front().dim()) throw Error(ErrorCode::kDimensionMismatch, "svr: ragged states");
  for (const double y : ys)
    if (!std::isfinite(y)) throw Error(ErrorCode::kInvalidArgument, "svr: non-finite label");
  SmoSolver solver(xs, ys, params);
  return solver.run();
}

SvrFit fit_svr(const SampleSet& data, const SvrParams& params) {
  std::vector<GlobalState> xs;
  std::vector<double> ys;
  xs.reserve(data.size());
  ys.reserve(data.size());
  for (const auto& s : data.samples) {
    xs.push_back(s.x);
    ys.push_back(static_cast<double>(s.gamma));
  }
  return fit_svr(xs, ys, params);
}

std::size_t count_outliers(const SvrModel& model, const SampleSet& data, double boundary_tolerance) {
  std::size_t n = 0;
  for (const auto& s : data.samples)
    if (std::abs(static_cast<double>(s.gamma) - model.predict(s.x)) > model.kappa + boundary_tolerance) ++n;
  return n;
}

double primal_objective(const SvrModel& model, std::span<const GlobalState> xs,
                        std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::kDimensionMismatch, "svr: xs and ys differ in length");
  double norm = 0.0;
  for (std::size_t i = 0; i < model.support.size(); ++i)
    for (std::size_t j = 0; j < model.support.size(); ++j)
      norm += model.coefficients[i] * model.coefficients[j] *
              model.kernel(model.support[i], model.support[j]);
  double slack = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    slack += std::max(0.0, std::abs(ys[i] - model.predict(xs[i])) - model.kappa);
  return model.kappa + model.tau * norm + model.rho * slack;
}

double SvrThreshold::floor_value(const GlobalState& x) const { return std::floor((*this)(x)); }

void write_svr_model(const std::filesystem::path& path, const SvrModel& model) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const std::size_t dim = model.support.empty() ? 0 : model.support.front().dim();
  out << "etm-svr-model 1\n"
      << "kernel rbf\n"
      << "bandwidth " << format_double17(model.kernel.bandwidth) << '\n'
      << "rho " << format_double17(model.rho) << '\n'
      << "tau " << format_double17(model.tau) << '\n'
      << "kappa " << format_double17(model.kappa) << '\n'
      << "bias " << format_double17(model.bias) << '\n'
      << "dim " << dim << '\n'
      << "support " << model.support.size() << '\n';
  for (std::size_t j = 0; j < model.support.size(); ++j) {
    out << format_double17(model.coefficients[j]);
    for (const auto c : model.support[j].components()) out << ' ' << c;
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

namespace {

template <typename T>
T read_field(std::istream& in, const std::string& key, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kIo, path.string() + ": missing '" + key + "'");
  const auto parts = split(line, ' ');
  T value{};
  if (parts.size() != 2 || parts[0] != key || !parse_number(parts[1], value))
    throw Error(ErrorCode::kIo, path.string() + ": malformed '" + key + "' line");
  return value;
}

}  // namespace

SvrModel read_svr_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "etm-svr-model 1")
    throw Error(ErrorCode::kIo, path.string() + ": not an SVR model file");
  if (!std::getline(in, line) || line != "kernel rbf")
    throw Error(ErrorCode::kIo, path.string() + ": unsupported kernel");
  SvrModel m;
  m.kernel.bandwidth = read_field<double>(in, "bandwidth", path);
  m.rho = read_field<double>(in, "rho", path);
  m.tau = read_field<double>(in, "tau", path);
  m.kappa = read_field<double>(in, "kappa", path);
  m.bias = read_field<double>(in, "bias", path);
  const auto dim = read_field<std::size_t>(in, "dim", path);
  const auto count = read_field<std::size_t>(in, "support", path);
  if (dim > kMaxStateDim) throw Error(ErrorCode::kIo, path.string() + ": dimension too large");
  for (std::size_t j = 0; j < count; ++j) {
    if (!std::getline(in, line)) throw Error(ErrorCode::kIo, path.string() + ": truncated support list");
    const auto parts = split(line, ' ');
    double coef = 0.0;
    if (parts.size() != dim + 1 || !parse_number(parts[0], coef))
      throw Error(ErrorCode::kIo, path.string() + ": malformed support row");
    GlobalState x(dim);
    for (std::size_t i = 0; i < dim; ++i)
      if (!parse_number(parts[i + 1], x[i])) throw Error(ErrorCode::kIo, path.string() + ": bad coordinate");
    m.coefficients.push_back(coef);
    m.support.push_back(x);
  }
  return m;
}

}  // namespace etm
