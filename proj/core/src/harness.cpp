#include "etm/harness.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"

#include "etm/checksum.hpp"
#include "etm/error.hpp"
#include "etm/qtable_io.hpp"
#include "etm/risk_bounds.hpp"
#include "etm/surrogate.hpp"
#include "etm/svr.hpp"
#include "etm/text.hpp"

namespace etm {
namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::kConfig, msg); }

void check_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) config_error(where + " must be an object");
  for (const auto& item : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) config_error("unknown key '" + where + "." + item.key() + "'");
  }
}

void read_double(const Json& obj, const char* key, double& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number()) config_error(where + "." + key + " must be a number");
  out = v.get<double>();
}

void read_optional_double(const Json& obj, const char* key, std::optional<double>& out,
                          const std::string& where) {
  if (!obj.contains(key)) return;
  if (obj.at(key).is_null()) {
    out.reset();
    return;
  }
  double v = 0.0;
  read_double(obj, key, v, where);
  out = v;
}

template <typename Int>
void read_integer(const Json& obj, const char* key, Int& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) config_error(where + "." + key + " must be an integer");
  if constexpr (std::is_unsigned_v<Int>) {
    if (v.is_number_unsigned()) {
      out = v.get<Int>();
      return;
    }
    if (v.get<std::int64_t>() < 0) config_error(where + "." + key + " must be non-negative");
  }
  out = v.get<Int>();
}

void read_bool(const Json& obj, const char* key, bool& out, const std::string& where) {
  if (!obj.contains(key)) return;
  if (!obj.at(key).is_boolean()) config_error(where + "." + key + " must be a boolean");
  out = obj.at(key).get<bool>();
}

std::string read_string(const Json& obj, const char* key, const std::string& fallback,
                        const std::string& where) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_string()) config_error(where + "." + key + " must be a string");
  return obj.at(key).get<std::string>();
}

SvrSetting parse_svr_setting(const Json& obj, const std::string& where, bool with_alpha) {
  if (with_alpha)
    check_keys(obj, {"alpha", "rho", "tau", "nu", "C", "bandwidth", "tolerance", "max_iterations"}, where);
  else
    check_keys(obj, {"rho", "tau", "nu", "C", "bandwidth", "tolerance", "max_iterations"}, where);
  SvrSetting s;
  if (with_alpha) {
    if (!obj.contains("alpha")) config_error(where + ".alpha is required");
    double a = 0.0;
    read_double(obj, "alpha", a, where);
    s.alpha = a;
  }
  read_optional_double(obj, "rho", s.rho, where);
  read_optional_double(obj, "tau", s.tau, where);
  read_optional_double(obj, "nu", s.nu, where);
  read_optional_double(obj, "C", s.c, where);
  read_optional_double(obj, "bandwidth", s.bandwidth, where);
  read_double(obj, "tolerance", s.tolerance, where);
  read_integer(obj, "max_iterations", s.max_iterations, where);
  const bool program = s.rho || s.tau;
  const bool nu_c = s.nu || s.c;
  if (program && nu_c) config_error(where + ": give either rho/tau or nu/C, not both");
  if (program && !(s.rho && s.tau)) config_error(where + ": rho and tau go together");
  if (nu_c && !(s.nu && s.c)) config_error(where + ": nu and C go together");
  return s;
}

Json svr_setting_json(const SvrSetting& s) {
  Json j = Json::object();
  const auto put = [&](const char* k, const std::optional<double>& v) {
    j[k] = v ? Json(*v) : Json(nullptr);
  };
  put("alpha", s.alpha);
  put("rho", s.rho);
  put("tau", s.tau);
  put("nu", s.nu);
  put("C", s.c);
  put("bandwidth", s.bandwidth);
  j["tolerance"] = s.tolerance;
  j["max_iterations"] = s.max_iterations;
  return j;
}

std::string_view mode_name(TrainMode m) {
  return m == TrainMode::kValueIteration ? "value-iteration" : "q-learning";
}

Json env_json(const EnvConfig& e) {
  return {{"arena_width", e.arena_width},
          {"n_predators", e.n_predators},
          {"step_cap", e.step_cap},
          {"tag_precedence", e.tag_precedence},
          {"prey_policy", "uniform-adjacent"}};
}

Json train_json(const TrainConfig& t) {
  return {{"mode", mode_name(t.mode)},           {"gamma", t.gamma},
          {"vi_tolerance", t.vi_tolerance},     {"vi_max_sweeps", t.vi_max_sweeps},
          {"ql_episodes", t.ql_episodes},       {"ql_lr_exponent", t.ql_lr_exponent},
          {"ql_epsilon_start", t.ql_epsilon_start}, {"ql_epsilon_end", t.ql_epsilon_end}};
}

bool same_alpha(double a, double b) { return std::abs(a - b) <= 1e-12; }

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kIo, path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

// Checksums plus the key each artifact was produced under. A key mixes the
// relevant configuration with the checksums of upstream artifacts, so any
// upstream change shows up as a key mismatch downstream.
class ArtifactStore {
 public:
  ArtifactStore(fs::path dir, std::string config_hash)
      : dir_(std::move(dir)), config_hash_(std::move(config_hash)) {
    if (fs::exists(manifest_path())) manifest_ = read_json(manifest_path());
    if (!manifest_.is_object()) manifest_ = Json::object();
    if (!manifest_.contains("entries")) manifest_["entries"] = Json::object();
  }

  fs::path path(const std::string& name) const { return dir_ / name; }
  bool has(const std::string& name) const {
    return manifest_["entries"].contains(name) && fs::exists(path(name));
  }

  void record(const std::string& name, const std::string& key) {
    manifest_["tool_version"] = kToolVersion;
    manifest_["config_hash"] = config_hash_;
    manifest_["entries"][name] = {{"sha256", sha256_file(path(name))},
                                  {"key", key},
                                  {"config_hash", config_hash_},
                                  {"created", now_utc()}};
    write_json(manifest_path(), manifest_);
  }

  /// Returns the artifact's checksum after verifying it is present, intact
  /// and was produced under `expected_key`.
  std::string require(const std::string& name, const std::string& expected_key,
                      const std::string& producer) const {
    if (!has(name))
      throw Error(ErrorCode::kMissingArtifact,
                  "artifact " + path(name).string() + " is missing; run `" + producer + "` first");
    const auto& e = manifest_["entries"][name];
    const std::string sha = sha256_file(path(name));
    if (sha != e.at("sha256").get<std::string>())
      throw Error(ErrorCode::kStaleArtifact,
                  "artifact " + path(name).string() + " changed after it was recorded; rerun `" + producer + "`");
    if (e.at("key").get<std::string>() != expected_key)
      throw Error(ErrorCode::kStaleArtifact,
                  "artifact " + path(name).string() +
                      " was built from a different configuration or upstream artifact; rerun `" + producer + "`");
    return sha;
  }

 private:
  fs::path manifest_path() const { return dir_ / "manifest.json"; }

  fs::path dir_;
  std::string config_hash_;
  Json manifest_;
};

std::string key_of(std::initializer_list<std::string> parts) {
  std::string joined;
  for (const auto& p : parts) {
    joined += p;
    joined += '\x1f';
  }
  return sha256_hex(joined);
}

// Value iteration is deterministic, so only Q-learning keys on the seed.
std::string train_key(const RunConfig& c) {
  const bool seeded = c.train.mode == TrainMode::kQLearning;
  return key_of({"train", env_json(c.env).dump(), train_json(c.train).dump(),
                 seeded ? std::to_string(training_seed(c)) : std::string("-")});
}

struct TrainedArtifacts {
  QTable q;
  PolicyTable policy;
  Json meta;
  std::string q_sha;
  std::string policy_sha;
};

TrainedArtifacts load_trained(const RunConfig& c, const ArtifactStore& store) {
  const auto key = train_key(c);
  TrainedArtifacts t;
  t.q_sha = store.require("qtable.bin", key, "etm train");
  t.policy_sha = store.require("policy.bin", key, "etm train");
  store.require("qtable.meta.json", key, "etm train");
  auto qf = read_qtable(store.path("qtable.bin"));
  auto pf = read_policy(store.path("policy.bin"));
  t.q = std::move(qf.table);
  t.policy = std::move(pf.policy);
  t.meta = read_json(store.path("qtable.meta.json"));
  return t;
}

std::string samples_name(double a) { return "samples_" + alpha_tag(a) + ".csv"; }
std::string model_name(double a) { return "svr_" + alpha_tag(a) + ".txt"; }
std::string fit_name(double a) { return "fit_" + alpha_tag(a) + ".json"; }

std::string samples_key(const RunConfig& c, double a, const TrainedArtifacts& t) {
  return key_of({"samples", format_double(a), std::to_string(c.sample_size),
                 std::to_string(sampling_seed(c, a)), t.q_sha, t.policy_sha});
}

std::string fit_key(const RunConfig& c, double a, const std::string& samples_sha) {
  return key_of({"fit", svr_setting_json(c.svr_for(a)).dump(), format_double(c.beta), samples_sha});
}

std::string run_label(TriggerKind kind, double a) {
  if (kind == TriggerKind::kFullComm || kind == TriggerKind::kNever) return std::string(to_string(kind));
  return std::string(to_string(kind)) + "_" + alpha_tag(a);
}

bool alpha_free(TriggerKind kind) { return kind == TriggerKind::kFullComm || kind == TriggerKind::kNever; }

std::string sim_key(const RunConfig& c, TriggerKind kind, double a, const std::string& upstream) {
  return key_of({"simulate", std::string(to_string(kind)), alpha_free(kind) ? "-" : format_double(a),
                 std::to_string(c.n_games), std::to_string(simulation_seed(c)),
                 std::to_string(c.env.step_cap), format_double(c.train.gamma), upstream});
}

// Upstream checksum a simulation depends on, or nullopt when unavailable.
std::string sim_upstream(const RunConfig& c, TriggerKind kind, double a, const TrainedArtifacts& t,
                         const ArtifactStore& store) {
  std::string up = t.q_sha + t.policy_sha;
  if (kind == TriggerKind::kSvr) {
    const auto sha = store.require(samples_name(a), samples_key(c, a, t), "etm surrogate");
    up += store.require(model_name(a), fit_key(c, a, sha), "etm fit");
  }
  return up;
}

struct FitInfo {
  bool available = false;
  double eps_hi = 0.0;
  double eps_lo = 0.0;
  std::size_t s_star = 0;
  Json json;
};

FitInfo load_fit(const RunConfig& c, double a, const TrainedArtifacts& t, const ArtifactStore& store) {
  FitInfo f;
  try {
    const auto sha = store.require(samples_name(a), samples_key(c, a, t), "etm surrogate");
    store.require(fit_name(a), fit_key(c, a, sha), "etm fit");
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kMissingArtifact) return f;
    throw;
  }
  f.json = read_json(store.path(fit_name(a)));
  f.available = true;
  f.s_star = f.json.at("s_star").get<std::size_t>();
  f.eps_hi = f.json.at("eps_hi").get<double>();
  f.eps_lo = f.json.at("eps_lo").get<double>();
  const auto check = epsilon_bounds(f.json.at("sample_size").get<std::size_t>(), f.s_star,
                                    f.json.at("beta").get<double>());
  if (std::abs(check.eps_hi - f.eps_hi) > 1e-9 || std::abs(check.eps_lo - f.eps_lo) > 1e-9)
    throw Error(ErrorCode::kStaleArtifact,
                "stored risk bounds for alpha " + format_double(a) + " do not match recomputation");
  return f;
}

std::optional<double> delta_or_gap(double a, double eps_hi, double iota, double gamma, bool from_zero) {
  if (a > iota) return std::nullopt;
  return from_zero ? corollary1_delta_from_zero(a, eps_hi, iota, gamma)
                   : corollary1_delta(a, eps_hi, iota, gamma);
}

std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string fixed_or_gap(const std::optional<double>& v, int decimals) {
  return v ? format_fixed(*v, decimals) : std::string("n/a");
}

}  // namespace

std::string alpha_tag(double alpha) { return "a" + format_double(alpha); }

void RunConfig::validate() const {
  try {
    env.validate();
    train.validate();
  } catch (const Error& e) {
    config_error(e.what());
  }
  if (alphas.empty()) config_error("alphas must not be empty");
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] >= 0.0) || !std::isfinite(alphas[i])) config_error("alphas must be finite and >= 0");
    if (i > 0 && !(alphas[i] > alphas[i - 1])) config_error("alphas must be strictly ascending");
  }
  if (sample_size < 1) config_error("sample_size must be >= 1");
  if (!(beta > 0.0 && beta < 1.0)) config_error("beta must lie in (0, 1)");
  if (n_games < 1) config_error("sim.n_games must be >= 1");
  if (triggers.empty()) config_error("sim.triggers must not be empty");
  if (artifacts_dir.empty() || results_dir.empty()) config_error("paths must not be empty");
  for (const auto& s : svr_per_alpha) {
    const auto n = std::count_if(svr_per_alpha.begin(), svr_per_alpha.end(),
                                 [&](const SvrSetting& o) { return same_alpha(*o.alpha, *s.alpha); });
    if (n > 1) config_error("svr.per_alpha lists alpha " + format_double(*s.alpha) + " twice");
  }
  if (!(reference_gamma > 0.0 && reference_gamma < 1.0)) config_error("reference.gamma must lie in (0, 1)");
}

std::string RunConfig::canonical_json() const {
  Json j;
  j["env"] = env_json(env);
  j["train"] = train_json(train);
  j["alphas"] = alphas;
  j["sample_size"] = sample_size;
  j["beta"] = beta;
  Json per = Json::array();
  for (const auto& s : svr_per_alpha) per.push_back(svr_setting_json(s));
  j["svr"] = {{"defaults", svr_setting_json(svr_defaults)}, {"per_alpha", per}};
  Json trig = Json::array();
  for (const auto k : triggers) trig.push_back(std::string(to_string(k)));
  j["sim"] = {{"n_games", n_games}, {"master_seed", master_seed}, {"triggers", trig}};
  j["paths"] = {{"artifacts", artifacts_dir.generic_string()}, {"results", results_dir.generic_string()}};
  Json rows = Json::array();
  for (const auto& r : reference_rows)
    rows.push_back({{"alpha", r.alpha}, {"eps_hi", r.eps_hi}, {"delta", r.delta ? Json(*r.delta) : Json(nullptr)}});
  j["reference"] = {{"iota", reference_iota}, {"gamma", reference_gamma}, {"rows", rows}};
  return j.dump();
}

std::string RunConfig::hash() const { return sha256_hex(canonical_json()); }

SvrSetting RunConfig::svr_for(double alpha) const {
  SvrSetting s = svr_defaults;
  s.alpha = alpha;
  for (const auto& o : svr_per_alpha) {
    if (!same_alpha(*o.alpha, alpha)) continue;
    if (o.rho) {
      s.rho = o.rho;
      s.tau = o.tau;
      s.nu.reset();
      s.c.reset();
    }
    if (o.nu) {
      s.nu = o.nu;
      s.c = o.c;
      s.rho.reset();
      s.tau.reset();
    }
    if (o.bandwidth) s.bandwidth = o.bandwidth;
    s.tolerance = o.tolerance;
    s.max_iterations = o.max_iterations;
  }
  return s;
}

RunConfig parse_config(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, {"env", "train", "alphas", "sample_size", "beta", "svr", "sim", "paths", "reference"}, "config");
  RunConfig c;
  if (root.contains("env")) {
    const auto& e = root["env"];
    check_keys(e, {"arena_width", "n_predators", "step_cap", "tag_precedence", "prey_policy"}, "env");
    read_integer(e, "arena_width", c.env.arena_width, "env");
    read_integer(e, "n_predators", c.env.n_predators, "env");
    read_integer(e, "step_cap", c.env.step_cap, "env");
    read_bool(e, "tag_precedence", c.env.tag_precedence, "env");
    if (read_string(e, "prey_policy", "uniform-adjacent", "env") != "uniform-adjacent")
      config_error("env.prey_policy: only 'uniform-adjacent' is supported");
  }
  if (root.contains("train")) {
    const auto& t = root["train"];
    check_keys(t, {"mode", "gamma", "vi_tolerance", "vi_max_sweeps", "ql_episodes", "ql_lr_exponent",
                   "ql_epsilon_start", "ql_epsilon_end"},
               "train");
    const auto mode = read_string(t, "mode", "value-iteration", "train");
    if (mode == "value-iteration") c.train.mode = TrainMode::kValueIteration;
    else if (mode == "q-learning") c.train.mode = TrainMode::kQLearning;
    else config_error("train.mode must be 'value-iteration' or 'q-learning'");
    read_double(t, "gamma", c.train.gamma, "train");
    read_double(t, "vi_tolerance", c.train.vi_tolerance, "train");
    read_integer(t, "vi_max_sweeps", c.train.vi_max_sweeps, "train");
    read_integer(t, "ql_episodes", c.train.ql_episodes, "train");
    read_double(t, "ql_lr_exponent", c.train.ql_lr_exponent, "train");
    read_double(t, "ql_epsilon_start", c.train.ql_epsilon_start, "train");
    read_double(t, "ql_epsilon_end", c.train.ql_epsilon_end, "train");
  }
  if (root.contains("alphas")) {
    const auto& a = root["alphas"];
    if (!a.is_array()) config_error("alphas must be an array");
    c.alphas.clear();
    for (const auto& v : a) {
      if (!v.is_number()) config_error("alphas must contain numbers");
      c.alphas.push_back(v.get<double>());
    }
  }
  read_integer(root, "sample_size", c.sample_size, "config");
  read_double(root, "beta", c.beta, "config");
  if (root.contains("svr")) {
    const auto& s = root["svr"];
    check_keys(s, {"defaults", "per_alpha"}, "svr");
    if (s.contains("defaults")) c.svr_defaults = parse_svr_setting(s["defaults"], "svr.defaults", false);
    if (s.contains("per_alpha")) {
      if (!s["per_alpha"].is_array()) config_error("svr.per_alpha must be an array");
      for (std::size_t i = 0; i < s["per_alpha"].size(); ++i)
        c.svr_per_alpha.push_back(
            parse_svr_setting(s["per_alpha"][i], "svr.per_alpha[" + std::to_string(i) + "]", true));
    }
  }
  if (root.contains("sim")) {
    const auto& s = root["sim"];
    check_keys(s, {"n_games", "master_seed", "triggers"}, "sim");
    read_integer(s, "n_games", c.n_games, "sim");
    read_integer(s, "master_seed", c.master_seed, "sim");
    if (s.contains("triggers")) {
      if (!s["triggers"].is_array()) config_error("sim.triggers must be an array");
      c.triggers.clear();
      for (const auto& v : s["triggers"]) {
        if (!v.is_string()) config_error("sim.triggers must contain strings");
        try {
          c.triggers.push_back(parse_trigger_kind(v.get<std::string>()));
        } catch (const Error& e) {
          config_error(std::string("sim.triggers: ") + e.what());
        }
      }
    }
  }
  if (root.contains("paths")) {
    const auto& p = root["paths"];
    check_keys(p, {"artifacts", "results"}, "paths");
    c.artifacts_dir = read_string(p, "artifacts", c.artifacts_dir.string(), "paths");
    c.results_dir = read_string(p, "results", c.results_dir.string(), "paths");
  }
  if (root.contains("reference")) {
    const auto& r = root["reference"];
    check_keys(r, {"iota", "gamma", "rows"}, "reference");
    read_double(r, "iota", c.reference_iota, "reference");
    read_double(r, "gamma", c.reference_gamma, "reference");
    if (r.contains("rows")) {
      if (!r["rows"].is_array()) config_error("reference.rows must be an array");
      for (std::size_t i = 0; i < r["rows"].size(); ++i) {
        const auto& row = r["rows"][i];
        const std::string where = "reference.rows[" + std::to_string(i) + "]";
        check_keys(row, {"alpha", "eps_hi", "delta"}, where);
        ReferenceRow rr;
        read_double(row, "alpha", rr.alpha, where);
        read_double(row, "eps_hi", rr.eps_hi, where);
        read_optional_double(row, "delta", rr.delta, where);
        c.reference_rows.push_back(rr);
      }
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  try {
    return parse_config(os.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.alpha) {
    if (!(*o.alpha >= 0.0) || !std::isfinite(*o.alpha)) config_error("--alpha must be finite and >= 0");
    c.alphas = {*o.alpha};
  }
  if (o.trigger) c.triggers = {*o.trigger};
  if (o.seed) c.master_seed = *o.seed;
  if (o.games) c.n_games = *o.games;
  if (o.arena) c.env.arena_width = *o.arena;
  c.validate();
}

std::uint64_t training_seed(const RunConfig& c) { return derive_seed(c.master_seed, 0x7261696eULL); }

std::uint64_t sampling_seed(const RunConfig& c, double alpha) {
  return derive_seed(derive_seed(c.master_seed, 0x73616d70ULL), std::bit_cast<std::uint64_t>(alpha));
}

std::uint64_t simulation_seed(const RunConfig& c) { return derive_seed(c.master_seed, 0x73696d75ULL); }

StageResult cmd_train(const RunConfig& c) {
  ensure_dir(c.artifacts_dir);
  ArtifactStore store(c.artifacts_dir, c.hash());
  const ParticleTag env(c.env);
  TrainConfig tc = c.train;
  tc.seed = training_seed(c);

  QTable q;
  Json meta;
  if (tc.mode == TrainMode::kValueIteration) {
    q = value_iteration(env, tc.gamma, tc.vi_tolerance, tc.vi_max_sweeps);
  } else {
    auto r = q_learning(env, tc, c.env.step_cap);
    q = std::move(r.table);
    std::size_t well_visited = 0;
    for (const auto v : r.visits)
      if (v >= 50) ++well_visited;
    meta["pairs_visited_50"] = well_visited;
  }
  const PolicyTable policy = greedy_policy(q, env);

  double v_sum = 0.0;
  for (std::size_t s = 0; s < q.state_count(); ++s) v_sum += v_star(q, s);
  const auto width = static_cast<std::uint32_t>(c.env.arena_width);
  const auto agents = static_cast<std::uint32_t>(env.agent_count());
  write_qtable(store.path("qtable.bin"), q, width, agents);
  write_policy(store.path("policy.bin"), policy, width);

  meta["format"] = "ETMQ";
  meta["version"] = kQTableFormatVersion;
  meta["arena_width"] = width;
  meta["n_agents"] = agents;
  meta["state_count"] = q.state_count();
  meta["action_count"] = q.action_count();
  meta["gamma"] = q.gamma();
  meta["mode"] = mode_name(tc.mode);
  meta["seed"] = tc.seed;
  meta["bellman_residual"] = bellman_residual(env, q);
  meta["iota"] = suboptimality_gap(q);
  meta["mean_v_star"] = v_sum / static_cast<double>(q.state_count());
  write_json(store.path("qtable.meta.json"), meta);

  const auto key = train_key(c);
  StageResult r;
  for (const char* name : {"qtable.bin", "policy.bin", "qtable.meta.json"}) {
    store.record(name, key);
    r.written.push_back(store.path(name));
  }
  return r;
}

StageResult cmd_surrogate(const RunConfig& c) {
  ArtifactStore store(c.artifacts_dir, c.hash());
  const auto t = load_trained(c, store);
  const ParticleTag env(c.env);
  StageResult r;
  for (const double a : c.alphas) {
    const auto set = sample_surrogates(env, t.q, t.policy, a, c.sample_size, sampling_seed(c, a));
    const auto name = samples_name(a);
    write_samples_csv(store.path(name), set);
    store.record(name, samples_key(c, a, t));
    r.written.push_back(store.path(name));
  }
  return r;
}

StageResult cmd_fit(const RunConfig& c) {
  ArtifactStore store(c.artifacts_dir, c.hash());
  const auto t = load_trained(c, store);
  StageResult r;
  std::vector<std::string> failed;
  for (const double a : c.alphas) {
    const auto sname = samples_name(a);
    const auto sha = store.require(sname, samples_key(c, a, t), "etm surrogate");
    const auto set = read_samples_csv(store.path(sname));
    const SvrSetting s = c.svr_for(a);

    SvrParams p;
    if (s.rho) {
      p.rho = *s.rho;
      p.tau = *s.tau;
    } else if (s.nu) {
      const auto pp = program_params_from_nu_c(*s.nu, *s.c, set.size());
      p.rho = pp.rho;
      p.tau = pp.tau;
    } else {
      config_error("svr: no rho/tau or nu/C given for alpha " + format_double(a));
    }
    std::vector<GlobalState> xs;
    std::vector<double> ys;
    for (const auto& smp : set.samples) {
      xs.push_back(smp.x);
      ys.push_back(smp.gamma);
    }
    p.kernel.bandwidth = s.bandwidth ? *s.bandwidth : default_bandwidth(xs);
    p.tolerance = s.tolerance;
    p.max_iterations = s.max_iterations;

    SvrFit fit;
    std::string status = "converged";
    try {
      fit = fit_svr(xs, ys, p);
    } catch (const SvrNonConvergence& e) {
      fit = e.best();
      status = "non-convergence";
      failed.push_back(format_double(a));
      r.warnings.push_back("alpha " + format_double(a) + ": " + e.what());
    }
    const auto& m = fit.model;
    // Residuals of boundary points carry solver noise up to the KKT tolerance.
    const std::size_t s_star = count_outliers(m, set, p.tolerance);
    const auto bounds = epsilon_bounds(set.size(), s_star, c.beta);

    double mean_y = 0.0;
    for (const double y : ys) mean_y += y;
    mean_y /= static_cast<double>(ys.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double e = ys[i] - m.predict(xs[i]);
      ss_res += e * e;
      ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
    }
    const double r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);

    write_svr_model(store.path(model_name(a)), m);
    Json j{{"alpha", a},
           {"status", status},
           {"sample_size", set.size()},
           {"beta", c.beta},
           {"rho", p.rho},
           {"tau", p.tau},
           {"nu", s.nu ? Json(*s.nu) : Json(nullptr)},
           {"C", s.c ? Json(*s.c) : Json(nullptr)},
           {"bandwidth", p.kernel.bandwidth},
           {"kappa", m.kappa},
           {"bias", m.bias},
           {"n_support", m.support.size()},
           {"s_star", s_star},
           {"outlier_fraction", static_cast<double>(s_star) / static_cast<double>(set.size())},
           {"eps_hi", bounds.eps_hi},
           {"eps_lo", bounds.eps_lo},
           {"r2", r2},
           {"iterations", fit.diagnostics.iterations},
           {"kkt_violation", fit.diagnostics.kkt_violation},
           {"tube_active", fit.diagnostics.tube_active},
           {"primal_objective", primal_objective(m, xs, ys)},
           {"dual_objective", fit.diagnostics.dual_objective}};
    write_json(store.path(fit_name(a)), j);
    const auto key = fit_key(c, a, sha);
    store.record(model_name(a), key);
    store.record(fit_name(a), key);
    r.written.push_back(store.path(model_name(a)));
    r.written.push_back(store.path(fit_name(a)));
  }
  if (!failed.empty()) {
    std::string list;
    for (const auto& f : failed) list += (list.empty() ? "" : ",") + f;
    throw Error(ErrorCode::kNonConvergence, "svr fit did not converge for alpha " + list +
                                                " (best iterates were written)");
  }
  return r;
}

StageResult cmd_bounds(const RunConfig& c) {
  ArtifactStore store(c.artifacts_dir, c.hash());
  const auto t = load_trained(c, store);
  ensure_dir(c.results_dir);
  const double gamma = c.train.gamma;
  const double iota = t.meta.at("iota").get<double>();
  const double v0 = t.meta.at("mean_v_star").get<double>();
  StageResult r;

  std::ostringstream b;
  b << "alpha,trigger_kind,gamma,iota,mean_v_star,eps_hi,eps_lo,s_star,theorem1,theorem1_from_zero,delta,delta_from_zero\n";
  for (const double a : c.alphas) {
    // The exact surrogate has no approximation risk.
    b << format_double(a) << ",exact," << format_double(gamma) << ',' << format_double(iota) << ','
      << format_double(v0) << ",0,0,," << format_double(theorem1_bound(v0, a, gamma)) << ','
      << format_double(theorem1_bound_from_zero(v0, a, gamma)) << ','
      << opt_cell(delta_or_gap(a, 0.0, iota, gamma, false)) << ','
      << opt_cell(delta_or_gap(a, 0.0, iota, gamma, true)) << '\n';
    const auto f = load_fit(c, a, t, store);
    if (!f.available) {
      r.warnings.push_back("alpha " + format_double(a) + ": no SVR fit; svr bounds skipped");
      continue;
    }
    b << format_double(a) << ",svr," << format_double(gamma) << ',' << format_double(iota) << ','
      << format_double(v0) << ',' << format_double(f.eps_hi) << ',' << format_double(f.eps_lo) << ','
      << f.s_star << ',' << format_double(theorem1_bound(v0, a, gamma)) << ','
      << format_double(theorem1_bound_from_zero(v0, a, gamma)) << ','
      << opt_cell(delta_or_gap(a, f.eps_hi, iota, gamma, false)) << ','
      << opt_cell(delta_or_gap(a, f.eps_hi, iota, gamma, true)) << '\n';
  }
  write_text(c.results_dir / "bounds.csv", b.str());
  r.written.push_back(c.results_dir / "bounds.csv");

  std::ostringstream d;
  d << "alpha,published_eps_hi,published_delta,delta,delta_from_zero\n";
  for (const auto& row : c.reference_rows) {
    d << format_double(row.alpha) << ',' << format_double(row.eps_hi) << ',' << opt_cell(row.delta) << ','
      << opt_cell(delta_or_gap(row.alpha, row.eps_hi, c.reference_iota, c.reference_gamma, false)) << ','
      << opt_cell(delta_or_gap(row.alpha, row.eps_hi, c.reference_iota, c.reference_gamma, true)) << '\n';
  }
  write_text(c.results_dir / "delta_reference.csv", d.str());
  r.written.push_back(c.results_dir / "delta_reference.csv");
  return r;
}

StageResult cmd_simulate(const RunConfig& c) {
  ArtifactStore store(c.artifacts_dir, c.hash());
  const auto t = load_trained(c, store);
  ensure_dir(c.results_dir);
  ArtifactStore results(c.results_dir, c.hash());
  const ParticleTag env(c.env);
  const RunSettings settings{c.train.gamma, c.env.step_cap, false};
  StageResult r;

  const auto run = [&](TriggerKind kind, double a, const TriggerPolicy& trig, const std::string& upstream) {
    const auto batch = run_batch(env, t.policy, trig, c.n_games, simulation_seed(c), settings);
    const auto label = run_label(kind, a);
    const auto episodes = "episodes_" + label + ".csv";
    const auto summary = "sim_" + label + ".json";
    write_episodes_csv(results.path(episodes), batch.episodes, alpha_free(kind) ? 0.0 : a, kind);
    const auto& s = batch.summary;
    write_json(results.path(summary), {{"trigger_kind", to_string(kind)},
                                       {"alpha", alpha_free(kind) ? 0.0 : a},
                                       {"games", s.games},
                                       {"seed", simulation_seed(c)},
                                       {"mean_return", s.mean_return},
                                       {"std_return", s.std_return},
                                       {"mean_length", s.mean_length},
                                       {"std_length", s.std_length},
                                       {"mean_msgs", s.mean_messages},
                                       {"std_msgs", s.std_messages},
                                       {"msg_rate", s.msg_rate}});
    const auto key = sim_key(c, kind, a, upstream);
    results.record(episodes, key);
    results.record(summary, key);
    r.written.push_back(results.path(episodes));
    r.written.push_back(results.path(summary));
  };

  for (const auto kind : c.triggers) {
    if (kind == TriggerKind::kFullComm) {
      run(kind, 0.0, TriggerPolicy::full_comm(), sim_upstream(c, kind, 0.0, t, store));
      continue;
    }
    if (kind == TriggerKind::kNever) {
      run(kind, 0.0, TriggerPolicy::never(), sim_upstream(c, kind, 0.0, t, store));
      continue;
    }
    for (const double a : c.alphas) {
      const auto upstream = sim_upstream(c, kind, a, t, store);
      if (kind == TriggerKind::kExact) {
        auto surrogate = std::make_shared<const ExactSurrogate>(env, t.q, t.policy, a);
        run(kind, a, TriggerPolicy::exact(std::move(surrogate)), upstream);
      } else {
        auto model = read_svr_model(store.path(model_name(a)));
        run(kind, a, TriggerPolicy::svr(env, SvrThreshold(std::move(model))), upstream);
      }
    }
  }
  return r;
}

StageResult cmd_report(const RunConfig& c) {
  ArtifactStore store(c.artifacts_dir, c.hash());
  const auto t = load_trained(c, store);
  if (!fs::exists(c.results_dir))
    throw Error(ErrorCode::kMissingArtifact, "results directory " + c.results_dir.string() + " does not exist");
  ArtifactStore results(c.results_dir, c.hash());
  const double gamma = c.train.gamma;
  const double iota = t.meta.at("iota").get<double>();
  StageResult r;

  struct Run {
    TriggerKind kind;
    double alpha;
    Json summary;
    std::string episodes;
  };
  std::vector<Run> runs;
  std::vector<std::string> gaps;
  const auto load_run = [&](TriggerKind kind, double a) -> std::optional<Run> {
    const auto label = run_label(kind, a);
    try {
      const auto key = sim_key(c, kind, a, sim_upstream(c, kind, a, t, store));
      results.require("sim_" + label + ".json", key, "etm simulate");
      results.require("episodes_" + label + ".csv", key, "etm simulate");
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kMissingArtifact && e.code() != ErrorCode::kStaleArtifact) throw;
      gaps.push_back(label + ": " + e.what());
      return std::nullopt;
    }
    return Run{kind, a, read_json(results.path("sim_" + label + ".json")),
               results.path("episodes_" + label + ".csv").string()};
  };
  for (const auto kind : c.triggers) {
    if (alpha_free(kind)) {
      if (auto run = load_run(kind, 0.0)) runs.push_back(std::move(*run));
      continue;
    }
    for (const double a : c.alphas)
      if (auto run = load_run(kind, a)) runs.push_back(std::move(*run));
  }
  if (runs.empty())
    throw Error(ErrorCode::kMissingArtifact, "no simulation results under " + c.results_dir.string() +
                                                 "; run `etm simulate` first");

  std::map<double, FitInfo> fits;
  for (const double a : c.alphas) fits[a] = load_fit(c, a, t, store);

  const auto find_run = [&](TriggerKind kind, double a) -> const Run* {
    for (const auto& run : runs)
      if (run.kind == kind && (alpha_free(kind) || same_alpha(run.alpha, a))) return &run;
    return nullptr;
  };
  const auto to_summary = [](const Json& j) {
    BatchSummary s;
    s.games = j.at("games").get<std::size_t>();
    s.mean_return = j.at("mean_return").get<double>();
    s.std_return = j.at("std_return").get<double>();
    s.mean_length = j.at("mean_length").get<double>();
    s.std_length = j.at("std_length").get<double>();
    s.mean_messages = j.at("mean_msgs").get<double>();
    s.std_messages = j.at("std_msgs").get<double>();
    s.msg_rate = j.at("msg_rate").get<double>();
    return s;
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // Table-style summaries: the alpha = 0 row is the full-communication
  // baseline, the remaining rows come from the triggered runs.
  std::ostringstream md;
  md << "# Self-triggered state sharing: run report\n\n"
     << "- config hash: `" << c.hash() << "`\n"
     << "- arena: " << c.env.arena_width << "x" << c.env.arena_width << ", step cap " << c.env.step_cap
     << ", gamma " << format_double(gamma) << ", training: " << mode_name(c.train.mode) << "\n"
     << "- games per run: " << c.n_games << ", master seed " << c.master_seed << "\n"
     << "- iota (worst suboptimality gap): " << format_fixed(iota, 4)
     << ", mean V* over uniform starts: " << format_fixed(t.meta.at("mean_v_star").get<double>(), 4) << "\n\n";

  const Run* baseline = find_run(TriggerKind::kFullComm, 0.0);
  for (const auto kind : {TriggerKind::kExact, TriggerKind::kSvr}) {
    if (std::find(c.triggers.begin(), c.triggers.end(), kind) == c.triggers.end()) continue;
    std::vector<SummaryRow> rows;
    md << "## Trigger: " << to_string(kind) << "\n\n"
       << "| alpha | run | E[return] | mean length | messages/game | msg rate | eps_hi | delta | delta (1/(1-gamma)) |\n"
       << "|---|---|---|---|---|---|---|---|---|\n";
    if (baseline) {
      rows.push_back({0.0, to_summary(baseline->summary), 0.0, 0.0});
    }
    for (const double a : c.alphas) {
      const Run* run = (a == 0.0 && baseline) ? nullptr : find_run(kind, a);
      if (a == 0.0 && baseline) continue;
      if (!run) continue;
      double eps = 0.0;
      if (kind == TriggerKind::kSvr) eps = fits[a].available ? fits[a].eps_hi : nan;
      const auto d = std::isnan(eps) ? std::nullopt : delta_or_gap(a, eps, iota, gamma, false);
      rows.push_back({a, to_summary(run->summary), eps, d ? *d : nan});
    }
    for (const auto& row : rows) {
      const bool base = row.alpha == 0.0 && baseline;
      const auto& s = row.summary;
      const auto dz = std::isnan(row.eps_hi) ? std::nullopt
                                             : delta_or_gap(row.alpha, row.eps_hi, iota, gamma, true);
      md << "| " << format_double(row.alpha) << " | " << (base ? "full-comm" : std::string(to_string(kind)))
         << " | " << format_fixed(s.mean_return, 2) << " ± " << format_fixed(s.std_return, 2) << " | "
         << format_fixed(s.mean_length, 2) << " ± " << format_fixed(s.std_length, 2) << " | "
         << format_fixed(s.mean_messages, 2) << " ± " << format_fixed(s.std_messages, 2) << " | "
         << format_fixed(s.msg_rate, 2) << " | "
         << (std::isnan(row.eps_hi) ? std::string("n/a") : format_fixed(row.eps_hi, 3)) << " | "
         << (std::isnan(row.delta) ? std::string("n/a") : format_fixed(row.delta, 2)) << " | "
         << fixed_or_gap(base ? std::optional<double>(0.0) : dz, 2) << " |\n";
    }
    md << "\n";
    const auto path = c.results_dir / ("summary_" + std::string(to_string(kind)) + ".csv");
    write_summary_csv(path, rows);
    r.written.push_back(path);
  }

  md << "## All runs\n\n| trigger | alpha | games | E[return] | std | msg rate |\n|---|---|---|---|---|---|\n";
  for (const auto& run : runs) {
    const auto s = to_summary(run.summary);
    md << "| " << to_string(run.kind) << " | " << (alpha_free(run.kind) ? "-" : format_double(run.alpha))
       << " | " << s.games << " | " << format_fixed(s.mean_return, 3) << " | " << format_fixed(s.std_return, 3)
       << " | " << format_fixed(s.msg_rate, 3) << " |\n";
  }
  md << "\n";

  md << "## SVR surrogates\n\n| alpha | rho | tau | bandwidth | kappa | s*/S | eps_lo | eps_hi | R^2 | status |\n"
     << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const double a : c.alphas) {
    const auto& f = fits[a];
    if (!f.available) {
      md << "| " << format_double(a) << " | n/a | n/a | n/a | n/a | n/a | n/a | n/a | n/a | not fitted |\n";
      continue;
    }
    const auto& j = f.json;
    md << "| " << format_double(a) << " | " << format_double(j.at("rho").get<double>()) << " | "
       << format_double(j.at("tau").get<double>()) << " | " << format_fixed(j.at("bandwidth").get<double>(), 5)
       << " | " << format_fixed(j.at("kappa").get<double>(), 5) << " | "
       << format_fixed(j.at("outlier_fraction").get<double>(), 4) << " | " << format_fixed(f.eps_lo, 4) << " | "
       << format_fixed(f.eps_hi, 4) << " | " << format_fixed(j.at("r2").get<double>(), 3) << " | "
       << j.at("status").get<std::string>() << " |\n";
  }
  md << "\n";

  md << "## Loss bound at the published inputs\n\n"
     << "iota = " << format_double(c.reference_iota) << ", gamma = " << format_double(c.reference_gamma) << "\n\n"
     << "| alpha | published eps_hi | published delta | delta (printed formula) | delta (1/(1-gamma)) |\n"
     << "|---|---|---|---|---|\n";
  for (const auto& row : c.reference_rows) {
    md << "| " << format_double(row.alpha) << " | " << format_fixed(row.eps_hi, 3) << " | "
       << fixed_or_gap(row.delta, 2) << " | "
       << fixed_or_gap(delta_or_gap(row.alpha, row.eps_hi, c.reference_iota, c.reference_gamma, false), 2)
       << " | "
       << fixed_or_gap(delta_or_gap(row.alpha, row.eps_hi, c.reference_iota, c.reference_gamma, true), 2)
       << " |\n";
  }
  md << "\n";

  if (!gaps.empty()) {
    md << "## Gaps\n\n";
    for (const auto& g : gaps) md << "- " << g << "\n";
    md << "\n";
    r.warnings.insert(r.warnings.end(), gaps.begin(), gaps.end());
  }

  // Plot-ready long format: one row per (run, game, metric).
  std::ostringstream lf;
  lf << "trigger_kind,alpha,game_id,metric,value\n";
  for (const auto& run : runs) {
    std::ifstream in(run.episodes);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto f = split(line, ',');
      if (f.size() != 7) throw Error(ErrorCode::kIo, run.episodes + ": malformed row");
      const std::string prefix = std::string(f[2]) + "," + std::string(f[1]) + "," + std::string(f[0]) + ",";
      lf << prefix << "return," << f[3] << '\n' << prefix << "length," << f[4] << '\n'
         << prefix << "messages," << f[5] << '\n';
    }
  }
  write_text(c.results_dir / "long.csv", lf.str());
  write_text(c.results_dir / "report.md", md.str());
  r.written.push_back(c.results_dir / "long.csv");
  r.written.push_back(c.results_dir / "report.md");
  return r;
}

}  // namespace etm
