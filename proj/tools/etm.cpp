// Command-line driver for the experiment pipeline.
//
//   etm <train|surrogate|fit|bounds|simulate|report> --config <path>
//       [--alpha A] [--trigger KIND] [--seed N] [--games N] [--arena W]
//
// On failure prints one line "error: code=<name> message=<text>" to stderr.

#include <cstdlib>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "etm/error.hpp"
#include "etm/harness.hpp"

namespace {

void print_error(std::string_view code, const std::string& message) {
  std::string flat = message;
  for (auto& ch : flat)
    if (ch == '\n') ch = ' ';
  std::cerr << "error: code=" << code << " message=" << flat << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train policies, learn robustness surrogates and simulate self-triggered state sharing"};
  app.require_subcommand(1, 1);

  struct Options {
    std::string config;
    std::optional<double> alpha;
    std::optional<std::string> trigger;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> games;
    std::optional<int> arena;
  } opt;

  using Stage = std::function<etm::StageResult(const etm::RunConfig&)>;
  const std::map<std::string, std::pair<Stage, std::string>> stages{
      {"train", {etm::cmd_train, "Compute Q*, V* and the greedy joint policy"}},
      {"surrogate", {etm::cmd_surrogate, "Label uniformly sampled states with the exact robustness surrogate"}},
      {"fit", {etm::cmd_fit, "Fit the SVR surrogate and its scenario risk bounds"}},
      {"bounds", {etm::cmd_bounds, "Evaluate the performance-loss bounds"}},
      {"simulate", {etm::cmd_simulate, "Run batches of games under each trigger"}},
      {"report", {etm::cmd_report, "Assemble markdown and CSV tables from the results"}},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, stage] : stages) {
    auto* sub = app.add_subcommand(name, stage.second);
    sub->add_option("--config", opt.config, "Run configuration (JSON)")->required();
    sub->add_option("--alpha", opt.alpha, "Restrict the sweep to one sensitivity value");
    sub->add_option("--trigger", opt.trigger, "Restrict to one trigger: full-comm, exact, svr, never");
    sub->add_option("--seed", opt.seed, "Override the master seed");
    sub->add_option("--games", opt.games, "Override the number of games per run");
    sub->add_option("--arena", opt.arena, "Override the arena width");
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    auto config = etm::load_config(opt.config);
    etm::Overrides ov;
    ov.alpha = opt.alpha;
    if (opt.trigger) ov.trigger = etm::parse_trigger_kind(*opt.trigger);
    ov.seed = opt.seed;
    ov.games = opt.games;
    ov.arena = opt.arena;
    etm::apply_overrides(config, ov);

    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      const auto result = stages.at(name).first(config);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
      for (const auto& p : result.written) std::cout << "wrote " << p.string() << '\n';
    }
    return EXIT_SUCCESS;
  } catch (const etm::Error& e) {
    print_error(etm::error_code_name(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}
