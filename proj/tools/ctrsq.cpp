#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ctrsq/experiment.hpp"

namespace {

enum Exit { ok = 0, runtime_failure = 1, config_failure = 2, divergence = 3, diagnostic = 4 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "results";
  std::optional<unsigned> threads;
  bool assert_mode = false;
};

ctrsq::ExperimentConfig load(const Globals& g) {
  auto cfg = g.config.empty() ? ctrsq::ExperimentConfig{} : ctrsq::load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  cfg.validate();
  return cfg;
}

int emit(const Globals& g, const ctrsq::experiment::CommandResult& r) {
  for (const auto& m : r.messages) std::cout << m << '\n';
  for (const auto& [name, table] : r.files) {
    const auto path = std::filesystem::path(g.out) / name;
    ctrsq::write_csv(path, table);
    std::cout << "wrote " << path.string() << '\n';
  }
  return (g.assert_mode && r.diagnostic_failure) ? diagnostic : ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time risk-sensitive q-learning experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "key = value config file");
  app.add_option("--seed", g.seed, "root seed (overrides the config)");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads (overrides the config)")->check(CLI::PositiveNumber);
  app.add_flag("--assert", g.assert_mode, "exit 4 when a diagnostic fails");

  auto* oracle = app.add_subcommand("oracle", "closed-form constants and a sampled (t, x) table");
  auto* train = app.add_subcommand("train", "run the q-learning trainer");
  auto* evaluate = app.add_subcommand("evaluate", "evaluate baseline, oracle, trained and lifted policies");
  auto* sweep = app.add_subcommand("sweep", "mean TD update around the optimal parameters");
  auto* diagnose = app.add_subcommand("diagnose", "martingale, HJB and expansion diagnostics");
  auto* oce = app.add_subcommand("oce", "OCE value of a sample file");
  std::string utility = "linear";
  std::string samples;
  oce->add_option("--utility", utility, "linear | exponential:a | power:g | log | cvar:b | mean_variance:a | mmv:a")
      ->capture_default_str();
  oce->add_option("samples", samples, "newline-delimited sample file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return config_failure;
  }

  using namespace ctrsq::experiment;
  try {
    if (oce->parsed()) {
      const auto est = cmd_oce(utility, read_samples(samples));
      std::cout << "value = " << ctrsq::format_double(est.value) << '\n'
                << "eta_star = " << ctrsq::format_double(est.eta_star) << '\n';
      if (est.concavity_warning) std::cerr << "warning: utility failed the concavity spot check\n";
      return ok;
    }
    const auto cfg = load(g);
    if (oracle->parsed()) return emit(g, cmd_oracle(cfg));
    if (train->parsed()) return emit(g, cmd_train(cfg));
    if (evaluate->parsed()) return emit(g, cmd_evaluate(cfg));
    if (sweep->parsed()) return emit(g, cmd_sweep(cfg));
    if (diagnose->parsed()) return emit(g, cmd_diagnose(cfg));
  } catch (const ctrsq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return config_failure;
  } catch (const ctrsq::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return config_failure;
  } catch (const ctrsq::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return divergence;
  } catch (const ctrsq::NumericDomainError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return divergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return runtime_failure;
  }
  return ok;
}
