// Command-line front end: one subcommand per experiment driver.
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "unlearn/error.h"
#include "unlearn/harness.h"
#include "unlearn/logging.h"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;  // key=value
};

using Driver = std::function<unlearn::RunReport(const unlearn::ExperimentConfig&,
                                                const fs::path&)>;

void AddCommon(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "flat key = value settings file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "overrides the config seed");
  cmd->add_option("--out", flags.out, "output directory")->required();
  cmd->add_option("--set", flags.overrides, "extra key=value setting (repeatable)");
}

unlearn::ExperimentConfig BuildConfig(const CommonFlags& flags) {
  unlearn::ExperimentConfig config =
      flags.config.empty() ? unlearn::ExperimentConfig{}
                           : unlearn::ExperimentConfig::Load(flags.config);
  for (const std::string& kv : flags.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw unlearn::ConfigError("--set expects key=value, got '" + kv + "'");
    }
    config.Set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (flags.seed) config.Set("seed", std::to_string(*flags.seed));
  return config;
}

int Run(const Driver& driver, const unlearn::ExperimentConfig& config,
        const std::string& out) {
  const unlearn::RunReport report = driver(config, out);
  return report.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Information-theoretic unlearning experiments and audits"};
  app.require_subcommand(1);

  struct Entry {
    const char* name;
    const char* help;
    Driver driver;
  };
  const std::vector<Entry> entries = {
      {"forget-gaussian", "1D residual-network unlearning of a Gaussian bump",
       unlearn::RunForgetGaussian},
      {"unlearn", "marginal unlearning of a classifier", unlearn::RunUnlearnClassifier},
      {"feature-unlearn", "feature unlearning frontier over lambda",
       unlearn::RunFeatureUnlearn},
      {"barycenter", "Wasserstein-2 barycenter neutralisation", unlearn::RunBarycenter},
      {"audit", "certificate and log-odds audit of binned outputs", unlearn::RunAudit},
      {"synth", "write synthetic input CSVs", unlearn::RunSynth},
  };

  std::vector<CommonFlags> flags(entries.size());
  std::vector<CLI::App*> commands;
  std::string audit_outputs;
  std::optional<double> audit_epsilon;
  std::string synth_kind;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CLI::App* cmd = app.add_subcommand(entries[i].name, entries[i].help);
    AddCommon(cmd, flags[i]);
    commands.push_back(cmd);
    if (std::string(entries[i].name) == "audit") {
      cmd->add_option("--outputs", audit_outputs, "CSV with output_bin,z columns")
          ->check(CLI::ExistingFile);
      cmd->add_option("--epsilon", audit_epsilon, "log-odds budget");
    }
    if (std::string(entries[i].name) == "synth") {
      cmd->add_option("--kind", synth_kind, "classes, feature or groups");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (!commands[i]->parsed()) continue;
      unlearn::ExperimentConfig config = BuildConfig(flags[i]);
      if (!audit_outputs.empty()) {
        config.Set("outputs", fs::absolute(audit_outputs).string());
      }
      if (audit_epsilon) config.Set("epsilon", fmt::format("{}", *audit_epsilon));
      if (!synth_kind.empty()) config.Set("kind", synth_kind);
      return Run(entries[i].driver, config, flags[i].out);
    }
  } catch (const unlearn::VacuousCertificateError& e) {
    unlearn::Log().error("{} (admissible mu = {})", e.what(), e.max_admissible_mu());
    return unlearn::ExitCodeFor(e.kind());
  } catch (const unlearn::Error& e) {
    unlearn::Log().error("{}", e.what());
    return unlearn::ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    unlearn::Log().error("unexpected failure: {}", e.what());
    return 1;
  }
  return 0;
}
