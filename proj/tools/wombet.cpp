// wombet: generate source datasets, train, verify the lower bound, plot.
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 divergence,
// 4 verification failure.

#include "wombet/config.hpp"
#include "wombet/errors.hpp"
#include "wombet/experiment.hpp"
#include "wombet/oracle.hpp"
#include "wombet/plot.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace wombet;

namespace {

constexpr int kOk = 0, kFailure = 1, kConfigError = 2, kDiverged = 3, kVerifyFailed = 4;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<long> budget;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "config file (flat key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "run a single seed instead of the config's seed list");
  cmd->add_option("--out", c.out, "output directory (default: the config's out_dir)");
  cmd->add_option("--budget", c.budget, "target environment steps");
  cmd->add_option("--set", c.sets, "override a config key, key=value (repeatable)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.budget) apply_setting(cfg, "budget", std::to_string(*c.budget));
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.out.empty()) cfg.out_dir = c.out;
  validate(cfg);
  return cfg;
}

int cmd_gen_data(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  for (auto seed : cfg.seeds) {
    const SourcePhase sp = run_source_phase(cfg, seed);
    const std::string tag = cfg.task + "_seed" + std::to_string(seed);
    save_dataset(out / ("dataset_" + tag + ".wds"), sp.generation.dataset);
    save_parameters(out / ("model_" + tag + ".wnn"), to_checkpoint(sp.model));
    const auto& ds = sp.generation.dataset;
    std::cout << tag << ": model holdout mse " << sp.report.mean_mse() << ", accepted "
              << ds.accepted_episodes() << "/" << ds.candidates.size() << " episodes (" << ds.rows.size()
              << " transitions), u_th " << sp.generation.resolved.u_threshold << ", J_th "
              << sp.generation.resolved.return_threshold << ", source steps " << sp.source_steps << "\n";
  }
  return kOk;
}

int cmd_train(const Common& c, const std::string& method) {
  const ExperimentConfig cfg = resolve(c);
  std::optional<Ablation> which;
  if (method.rfind("ablation:", 0) == 0)
    which = ablation_from_string(method.substr(9));
  else if (method != "wombet" && method != "sac")
    throw ConfigError("unknown method '" + method + "' (wombet | sac | ablation:<name>)");
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  bool diverged = false;
  for (auto seed : cfg.seeds) {
    RunMetrics m = which ? run_ablation(cfg, *which, seed)
                         : method == "sac" ? run_sac_baseline(cfg, seed)
                                           : run_wombet(cfg, seed);
    write_run(m, out);
    std::ofstream(out / (run_stem(m) + ".cfg"), std::ios::binary)
        << format_config(which ? ablate(cfg, *which) : cfg);
    std::cout << run_stem(m) << ": final return " << m.final_return() << " at " << m.rows.back().env_steps
              << " target steps (" << m.source_steps << " source steps)";
    if (m.diverged) std::cout << ", DIVERGED: " << m.error;
    std::cout << "\n";
    diverged = diverged || m.diverged;
  }
  return diverged ? kDiverged : kOk;
}

int cmd_verify(int policies, std::uint64_t seed, int n, int m, int horizon, double gamma) {
  using namespace wombet::oracle;
  const ChainMdp chain = make_chain(n, m, horizon, gamma, seed);
  const ChainMdp adversarial = make_adversarial_chain(n, m, horizon);
  const auto random_report = certify_lower_bound(chain, policies, seed, 1.0);
  const auto adv_report = certify_lower_bound(adversarial, policies, seed, 1.0);
  const auto contrast = certify_lower_bound(adversarial, policies, seed, 0.5);
  std::cout << format_report("random chain, lambda = L_v", random_report) << "\n"
            << format_report("adversarial chain, lambda = L_v", adv_report) << "\n"
            << format_report("adversarial chain, lambda = L_v / 2 (contrast, violations expected)", contrast);
  const bool ok = random_report.clean() && adv_report.clean() && random_report.max_telescoping_error <= 1e-10 &&
                  adv_report.max_telescoping_error <= 1e-10;
  std::cout << (ok ? "certified" : "VIOLATIONS FOUND") << "\n";
  return ok ? kOk : kVerifyFailed;
}

int cmd_plot(const std::string& dir) {
  for (const auto& p : emit_plots(dir)) std::cout << p.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"WOMBET: world-model-based experience transfer"};
  app.require_subcommand(1);

  Common gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "fit the model on seed data and write a filtered source dataset");
  add_common(gen_cmd, gen);

  Common train;
  std::string method;
  auto* train_cmd = app.add_subcommand("train", "train on the target task");
  train_cmd->add_option("method", method, "wombet | sac | ablation:<fixed-alpha|reward-only|uncertainty-only|no-filter>")
      ->required();
  add_common(train_cmd, train);

  int policies = 100, n = 21, m = 3, horizon = 10;
  std::uint64_t vseed = 0;
  double gamma = 1.0;
  auto* verify_cmd = app.add_subcommand("verify", "certify the penalized lower bound on exact chain MDPs");
  verify_cmd->add_option("--policies", policies, "random policies per instance")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--seed", vseed, "seed for the chain and the policies");
  verify_cmd->add_option("--states", n, "chain states")->check(CLI::Range(3, 1000));
  verify_cmd->add_option("--actions", m, "chain actions")->check(CLI::Range(1, 50));
  verify_cmd->add_option("--horizon", horizon, "horizon")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--gamma", gamma, "discount (1 = undiscounted)")->check(CLI::Range(0.0, 1.0));

  std::string plot_dir;
  auto* plot_cmd = app.add_subcommand("plot", "write learning-curve SVGs from the metrics CSVs in a directory");
  plot_cmd->add_option("--out,dir", plot_dir, "metrics directory")->required();

  auto* keys_cmd = app.add_subcommand("keys", "list every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(train, method);
    if (*verify_cmd) return cmd_verify(policies, vseed, n, m, horizon, gamma);
    if (*plot_cmd) return cmd_plot(plot_dir);
    if (*keys_cmd) {
      const auto values = effective_config(ExperimentConfig{});
      for (const auto& doc : config_keys()) {
        std::string value;
        for (const auto& [k, v] : values)
          if (k == doc.key) value = v;
        std::cout << doc.key << " = " << value << "    # " << doc.help << "\n";
      }
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
