// Command-line harness: generate / run / diagnose / plan.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O
// error. `diagnose` also exits 3 when any check fails.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spider3p/diagnostics.hpp"
#include "spider3p/errors.hpp"
#include "spider3p/experiment.hpp"
#include "spider3p/kernels.hpp"

namespace {

using namespace spider3p;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonFlags* flags, bool config_required) {
  auto* opt = cmd->add_option("--config,-c", flags->config_path, "JSON config file");
  if (config_required) opt->required();
  cmd->add_option("--seed", [flags](const std::vector<std::string>& vals) {
        flags->seed = std::stoull(vals.front());
        return true;
      }, "override the base seed");
  cmd->add_option("--out", [flags](const std::vector<std::string>& vals) {
        flags->out_dir = vals.front();
        return true;
      }, "override the output directory");
  cmd->add_option("--threads", [flags](const std::vector<std::string>& vals) {
        flags->threads = std::stoi(vals.front());
        return true;
      }, "worker threads for replications");
}

harness::ExperimentConfig load_with_overrides(const CommonFlags& flags) {
  harness::ExperimentConfig config = harness::load_experiment_config(flags.config_path);
  if (flags.seed) config.replications.base_seed = *flags.seed;
  if (flags.out_dir) config.output.dir = *flags.out_dir;
  if (flags.threads) config.replications.threads = *flags.threads;
  return config;
}

int run_generate(const CommonFlags& flags, const std::optional<int>& n,
                 const std::optional<int>& d, const std::optional<double>& sigma2,
                 const std::optional<double>& theta_scale) {
  harness::ProblemConfig problem;
  std::string out_dir = "out";
  if (!flags.config_path.empty()) {
    const harness::ExperimentConfig config = harness::load_experiment_config(flags.config_path);
    problem = config.problem;
    out_dir = config.output.dir;
  } else {
    problem.synthetic.emplace();
  }
  if (!problem.synthetic) {
    throw ConfigError("generate: the config problem block must be synthetic");
  }
  if (n) problem.synthetic->n = *n;
  if (d) problem.synthetic->d = *d;
  if (sigma2) problem.sigma2 = *sigma2;
  if (theta_scale) problem.synthetic->theta_scale = *theta_scale;
  if (flags.seed) problem.synthetic->seed = *flags.seed;
  if (flags.out_dir) out_dir = *flags.out_dir;
  if (problem.synthetic->n < 1 || problem.synthetic->d < 1) {
    throw ConfigError("generate: need n >= 1 and d >= 1 (flags --n/--d or config)");
  }
  harness::generate_dataset(problem, out_dir, &std::cout);
  return 0;
}

int run_run(const CommonFlags& flags) {
  const harness::ExperimentConfig config = load_with_overrides(flags);
  harness::run_experiment(config, &std::cout);
  return 0;
}

int run_diagnose(const CommonFlags& flags) {
  const harness::ExperimentConfig config = load_with_overrides(flags);
  const harness::ProblemInstance problem = harness::build_problem(config.problem);
  harness::DiagnosticsOptions opts;
  if (flags.seed) opts.seed = *flags.seed;
  const harness::DiagnosticsReport report = harness::run_diagnostics(problem, opts);
  harness::print_report(report, std::cout);
  return report.all_passed() ? 0 : 3;
}

int run_plan(std::int64_t n, double epsilon) {
  const ComplexityPlan plan = plan_complexity(n, epsilon);
  std::cout << "b      = " << plan.b << "\n"
            << "k_in   = " << plan.k_in << "\n"
            << "k_out  = " << plan.k_out << "\n"
            << "m      = " << plan.m << "\n"
            << "N_P    = " << plan.predicted.prox_calls << "\n"
            << "N_A    = " << plan.predicted.component_evals << "\n"
            << "N_MC   = " << plan.predicted.mc_draws << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3P-SPIDER: perturbed prox-preconditioned variance-reduced optimizer"};
  app.require_subcommand(1);

  CommonFlags gen_flags, run_flags, diag_flags;
  std::optional<int> gen_n, gen_d;
  std::optional<double> gen_sigma2, gen_theta_scale;

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic dataset CSV + sidecar");
  add_common(gen, &gen_flags, false);
  gen->add_option("--n", [&gen_n](const std::vector<std::string>& v) {
        gen_n = std::stoi(v.front());
        return true;
      }, "rows");
  gen->add_option("--d", [&gen_d](const std::vector<std::string>& v) {
        gen_d = std::stoi(v.front());
        return true;
      }, "covariate dimension");
  gen->add_option("--sigma2", [&gen_sigma2](const std::vector<std::string>& v) {
        gen_sigma2 = std::stod(v.front());
        return true;
      }, "latent variance");
  gen->add_option("--theta-scale", [&gen_theta_scale](const std::vector<std::string>& v) {
        gen_theta_scale = std::stod(v.front());
        return true;
      }, "norm of the ground-truth parameter");

  CLI::App* run = app.add_subcommand("run", "run replicated experiments, write metrics CSVs");
  add_common(run, &run_flags, true);

  CLI::App* diag = app.add_subcommand("diagnose", "run the numerical diagnostics suite");
  add_common(diag, &diag_flags, true);

  std::int64_t plan_n = 0;
  double plan_eps = 0.0;
  CLI::App* plan = app.add_subcommand("plan", "print the near-optimal parameter plan");
  plan->add_option("--n", plan_n, "number of components")->required();
  plan->add_option("--epsilon", plan_eps, "target stationarity")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return run_generate(gen_flags, gen_n, gen_d, gen_sigma2, gen_theta_scale);
    if (run->parsed()) return run_run(run_flags);
    if (diag->parsed()) return run_diagnose(diag_flags);
    if (plan->parsed()) return run_plan(plan_n, plan_eps);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
