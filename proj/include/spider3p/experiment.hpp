#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "spider3p/baselines.hpp"
#include "spider3p/latent_logistic.hpp"
#include "spider3p/spider.hpp"

namespace spider3p::harness {

enum class AlgorithmName { spider, online_em, full_gradient };

struct ProblemConfig {
  std::optional<std::string> dataset_path;
  struct Synthetic {
    int n = 0;
    int d = 0;
    double theta_scale = 1.0;
    std::uint64_t seed = 0;
  };
  std::optional<Synthetic> synthetic;
  double sigma2 = 0.1;
  double tau = 1.0;
  int quad_nodes = 64;
};

struct AlgorithmConfig {
  AlgorithmName name = AlgorithmName::spider;
  int k_out = 1;
  int k_in = 1;
  int b = 1;
  bool gamma_star = false;
  double gamma = 0.1;
  double gamma_t0 = 0.0;
  MSchedule m = MSchedule::constant(1);
  RefreshMode refresh = RefreshMode::full;
  int b_prime = 0;
  SamplingMode sampling = SamplingMode::with_replacement;
  OracleMode oracle = OracleMode::automatic;
  int iterations = 100;  // online-em / full-prox-gradient step count
  LipschitzData::Aggregation lipschitz_rule = LipschitzData::Aggregation::max;
  std::optional<double> l_override;
  std::optional<double> l_gradw_override;
};

struct ReplicationConfig {
  int runs = 1;
  std::uint64_t base_seed = 0;
  int threads = 1;
};

struct OutputConfig {
  std::string dir = "out";
  int exact_delta_stride = 0;  // 0: exact Delta only at the stop time
  bool timing = false;         // wall_ms column values (breaks byte-reproducibility)
};

struct ExperimentConfig {
  ProblemConfig problem;
  AlgorithmConfig algorithm;
  ReplicationConfig replications;
  OutputConfig output;
};

// Strict parser: unknown keys anywhere are rejected.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

struct ProblemInstance {
  std::shared_ptr<const latent::Dataset> dataset;
  std::shared_ptr<const latent::OmegaMatrix> omega;
  std::shared_ptr<GradientOracle> oracle;
  Preconditioner precond;
  Regularizer reg;
  LipschitzData lipschitz;
  latent::ModelParams params;
  int quad_nodes = 64;
};

ProblemInstance build_problem(const ProblemConfig& config);

// Applies the aggregate overrides from the algorithm block.
LipschitzData effective_lipschitz(const ProblemInstance& problem,
                                  const AlgorithmConfig& algo);

RunConfig make_run_config(const ExperimentConfig& config, const ProblemInstance& problem,
                          std::uint64_t seed);

// Nearest-rank quantile: the ceil(q*N)-th smallest value, no interpolation.
double nearest_rank_quantile(std::vector<double> values, double q);

struct MetricsRow {
  int run_id = 0;
  int t = 0;
  int k = 0;
  std::int64_t cum_inner = 0;
  double delta_hat = 0.0;
  std::optional<double> delta_exact;
  double snorm2 = 0.0;
  std::int64_t n_p = 0;
  std::int64_t n_a = 0;
  std::int64_t n_mc = 0;
  double wall_ms = 0.0;
};

struct StopDraw {
  int run_id = 0;
  int tau = 0;
  int k = 0;
  double delta_hat = 0.0;
  std::optional<double> delta_exact;
};

struct ExperimentResult {
  std::string metrics_path;
  std::string summary_path;
  std::string stop_path;
  std::string summary_json_path;
  std::string config_echo_path;
  std::vector<MetricsRow> rows;      // sorted by (run_id, t, k)
  std::vector<StopDraw> stop_draws;  // spider only
  double mean_delta_hat_stop = 0.0;
  double se_delta_hat_stop = 0.0;
};

// Runs all replications (concurrently when threads > 1), writes metrics.csv,
// summary.csv, stop_times.csv, summary.json, effective_config.json.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

// Synthetic dataset + provenance sidecar (seed, theta_star, generator spec);
// returns the dataset path.
std::string generate_dataset(const ProblemConfig& problem, const std::string& out_dir,
                             std::ostream* log = nullptr);

}  // namespace spider3p::harness
