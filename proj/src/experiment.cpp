#include "spider3p/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>
#include <tuple>

#include "spider3p/errors.hpp"

namespace spider3p::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void expect_object(const json& j, const std::string& ctx) {
  if (!j.is_object()) throw ConfigError("config: '" + ctx + "' must be an object");
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("config: unknown key '" + ctx + "." + it.key() + "'");
  }
}

template <typename T>
T require(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) throw ConfigError("config: missing key '" + ctx + "." + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + ctx + "." + key + "'");
  }
}

template <typename T>
T optional_or(const json& j, const char* key, const std::string& ctx, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + ctx + "." + key + "'");
  }
}

MSchedule parse_m_schedule(const json& j, const std::string& ctx) {
  MSchedule m;
  if (j.is_number_integer()) {
    m = MSchedule::constant(j.get<int>());
  } else if (j.is_array()) {
    m.segments.clear();
    for (const json& seg : j) {
      expect_object(seg, ctx + ".m[]");
      reject_unknown_keys(seg, {"from_t", "m"}, ctx + ".m[]");
      m.segments.push_back({require<int>(seg, "from_t", ctx + ".m[]"),
                            require<int>(seg, "m", ctx + ".m[]")});
    }
  } else {
    throw ConfigError("config: '" + ctx + ".m' must be an integer or a segment array");
  }
  m.validate();
  return m;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j) {
  expect_object(j, "<root>");
  reject_unknown_keys(j, {"problem", "algorithm", "replications", "output"}, "<root>");
  ExperimentConfig config;

  const json& p = j.contains("problem") ? j.at("problem") : json::object();
  expect_object(p, "problem");
  reject_unknown_keys(p, {"dataset", "synthetic", "sigma2", "tau", "quad_nodes"},
                      "problem");
  if (p.contains("dataset") && p.contains("synthetic")) {
    throw ConfigError("config: 'problem' must name either a dataset or a synthetic spec");
  }
  if (p.contains("dataset")) {
    config.problem.dataset_path = require<std::string>(p, "dataset", "problem");
  } else if (p.contains("synthetic")) {
    const json& s = p.at("synthetic");
    expect_object(s, "problem.synthetic");
    reject_unknown_keys(s, {"n", "d", "theta_scale", "seed"}, "problem.synthetic");
    ProblemConfig::Synthetic syn;
    syn.n = require<int>(s, "n", "problem.synthetic");
    syn.d = require<int>(s, "d", "problem.synthetic");
    syn.theta_scale = optional_or<double>(s, "theta_scale", "problem.synthetic", 1.0);
    syn.seed = optional_or<std::uint64_t>(s, "seed", "problem.synthetic", 0);
    config.problem.synthetic = syn;
  } else {
    throw ConfigError("config: 'problem' needs a dataset path or a synthetic spec");
  }
  config.problem.sigma2 = optional_or<double>(p, "sigma2", "problem", 0.1);
  config.problem.tau = optional_or<double>(p, "tau", "problem", 1.0);
  config.problem.quad_nodes = optional_or<int>(p, "quad_nodes", "problem", 64);

  const json& a = j.contains("algorithm") ? j.at("algorithm") : json::object();
  expect_object(a, "algorithm");
  reject_unknown_keys(a,
                      {"name", "k_out", "k_in", "b", "gamma", "gamma_t0", "m", "refresh",
                       "b_prime", "sampling", "oracle", "iterations", "lipschitz_rule",
                       "l_override", "l_gradw_override"},
                      "algorithm");
  const std::string name = optional_or<std::string>(a, "name", "algorithm", "3p-spider");
  if (name == "3p-spider") {
    config.algorithm.name = AlgorithmName::spider;
  } else if (name == "prox-online-em") {
    config.algorithm.name = AlgorithmName::online_em;
  } else if (name == "full-prox-gradient") {
    config.algorithm.name = AlgorithmName::full_gradient;
  } else {
    throw ConfigError("config: unknown algorithm '" + name + "'");
  }
  config.algorithm.k_out = optional_or<int>(a, "k_out", "algorithm", 1);
  config.algorithm.k_in = optional_or<int>(a, "k_in", "algorithm", 1);
  config.algorithm.b = optional_or<int>(a, "b", "algorithm", 1);
  if (a.contains("gamma")) {
    const json& g = a.at("gamma");
    if (g.is_string()) {
      if (g.get<std::string>() != "star") {
        throw ConfigError("config: algorithm.gamma must be a number or \"star\"");
      }
      config.algorithm.gamma_star = true;
    } else if (g.is_number()) {
      config.algorithm.gamma = g.get<double>();
    } else {
      throw ConfigError("config: algorithm.gamma must be a number or \"star\"");
    }
  }
  config.algorithm.gamma_t0 = optional_or<double>(a, "gamma_t0", "algorithm", 0.0);
  if (a.contains("m")) config.algorithm.m = parse_m_schedule(a.at("m"), "algorithm");
  if (a.contains("refresh")) {
    const json& r = a.at("refresh");
    if (r.is_string() && r.get<std::string>() == "full") {
      config.algorithm.refresh = RefreshMode::full;
    } else if (r.is_object()) {
      reject_unknown_keys(r, {"subsampled_bprime"}, "algorithm.refresh");
      config.algorithm.refresh = RefreshMode::subsampled;
      config.algorithm.b_prime = require<int>(r, "subsampled_bprime", "algorithm.refresh");
    } else {
      throw ConfigError("config: algorithm.refresh must be \"full\" or {subsampled_bprime}");
    }
  }
  config.algorithm.b_prime = optional_or<int>(a, "b_prime", "algorithm",
                                              config.algorithm.b_prime);
  const std::string sampling =
      optional_or<std::string>(a, "sampling", "algorithm", "with_replacement");
  if (sampling == "with_replacement") {
    config.algorithm.sampling = SamplingMode::with_replacement;
  } else if (sampling == "without_replacement") {
    config.algorithm.sampling = SamplingMode::without_replacement;
  } else {
    throw ConfigError("config: algorithm.sampling must be with/without_replacement");
  }
  const std::string oracle = optional_or<std::string>(a, "oracle", "algorithm", "auto");
  if (oracle == "auto") {
    config.algorithm.oracle = OracleMode::automatic;
  } else if (oracle == "mc") {
    config.algorithm.oracle = OracleMode::monte_carlo;
  } else if (oracle == "exact") {
    config.algorithm.oracle = OracleMode::exact;
  } else {
    throw ConfigError("config: algorithm.oracle must be auto, mc or exact");
  }
  config.algorithm.iterations = optional_or<int>(a, "iterations", "algorithm", 100);
  const std::string rule = optional_or<std::string>(a, "lipschitz_rule", "algorithm", "max");
  if (rule == "max") {
    config.algorithm.lipschitz_rule = LipschitzData::Aggregation::max;
  } else if (rule == "rms") {
    config.algorithm.lipschitz_rule = LipschitzData::Aggregation::rms;
  } else {
    throw ConfigError("config: algorithm.lipschitz_rule must be max or rms");
  }
  if (a.contains("l_override")) {
    config.algorithm.l_override = require<double>(a, "l_override", "algorithm");
  }
  if (a.contains("l_gradw_override")) {
    config.algorithm.l_gradw_override = require<double>(a, "l_gradw_override", "algorithm");
  }

  const json& r = j.contains("replications") ? j.at("replications") : json::object();
  expect_object(r, "replications");
  reject_unknown_keys(r, {"runs", "base_seed", "threads"}, "replications");
  config.replications.runs = optional_or<int>(r, "runs", "replications", 1);
  config.replications.base_seed =
      optional_or<std::uint64_t>(r, "base_seed", "replications", 0);
  config.replications.threads = optional_or<int>(r, "threads", "replications", 1);
  if (config.replications.runs < 1) throw ConfigError("config: replications.runs >= 1");
  if (config.replications.threads < 1) throw ConfigError("config: replications.threads >= 1");

  const json& o = j.contains("output") ? j.at("output") : json::object();
  expect_object(o, "output");
  reject_unknown_keys(o, {"dir", "exact_delta_stride", "timing"}, "output");
  config.output.dir = optional_or<std::string>(o, "dir", "output", "out");
  config.output.exact_delta_stride =
      optional_or<int>(o, "exact_delta_stride", "output", 0);
  config.output.timing = optional_or<bool>(o, "timing", "output", false);
  if (config.output.exact_delta_stride < 0) {
    throw ConfigError("config: output.exact_delta_stride >= 0");
  }
  return config;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
  }
  return parse_experiment_config(j);
}

json config_to_json(const ExperimentConfig& config) {
  json p;
  if (config.problem.dataset_path) {
    p["dataset"] = *config.problem.dataset_path;
  } else if (config.problem.synthetic) {
    p["synthetic"] = {{"n", config.problem.synthetic->n},
                      {"d", config.problem.synthetic->d},
                      {"theta_scale", config.problem.synthetic->theta_scale},
                      {"seed", config.problem.synthetic->seed}};
  }
  p["sigma2"] = config.problem.sigma2;
  p["tau"] = config.problem.tau;
  p["quad_nodes"] = config.problem.quad_nodes;

  json a;
  switch (config.algorithm.name) {
    case AlgorithmName::spider: a["name"] = "3p-spider"; break;
    case AlgorithmName::online_em: a["name"] = "prox-online-em"; break;
    case AlgorithmName::full_gradient: a["name"] = "full-prox-gradient"; break;
  }
  a["k_out"] = config.algorithm.k_out;
  a["k_in"] = config.algorithm.k_in;
  a["b"] = config.algorithm.b;
  if (config.algorithm.gamma_star) {
    a["gamma"] = "star";
  } else {
    a["gamma"] = config.algorithm.gamma;
  }
  a["gamma_t0"] = config.algorithm.gamma_t0;
  json m = json::array();
  for (const MSchedule::Segment& seg : config.algorithm.m.segments) {
    m.push_back({{"from_t", seg.from_t}, {"m", seg.m}});
  }
  a["m"] = m;
  if (config.algorithm.refresh == RefreshMode::full) {
    a["refresh"] = "full";
  } else {
    a["refresh"] = {{"subsampled_bprime", config.algorithm.b_prime}};
  }
  a["sampling"] = config.algorithm.sampling == SamplingMode::with_replacement
                      ? "with_replacement"
                      : "without_replacement";
  switch (config.algorithm.oracle) {
    case OracleMode::automatic: a["oracle"] = "auto"; break;
    case OracleMode::monte_carlo: a["oracle"] = "mc"; break;
    case OracleMode::exact: a["oracle"] = "exact"; break;
  }
  a["iterations"] = config.algorithm.iterations;
  a["lipschitz_rule"] =
      config.algorithm.lipschitz_rule == LipschitzData::Aggregation::max ? "max" : "rms";
  if (config.algorithm.l_override) a["l_override"] = *config.algorithm.l_override;
  if (config.algorithm.l_gradw_override) {
    a["l_gradw_override"] = *config.algorithm.l_gradw_override;
  }

  return json{{"problem", p},
              {"algorithm", a},
              {"replications",
               {{"runs", config.replications.runs},
                {"base_seed", config.replications.base_seed},
                {"threads", config.replications.threads}}},
              {"output",
               {{"dir", config.output.dir},
                {"exact_delta_stride", config.output.exact_delta_stride},
                {"timing", config.output.timing}}}};
}

ProblemInstance build_problem(const ProblemConfig& config) {
  auto dataset = std::make_shared<latent::Dataset>();
  if (config.dataset_path) {
    *dataset = latent::load_dataset_csv(*config.dataset_path);
  } else if (config.synthetic) {
    latent::SyntheticSpec spec;
    spec.n = config.synthetic->n;
    spec.d = config.synthetic->d;
    spec.sigma2 = config.sigma2;
    spec.theta_scale = config.synthetic->theta_scale;
    spec.seed = config.synthetic->seed;
    *dataset = latent::generate_synthetic(spec);
  } else {
    throw ConfigError("build_problem: no dataset source configured");
  }
  latent::ModelParams params{config.sigma2, config.tau};
  auto omega = std::make_shared<latent::OmegaMatrix>(latent::compute_omega(*dataset, params));
  auto oracle = latent::make_oracles(dataset, params, omega, config.quad_nodes);
  Preconditioner precond = latent::make_preconditioner(*omega);
  Regularizer reg = latent::constraint_set(*omega, params.tau);
  LipschitzData lipschitz = latent::estimate_lipschitz(*omega, params);
  return ProblemInstance{std::move(dataset), std::move(omega), std::move(oracle),
                         std::move(precond),  std::move(reg),   std::move(lipschitz),
                         params,              config.quad_nodes};
}

LipschitzData effective_lipschitz(const ProblemInstance& problem,
                                  const AlgorithmConfig& algo) {
  double l = problem.lipschitz.aggregate;
  double grad_w = problem.lipschitz.grad_w;
  if (!problem.lipschitz.per_index.empty() &&
      algo.lipschitz_rule != problem.lipschitz.rule) {
    l = LipschitzData::from_per_index(problem.lipschitz.per_index, grad_w,
                                      algo.lipschitz_rule)
            .aggregate;
  }
  if (algo.l_override) l = *algo.l_override;
  if (algo.l_gradw_override) grad_w = *algo.l_gradw_override;
  return LipschitzData::from_aggregates(l, grad_w);
}

RunConfig make_run_config(const ExperimentConfig& config, const ProblemInstance& problem,
                          std::uint64_t seed) {
  RunConfig rc;
  rc.k_out = config.algorithm.k_out;
  rc.k_in = config.algorithm.k_in;
  rc.b = config.algorithm.b;
  rc.gamma = config.algorithm.gamma_star ? GammaSchedule::star()
                                         : GammaSchedule::constant(config.algorithm.gamma);
  rc.gamma_t0 = config.algorithm.gamma_t0;
  rc.m = config.algorithm.m;
  rc.refresh = config.algorithm.refresh;
  rc.b_prime = config.algorithm.b_prime;
  rc.sampling = config.algorithm.sampling;
  rc.oracle_mode = config.algorithm.oracle;
  rc.seed = seed;
  rc.lipschitz = effective_lipschitz(problem, config.algorithm);
  return rc;
}

double nearest_rank_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("nearest_rank_quantile: empty sample");
  if (!(q > 0.0) || !(q <= 1.0)) throw ConfigError("nearest_rank_quantile: q in (0, 1]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<std::int64_t>(values.size());
  std::int64_t rank = static_cast<std::int64_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::max<std::int64_t>(1, std::min(rank, n));
  return values[static_cast<std::size_t>(rank - 1)];
}

namespace {

struct RunResult {
  int run_id = 0;
  Trajectory traj;
};

std::vector<MetricsRow> rows_from_trajectory(const RunResult& run, AlgorithmName name,
                                             int k_in) {
  std::vector<MetricsRow> rows;
  rows.reserve(run.traj.steps.size());
  for (const StepRecord& rec : run.traj.steps) {
    MetricsRow row;
    row.run_id = run.run_id;
    row.t = rec.t;
    row.k = rec.k;
    row.cum_inner = name == AlgorithmName::spider
                        ? static_cast<std::int64_t>(rec.t - 1) * k_in + rec.k
                        : rec.t;
    row.delta_hat = rec.delta_hat;
    row.snorm2 = kern::nrm2sq(rec.state.data(), rec.state.size());
    row.n_p = rec.counters.prox_calls;
    row.n_a = rec.counters.component_evals;
    row.n_mc = rec.counters.mc_draws;
    row.wall_ms = rec.wall_ms;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                       bool timing) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "run_id,t,k,cum_inner,delta_hat,delta_exact,snorm2,n_p,n_a,n_mc,wall_ms\n";
  for (const MetricsRow& row : rows) {
    out << row.run_id << ',' << row.t << ',' << row.k << ',' << row.cum_inner << ','
        << format_double(row.delta_hat) << ',';
    if (row.delta_exact) out << format_double(*row.delta_exact);
    out << ',' << format_double(row.snorm2) << ',' << row.n_p << ',' << row.n_a << ','
        << row.n_mc << ',';
    if (timing) out << format_double(row.wall_ms);
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

void write_summary_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  // Group by (t, k); rows are sorted by (run, t, k).
  struct Key {
    int t;
    int k;
    std::int64_t cum_inner;
    bool operator<(const Key& other) const {
      return std::tie(t, k) < std::tie(other.t, other.k);
    }
  };
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const MetricsRow& row : rows) {
    auto& g = groups[Key{row.t, row.k, row.cum_inner}];
    g.first.push_back(row.delta_hat);
    g.second.push_back(row.snorm2);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "t,k,cum_inner,delta_hat_q25,delta_hat_q50,delta_hat_q75,"
         "snorm2_q25,snorm2_q50,snorm2_q75\n";
  for (const auto& [key, g] : groups) {
    out << key.t << ',' << key.k << ',' << key.cum_inner;
    for (double q : {0.25, 0.5, 0.75}) {
      out << ',' << format_double(nearest_rank_quantile(g.first, q));
    }
    for (double q : {0.25, 0.5, 0.75}) {
      out << ',' << format_double(nearest_rank_quantile(g.second, q));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

void write_stop_csv(const std::string& path, const std::vector<StopDraw>& draws) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "run_id,tau,k,delta_hat,delta_exact\n";
  for (const StopDraw& d : draws) {
    out << d.run_id << ',' << d.tau << ',' << d.k << ',' << format_double(d.delta_hat)
        << ',';
    if (d.delta_exact) out << format_double(*d.delta_exact);
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log) {
  const ProblemInstance problem = build_problem(config.problem);
  const int runs = config.replications.runs;
  const AlgorithmName name = config.algorithm.name;

  std::vector<RunResult> results(runs);
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;

  auto worker = [&]() {
    for (;;) {
      const int idx = next.fetch_add(1);
      if (idx >= runs) return;
      try {
        const std::uint64_t seed = config.replications.base_seed + 1 + idx;
        RunResult res;
        res.run_id = idx + 1;
        switch (name) {
          case AlgorithmName::spider: {
            res.traj = run_3p_spider(make_run_config(config, problem, seed),
                                     *problem.oracle, problem.precond, problem.reg);
            break;
          }
          case AlgorithmName::online_em: {
            OnlineConfig oc;
            oc.iterations = config.algorithm.iterations;
            oc.b = config.algorithm.b;
            oc.gamma = config.algorithm.gamma;
            oc.m = config.algorithm.m.at(1);
            oc.sampling = config.algorithm.sampling;
            oc.oracle_mode = config.algorithm.oracle;
            oc.seed = seed;
            res.traj = run_prox_online_em(oc, *problem.oracle, problem.precond, problem.reg);
            break;
          }
          case AlgorithmName::full_gradient: {
            StateVector zero(problem.oracle->dim(), 0.0);
            const StateVector init =
                weighted_prox(problem.precond.eval(zero), 1.0, problem.reg, zero);
            res.traj = run_full_prox_gradient(config.algorithm.iterations,
                                              config.algorithm.gamma, *problem.oracle,
                                              problem.precond, problem.reg, init);
            break;
          }
        }
        results[idx] = std::move(res);
      } catch (const NumericalError& e) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) {
          first_error = std::make_exception_ptr(NumericalError(
              "run " + std::to_string(idx + 1) + ": " + e.what()));
        }
        next.store(runs);
        return;
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        next.store(runs);
        return;
      }
    }
  };

  const int threads = std::max(1, std::min(config.replications.threads, runs));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  ExperimentResult out;
  const bool spider = name == AlgorithmName::spider;
  const bool can_exact = problem.oracle->has_exact();
  for (RunResult& run : results) {
    std::vector<MetricsRow> rows = rows_from_trajectory(run, name, config.algorithm.k_in);
    if (spider) {
      StopDraw draw;
      draw.run_id = run.run_id;
      draw.tau = run.traj.stop_t;
      draw.k = run.traj.stop_k;
      draw.delta_hat = run.traj.delta_hat_at_stop;
      if (can_exact) {
        draw.delta_exact = exact_delta(run.traj, draw.tau, draw.k, *problem.oracle,
                                       problem.precond, problem.reg);
      }
      const int stride = config.output.exact_delta_stride;
      for (MetricsRow& row : rows) {
        const bool at_stop = row.t == draw.tau && row.k == draw.k;
        const bool on_grid = stride > 0 && row.cum_inner % stride == 0;
        if (can_exact && (at_stop || on_grid)) {
          row.delta_exact = at_stop ? draw.delta_exact
                                    : exact_delta(run.traj, row.t, row.k, *problem.oracle,
                                                  problem.precond, problem.reg);
        }
      }
      out.stop_draws.push_back(std::move(draw));
    }
    out.rows.insert(out.rows.end(), std::make_move_iterator(rows.begin()),
                    std::make_move_iterator(rows.end()));
  }
  std::sort(out.rows.begin(), out.rows.end(), [](const MetricsRow& a, const MetricsRow& b) {
    return std::tie(a.run_id, a.t, a.k) < std::tie(b.run_id, b.t, b.k);
  });

  if (spider) {
    double mean = 0.0;
    for (const StopDraw& d : out.stop_draws) mean += d.delta_hat;
    mean /= out.stop_draws.size();
    double var = 0.0;
    for (const StopDraw& d : out.stop_draws) {
      var += (d.delta_hat - mean) * (d.delta_hat - mean);
    }
    var = out.stop_draws.size() > 1 ? var / (out.stop_draws.size() - 1) : 0.0;
    out.mean_delta_hat_stop = mean;
    out.se_delta_hat_stop = std::sqrt(var / out.stop_draws.size());
  }

  const fs::path dir(config.output.dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "'");

  out.metrics_path = (dir / "metrics.csv").string();
  out.summary_path = (dir / "summary.csv").string();
  out.stop_path = (dir / "stop_times.csv").string();
  out.summary_json_path = (dir / "summary.json").string();
  out.config_echo_path = (dir / "effective_config.json").string();

  write_metrics_csv(out.metrics_path, out.rows, config.output.timing);
  write_summary_csv(out.summary_path, out.rows);
  if (spider) write_stop_csv(out.stop_path, out.stop_draws);

  json summary;
  summary["algorithm"] = config_to_json(config)["algorithm"]["name"];
  summary["runs"] = runs;
  if (spider) {
    summary["stop_time"] = {{"mean_delta_hat", out.mean_delta_hat_stop},
                            {"se_delta_hat", out.se_delta_hat_stop},
                            {"count", out.stop_draws.size()}};
    const RunConfig rc = make_run_config(config, problem, config.replications.base_seed + 1);
    double gamma = config.algorithm.gamma;
    if (config.algorithm.gamma_star) {
      gamma = gamma_star(problem.precond.v_min(), problem.precond.v_max(),
                         rc.lipschitz->grad_w, rc.lipschitz->aggregate, rc.k_in, rc.b);
    }
    summary["gamma"] = gamma;
  }
  {
    std::ofstream js(out.summary_json_path);
    if (!js) throw IoError("cannot write '" + out.summary_json_path + "'");
    js << summary.dump(2) << '\n';
  }
  {
    std::ofstream js(out.config_echo_path);
    if (!js) throw IoError("cannot write '" + out.config_echo_path + "'");
    js << config_to_json(config).dump(2) << '\n';
  }

  if (log != nullptr) {
    *log << "wrote " << out.metrics_path << " (" << out.rows.size() << " rows, " << runs
         << " runs)\n";
    if (spider) {
      *log << "E[delta_hat at stop] = " << out.mean_delta_hat_stop << " +/- "
           << out.se_delta_hat_stop << " (SE, " << out.stop_draws.size() << " draws)\n";
    }
  }
  return out;
}

std::string generate_dataset(const ProblemConfig& problem, const std::string& out_dir,
                             std::ostream* log) {
  if (!problem.synthetic) throw ConfigError("generate: needs a synthetic problem spec");
  latent::SyntheticSpec spec;
  spec.n = problem.synthetic->n;
  spec.d = problem.synthetic->d;
  spec.sigma2 = problem.sigma2;
  spec.theta_scale = problem.synthetic->theta_scale;
  spec.seed = problem.synthetic->seed;

  Vec theta_star;
  const latent::Dataset ds = latent::generate_synthetic(spec, &theta_star);

  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "'");
  const std::string csv_path = (dir / "dataset.csv").string();
  latent::save_dataset_csv(ds, csv_path);

  json meta;
  meta["generator"] = {{"n", spec.n},
                       {"d", spec.d},
                       {"sigma2", spec.sigma2},
                       {"theta_scale", spec.theta_scale},
                       {"seed", spec.seed},
                       {"covariates", "gaussian rows, unit-normalized"}};
  meta["theta_star"] = theta_star;
  const std::string meta_path = (dir / "dataset_meta.json").string();
  std::ofstream js(meta_path);
  if (!js) throw IoError("cannot write '" + meta_path + "'");
  js << meta.dump(2) << '\n';

  if (log != nullptr) {
    *log << "wrote " << csv_path << " (" << ds.n() << " rows, d=" << ds.d() << ")\n";
  }
  return csv_path;
}

}  // namespace spider3p::harness
