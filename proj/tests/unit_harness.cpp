#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spider3p/diagnostics.hpp"
#include "spider3p/errors.hpp"
#include "spider3p/experiment.hpp"

using namespace spider3p;
using namespace spider3p::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "spider3p_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json tiny_config(const std::string& out_dir) {
  return json{
      {"problem",
       {{"synthetic", {{"n", 12}, {"d", 2}, {"theta_scale", 1.0}, {"seed", 5}}},
        {"sigma2", 0.5},
        {"tau", 1.0},
        {"quad_nodes", 64}}},
      {"algorithm",
       {{"name", "3p-spider"},
        {"k_out", 2},
        {"k_in", 3},
        {"b", 2},
        {"gamma", 0.1},
        {"m", 2}}},
      {"replications", {{"runs", 3}, {"base_seed", 100}, {"threads", 2}}},
      {"output", {{"dir", out_dir}}}};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SPIDER3P_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("quantiles: nearest rank definition") {
  const std::vector<double> xs{10, 1, 9, 2, 8, 3, 7, 4, 6, 5};
  CHECK(nearest_rank_quantile(xs, 0.25) == 3.0);
  CHECK(nearest_rank_quantile(xs, 0.5) == 5.0);
  CHECK(nearest_rank_quantile(xs, 0.75) == 8.0);
  CHECK(nearest_rank_quantile(xs, 1.0) == 10.0);
  CHECK(nearest_rank_quantile({4.0}, 0.25) == 4.0);
  CHECK_THROWS_AS(nearest_rank_quantile({}, 0.5), ConfigError);
  CHECK_THROWS_AS(nearest_rank_quantile({1.0}, 0.0), ConfigError);
}

TEST_CASE("config: strict parsing") {
  const json good = tiny_config("out");
  CHECK_NOTHROW(parse_experiment_config(good));

  json bad = good;
  bad["extra"] = 1;
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
  bad = good;
  bad["problem"]["mystery"] = 1;
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
  bad = good;
  bad["algorithm"]["step_size"] = 0.1;
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
  bad = good;
  bad["problem"]["dataset"] = "both.csv";
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
  bad = good;
  bad["algorithm"]["name"] = "sgd";
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
  bad = good;
  bad["algorithm"]["gamma"] = "fast";
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
  bad = good;
  bad["replications"]["runs"] = 0;
  CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);

  json star = good;
  star["algorithm"]["gamma"] = "star";
  star["algorithm"]["m"] = json::array({{{"from_t", 1}, {"m", 2}}, {{"from_t", 2}, {"m", 8}}});
  star["algorithm"]["refresh"] = {{"subsampled_bprime", 4}};
  const ExperimentConfig parsed = parse_experiment_config(star);
  CHECK(parsed.algorithm.gamma_star);
  CHECK(parsed.algorithm.m.at(1) == 2);
  CHECK(parsed.algorithm.m.at(5) == 8);
  CHECK(parsed.algorithm.refresh == RefreshMode::subsampled);
  CHECK(parsed.algorithm.b_prime == 4);
}

TEST_CASE("config: echo is a fixed point of parse -> serialize") {
  const json original = tiny_config("somewhere");
  const ExperimentConfig config = parse_experiment_config(original);
  const json echoed = config_to_json(config);
  const ExperimentConfig reparsed = parse_experiment_config(echoed);
  CHECK(config_to_json(reparsed) == echoed);
}

TEST_CASE("experiment: deterministic outputs, quantile recomputation, stride") {
  const fs::path dir_a = fresh_dir("run_a");
  const fs::path dir_b = fresh_dir("run_b");
  json j = tiny_config(dir_a.string());
  j["output"]["exact_delta_stride"] = 3;
  const ExperimentConfig config = parse_experiment_config(j);
  const ExperimentResult res_a = run_experiment(config);

  // Rows: one per (run, t, k).
  CHECK(res_a.rows.size() == 3u * 2u * 4u);
  CHECK(res_a.stop_draws.size() == 3u);
  for (std::size_t i = 1; i < res_a.rows.size(); ++i) {
    const MetricsRow& p = res_a.rows[i - 1];
    const MetricsRow& q = res_a.rows[i];
    CHECK(std::tie(p.run_id, p.t, p.k) < std::tie(q.run_id, q.t, q.k));
    if (p.run_id == q.run_id) {
      CHECK(p.n_a <= q.n_a);
      CHECK(p.n_mc <= q.n_mc);
      CHECK(p.cum_inner <= q.cum_inner);
    }
  }
  // Exact deltas on the stride grid and at each stop time.
  for (const MetricsRow& row : res_a.rows) {
    if (row.cum_inner % 3 == 0) CHECK(row.delta_exact.has_value());
  }
  for (const StopDraw& d : res_a.stop_draws) CHECK(d.delta_exact.has_value());

  json jb = j;
  jb["output"]["dir"] = dir_b.string();
  run_experiment(parse_experiment_config(jb));
  CHECK(slurp((dir_a / "metrics.csv").string()) == slurp((dir_b / "metrics.csv").string()));
  CHECK(slurp((dir_a / "summary.csv").string()) == slurp((dir_b / "summary.csv").string()));
  CHECK(slurp((dir_a / "stop_times.csv").string()) ==
        slurp((dir_b / "stop_times.csv").string()));

  // The echoed effective config reruns to identical output.
  const fs::path dir_c = fresh_dir("run_c");
  ExperimentConfig echoed =
      parse_experiment_config(json::parse(slurp((dir_a / "effective_config.json").string())));
  echoed.output.dir = dir_c.string();
  run_experiment(echoed);
  CHECK(slurp((dir_a / "metrics.csv").string()) == slurp((dir_c / "metrics.csv").string()));

  // Quantiles in summary.csv match an independent recomputation from the rows.
  std::ifstream summary((dir_a / "summary.csv").string());
  std::string line;
  std::getline(summary, line);
  CHECK(line ==
        "t,k,cum_inner,delta_hat_q25,delta_hat_q50,delta_hat_q75,"
        "snorm2_q25,snorm2_q50,snorm2_q75");
  int checked = 0;
  while (std::getline(summary, line)) {
    std::istringstream is(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(is, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() == 9);
    const int t = std::stoi(fields[0]);
    const int k = std::stoi(fields[1]);
    std::vector<double> dh, sn;
    for (const MetricsRow& row : res_a.rows) {
      if (row.t == t && row.k == k) {
        dh.push_back(row.delta_hat);
        sn.push_back(row.snorm2);
      }
    }
    REQUIRE(dh.size() == 3u);
    CHECK(std::stod(fields[3]) == nearest_rank_quantile(dh, 0.25));
    CHECK(std::stod(fields[4]) == nearest_rank_quantile(dh, 0.5));
    CHECK(std::stod(fields[5]) == nearest_rank_quantile(dh, 0.75));
    CHECK(std::stod(fields[8]) == nearest_rank_quantile(sn, 0.75));
    ++checked;
  }
  CHECK(checked == 8);
}

TEST_CASE("experiment: online-em and full-gradient algorithms produce rows") {
  const fs::path dir = fresh_dir("online");
  json j = tiny_config(dir.string());
  j["algorithm"] = {{"name", "prox-online-em"}, {"b", 3}, {"gamma", 0.1},
                    {"m", 2},                   {"iterations", 5}};
  j["replications"]["runs"] = 2;
  const ExperimentResult res = run_experiment(parse_experiment_config(j));
  CHECK(res.rows.size() == 10u);
  CHECK(res.stop_draws.empty());

  json jf = tiny_config((dir / "full").string());
  jf["algorithm"] = {{"name", "full-prox-gradient"}, {"gamma", 0.2}, {"iterations", 4}};
  jf["replications"]["runs"] = 1;
  const ExperimentResult full = run_experiment(parse_experiment_config(jf));
  CHECK(full.rows.size() == 4u);
}

TEST_CASE("experiment: generated dataset round-trips and reruns identically") {
  const fs::path dir_a = fresh_dir("gen_a");
  const fs::path dir_b = fresh_dir("gen_b");
  ProblemConfig problem;
  problem.synthetic = ProblemConfig::Synthetic{8, 2, 1.0, 1};
  problem.sigma2 = 0.5;
  const std::string path_a = generate_dataset(problem, dir_a.string());
  const std::string path_b = generate_dataset(problem, dir_b.string());
  CHECK(slurp(path_a) == slurp(path_b));

  const latent::Dataset ds = latent::load_dataset_csv(path_a);
  CHECK(ds.n() == 8);
  CHECK(ds.d() == 2);
  const fs::path resaved = dir_a / "resaved.csv";
  latent::save_dataset_csv(ds, resaved.string());
  CHECK(slurp(path_a) == slurp(resaved.string()));
}

TEST_CASE("diagnostics: full report passes on a small problem") {
  ProblemConfig pc;
  pc.synthetic = ProblemConfig::Synthetic{24, 3, 1.2, 77};
  pc.sigma2 = 0.5;
  pc.tau = 1.0;
  const ProblemInstance problem = build_problem(pc);

  DiagnosticsOptions opts;
  opts.eta_reps = 2000;
  opts.var_reps = 4000;
  opts.fd_points = 4;
  opts.prox_instances = 20;
  opts.theorem_runs = 20;
  opts.surrogate_iterations = 400;
  const DiagnosticsReport report = run_diagnostics(problem, opts);
  REQUIRE(report.checks.size() == 7u);
  std::ostringstream os;
  print_report(report, os);
  INFO(os.str());
  CHECK(report.all_passed());
}

TEST_CASE("cli: exit codes and reproducible generate") {
  CHECK(run_cli("plan --n 100 --epsilon 0.1") == 0);
  CHECK(run_cli("run --config /nonexistent/config.json") == 4);

  const fs::path dir = fresh_dir("cli");
  const fs::path bad = dir / "bad.json";
  {
    std::ofstream out(bad);
    out << "{ not json";
  }
  CHECK(run_cli("run --config " + bad.string()) == 2);

  const fs::path cfg = dir / "good.json";
  {
    std::ofstream out(cfg);
    out << tiny_config((dir / "out").string()).dump(2);
  }
  CHECK(run_cli("run --config " + cfg.string()) == 0);
  CHECK(fs::exists(dir / "out" / "metrics.csv"));

  CHECK(run_cli("generate --n 6 --d 2 --sigma2 0.5 --seed 9 --out " +
                (dir / "g1").string()) == 0);
  CHECK(run_cli("generate --n 6 --d 2 --sigma2 0.5 --seed 9 --out " +
                (dir / "g2").string()) == 0);
  CHECK(slurp((dir / "g1" / "dataset.csv").string()) ==
        slurp((dir / "g2" / "dataset.csv").string()));
}

TEST_CASE("cli: generate rejects an empty synthetic spec") {
  CHECK(run_cli("generate --n 0 --d 2") == 2);
}

TEST_CASE("diagnostics: missing capabilities are reported as skipped") {
  // Mask the Monte Carlo capability: the MC-dependent checks must be skipped
  // and labeled, not failed.
  class ExactOnly final : public GradientOracle {
   public:
    explicit ExactOnly(std::shared_ptr<GradientOracle> inner) : inner_(std::move(inner)) {}
    int size() const override { return inner_->size(); }
    int dim() const override { return inner_->dim(); }
    bool has_exact() const override { return true; }
    void eval_exact(int i, const StateVector& s, double* out) const override {
      inner_->eval_exact(i, s, out);
    }

   private:
    std::shared_ptr<GradientOracle> inner_;
  };

  ProblemConfig pc;
  pc.synthetic = ProblemConfig::Synthetic{16, 2, 1.0, 21};
  pc.sigma2 = 0.5;
  ProblemInstance problem = build_problem(pc);
  problem.oracle = std::make_shared<ExactOnly>(problem.oracle);

  DiagnosticsOptions opts;
  opts.fd_points = 2;
  opts.prox_instances = 6;
  const DiagnosticsReport report = run_diagnostics(problem, opts);
  int skipped = 0;
  for (const DiagnosticCheck& check : report.checks) {
    if (check.status == DiagnosticCheck::Status::skipped) {
      ++skipped;
      CHECK(!check.details.empty());
    }
    CHECK(check.status != DiagnosticCheck::Status::fail);
  }
  CHECK(skipped == 3);  // eta unbiasedness, eta variance law, theorem bound
}

TEST_CASE("experiment: dataset-file problems run end to end") {
  const fs::path dir = fresh_dir("from_file");
  ProblemConfig gen;
  gen.synthetic = ProblemConfig::Synthetic{30, 3, 1.0, 13};
  gen.sigma2 = 0.5;
  const std::string csv = generate_dataset(gen, (dir / "data").string());

  json j = tiny_config((dir / "out").string());
  j["problem"].erase("synthetic");
  j["problem"]["dataset"] = csv;
  j["problem"]["sigma2"] = 0.5;
  const ExperimentResult res = run_experiment(parse_experiment_config(j));
  CHECK(res.rows.size() == 3u * 2u * 4u);

  // The echoed config names the same dataset and reruns identically.
  const ExperimentConfig echoed = parse_experiment_config(
      json::parse(slurp((dir / "out" / "effective_config.json").string())));
  REQUIRE(echoed.problem.dataset_path.has_value());
  CHECK(*echoed.problem.dataset_path == csv);
}
