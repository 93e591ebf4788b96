#include "spider3p/latent_logistic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "spider3p/errors.hpp"
#include "spider3p/gauss_hermite.hpp"

namespace spider3p::latent {

namespace {

constexpr double kLn2 = 0.69314718055994530941723212145818;

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double log_sigmoid(double t) {
  if (t >= 0.0) return -std::log1p(std::exp(-t));
  return t - std::log1p(std::exp(t));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& field, int row, int col) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(field, &pos);
    while (pos < field.size() && std::isspace(static_cast<unsigned char>(field[pos]))) ++pos;
    if (pos != field.size() || !std::isfinite(v)) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("dataset: cannot parse value '" + field + "' at row " +
                      std::to_string(row) + ", column " + std::to_string(col));
  }
}

}  // namespace

Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("dataset: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset: empty file '" + path + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "y") {
    throw ConfigError("dataset: header must be y,x1,...,xd");
  }
  const int d = static_cast<int>(header.size()) - 1;
  for (int j = 0; j < d; ++j) {
    if (header[j + 1] != "x" + std::to_string(j + 1)) {
      throw ConfigError("dataset: header must be y,x1,...,xd (got '" + header[j + 1] +
                        "' in column " + std::to_string(j + 2) + ")");
    }
  }

  std::vector<int> ys;
  std::vector<double> values;
  int row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const std::vector<std::string> fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != d + 1) {
      throw ConfigError("dataset: row " + std::to_string(row) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(d + 1));
    }
    const double yv = parse_double(fields[0], row, 1);
    if (yv != 1.0 && yv != -1.0) {
      throw ConfigError("dataset: row " + std::to_string(row) + " label must be -1 or 1");
    }
    ys.push_back(static_cast<int>(yv));
    for (int j = 0; j < d; ++j) values.push_back(parse_double(fields[j + 1], row, j + 2));
  }
  if (row == 0) throw ConfigError("dataset: no data rows in '" + path + "'");

  Dataset ds;
  ds.x = Matrix(row, d);
  std::copy(values.begin(), values.end(), ds.x.data());
  ds.y = std::move(ys);
  ds.row_norms.resize(row);
  std::vector<int> zero_rows;
  for (int i = 0; i < row; ++i) {
    ds.row_norms[i] = std::sqrt(kern::nrm2sq(ds.x.row(i), d));
    if (!(ds.row_norms[i] > 0.0)) zero_rows.push_back(i + 1);
  }
  if (!zero_rows.empty()) {
    std::ostringstream msg;
    msg << "dataset: zero-norm covariate rows rejected:";
    for (int r : zero_rows) msg << ' ' << r;
    throw ConfigError(msg.str());
  }
  return ds;
}

void save_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("dataset: cannot write '" + path + "'");
  out << 'y';
  for (int j = 1; j <= ds.d(); ++j) out << ",x" << j;
  out << '\n';
  char buf[64];
  for (int i = 0; i < ds.n(); ++i) {
    out << ds.y[i];
    for (int j = 0; j < ds.d(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.x(i, j));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("dataset: write failed for '" + path + "'");
}

Dataset generate_synthetic(const SyntheticSpec& spec, Vec* theta_star_out) {
  if (spec.n < 1 || spec.d < 1) throw ConfigError("generate_synthetic: need n, d >= 1");
  if (!(spec.sigma2 > 0.0)) throw ConfigError("generate_synthetic: sigma2 must be > 0");
  if (spec.theta_scale < 0.0) throw ConfigError("generate_synthetic: theta_scale must be >= 0");

  const double sigma = std::sqrt(spec.sigma2);
  RngStream theta_rng = RngStream::derive(spec.seed, {1});
  RngStream cov_rng = RngStream::derive(spec.seed, {2});
  RngStream label_rng = RngStream::derive(spec.seed, {3});

  Vec theta_star(spec.d, 0.0);
  if (spec.theta_scale > 0.0) {
    double norm2 = 0.0;
    do {
      for (double& v : theta_star) v = theta_rng.next_normal();
      norm2 = kern::nrm2sq(theta_star.data(), theta_star.size());
    } while (!(norm2 > 0.0));
    kern::scal(spec.theta_scale / std::sqrt(norm2), theta_star.data(), theta_star.size());
  }

  Dataset ds;
  ds.x = Matrix(spec.n, spec.d);
  ds.y.resize(spec.n);
  ds.row_norms.assign(spec.n, 1.0);
  Vec z(spec.d);
  for (int i = 0; i < spec.n; ++i) {
    double norm2 = 0.0;
    do {
      for (int j = 0; j < spec.d; ++j) ds.x(i, j) = cov_rng.next_normal();
      norm2 = kern::nrm2sq(ds.x.row(i), spec.d);
    } while (!(norm2 > 0.0));
    kern::scal(1.0 / std::sqrt(norm2), ds.x.row(i), spec.d);

    for (int j = 0; j < spec.d; ++j) z[j] = theta_star[j] + sigma * label_rng.next_normal();
    const double margin = kern::dot(ds.x.row(i), z.data(), spec.d);
    ds.y[i] = label_rng.next_unit() < sigmoid(margin) ? 1 : -1;
  }
  if (theta_star_out != nullptr) *theta_star_out = std::move(theta_star);
  return ds;
}

OmegaMatrix::OmegaMatrix(Matrix omega, Matrix omega_inv, double lambda_min,
                         double lambda_max)
    : omega_(std::move(omega)),
      omega_inv_(std::move(omega_inv)),
      lambda_min_(lambda_min),
      lambda_max_(lambda_max) {}

OmegaMatrix compute_omega(const Dataset& ds, const ModelParams& params) {
  if (!(params.sigma2 > 0.0) || !(params.tau > 0.0)) {
    throw ConfigError("compute_omega: sigma2 and tau must be positive");
  }
  const int d = ds.d();
  const int n = ds.n();
  Matrix a(d, d, 0.0);
  const double scale = 1.0 / (params.sigma2 * n);
  for (int i = 0; i < n; ++i) {
    const double* xi = ds.x.row(i);
    const double w = scale / (ds.row_norms[i] * ds.row_norms[i]);
    for (int r = 0; r < d; ++r) {
      kern::axpy(w * xi[r], xi, a.row(r), d);
    }
  }
  for (int r = 0; r < d; ++r) a(r, r) += 2.0 * params.tau;

  auto chol = CholeskyFactor::compute(a);
  if (!chol) throw NumericalError("compute_omega: Omega^{-1} is not positive definite");
  Matrix omega = chol->inverse();

  SymEigen eig = jacobi_eigensym(omega, false);
  const double lo = eig.values.front();
  const double hi = eig.values.back();
  if (!(lo > 0.0)) throw NumericalError("compute_omega: Omega not positive definite");

  Matrix prod = matmul(omega, a);
  for (int i = 0; i < d; ++i) prod(i, i) -= 1.0;
  if (max_abs(prod) > 1e-10) {
    throw NumericalError("compute_omega: Omega * Omega^{-1} deviates from identity by " +
                         std::to_string(max_abs(prod)));
  }
  return OmegaMatrix(std::move(omega), std::move(a), lo, hi);
}

PosteriorSpec PosteriorSpec::make(int i, const Vec& theta, const Dataset& ds,
                                  const ModelParams& params) {
  PosteriorSpec spec;
  spec.index = i;
  spec.mu = kern::dot(ds.x.row(i), theta.data(), ds.d()) / ds.row_norms[i];
  spec.slope = ds.y[i] * ds.row_norms[i];
  spec.sigma2 = params.sigma2;
  return spec;
}

double PosteriorSpec::log_density_tilted(double z) const {
  const double diff = z - mu;
  return log_sigmoid(slope * z) - diff * diff / (2.0 * sigma2) -
         0.5 * std::log(2.0 * M_PI * sigma2);
}

double PosteriorSpec::log_density_expfam(double z) const {
  return log_sigmoid(slope * z) + z * mu / sigma2 - z * z / (2.0 * sigma2);
}

double sample_posterior(const PosteriorSpec& spec, RngStream& rng, long max_proposals) {
  const double sigma = std::sqrt(spec.sigma2);
  for (long attempt = 0; attempt < max_proposals; ++attempt) {
    const double z = spec.mu + sigma * rng.next_normal();
    if (rng.next_unit() < sigmoid(spec.slope * z)) return z;
  }
  std::ostringstream msg;
  msg << "sample_posterior: acceptance cap exceeded for component " << spec.index
      << " (mu=" << spec.mu << ", slope=" << spec.slope
      << "); check the dataset scaling";
  throw NumericalError(msg.str());
}

namespace {

struct TiltedStats {
  double mean = 0.0;
  double variance = 0.0;
};

TiltedStats tilted_posterior_stats(const PosteriorSpec& spec, int nodes) {
  const GaussHermiteRule& rule = gauss_hermite_rule(nodes);
  const double scale = std::sqrt(2.0 * spec.sigma2);
  const kern::TiltedMoments m = kern::tilted_moments(
      rule.nodes.data(), rule.weights.data(), rule.nodes.size(), spec.mu, scale,
      spec.slope);
  if (!(m.s0 > 1e-280)) {
    std::ostringstream msg;
    msg << "quadrature underflow for component " << spec.index << " (mu=" << spec.mu
        << ", slope=" << spec.slope << ")";
    throw NumericalError(msg.str());
  }
  TiltedStats st;
  st.mean = m.s1 / m.s0;
  st.variance = std::max(0.0, m.s2 / m.s0 - st.mean * st.mean);
  return st;
}

// Contribution of one row to h(s), given theta = Omega s:
//   (X_i / (||X_i|| sigma^2)) E_{p_i}[z]  -  s.
void h_component_theta(int i, const Vec& theta, const Vec& s, const Dataset& ds,
                       const ModelParams& params, int nodes, double* out) {
  const PosteriorSpec spec = PosteriorSpec::make(i, theta, ds, params);
  const TiltedStats st = tilted_posterior_stats(spec, nodes);
  const double coeff = st.mean / (ds.row_norms[i] * params.sigma2);
  const double* xi = ds.x.row(i);
  for (int j = 0; j < ds.d(); ++j) out[j] = coeff * xi[j] - s[j];
}

}  // namespace

Vec h_component_quadrature(int i, const Vec& s, const Dataset& ds,
                           const ModelParams& params, const OmegaMatrix& omega,
                           int nodes) {
  if (nodes < 16) throw ConfigError("h_component_quadrature: need at least 16 nodes");
  Vec theta = omega.to_theta(s);
  Vec out(ds.d());
  h_component_theta(i, theta, s, ds, params, nodes, out.data());
  return out;
}

double objective_f(const Vec& theta, const Dataset& ds, const ModelParams& params,
                   const OmegaMatrix& omega, int nodes) {
  const GaussHermiteRule& rule = gauss_hermite_rule(nodes);
  const double scale = std::sqrt(2.0 * params.sigma2);
  const double half_log_pi = 0.5 * std::log(M_PI);
  std::vector<double> log_w(rule.weights.size());
  for (std::size_t j = 0; j < log_w.size(); ++j) log_w[j] = std::log(rule.weights[j]);

  double acc = 0.0;
  std::vector<double> terms(rule.nodes.size());
  for (int i = 0; i < ds.n(); ++i) {
    const PosteriorSpec spec = PosteriorSpec::make(i, theta, ds, params);
    // log E_{N(mu, sigma^2)}[sigmoid(a z)] via log-sum-exp over the rule.
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < terms.size(); ++j) {
      const double z = spec.mu + scale * rule.nodes[j];
      terms[j] = log_w[j] + log_sigmoid(spec.slope * z);
      top = std::max(top, terms[j]);
    }
    if (!std::isfinite(top)) {
      throw NumericalError("objective_f: quadrature underflow at row " +
                           std::to_string(i + 1));
    }
    double sum = 0.0;
    for (double tval : terms) sum += std::exp(tval - top);
    const double log_e = top + std::log(sum) - half_log_pi;
    acc += -(spec.mu * spec.mu / (2.0 * params.sigma2) + log_e);
  }
  return acc / ds.n() + 0.5 * quad_form(omega.inverse(), theta);
}

double objective_w(const Vec& s, const Dataset& ds, const ModelParams& params,
                   const OmegaMatrix& omega, int nodes) {
  return objective_f(omega.to_theta(s), ds, params, omega, nodes);
}

namespace {

class LatentLogisticOracle final : public GradientOracle {
 public:
  LatentLogisticOracle(std::shared_ptr<const Dataset> ds, ModelParams params,
                       std::shared_ptr<const OmegaMatrix> omega, int nodes)
      : ds_(std::move(ds)), params_(params), omega_(std::move(omega)), nodes_(nodes) {}

  int size() const override { return ds_->n(); }
  int dim() const override { return ds_->d(); }
  bool has_exact() const override { return true; }
  bool has_mc() const override { return true; }
  bool has_second_moment() const override { return true; }

  void eval_exact(int i, const StateVector& s, double* out) const override {
    h_component_theta(i, theta_for(s), s, *ds_, params_, nodes_, out);
  }

  void eval_mc(int i, const StateVector& s, int m, RngStream& rng,
               double* out) const override {
    const PosteriorSpec spec = PosteriorSpec::make(i, theta_for(s), *ds_, params_);
    double acc = 0.0;
    for (int r = 0; r < m; ++r) acc += sample_posterior(spec, rng);
    const double coeff = acc / (m * ds_->row_norms[i] * params_.sigma2);
    const double* xi = ds_->x.row(i);
    for (int j = 0; j < ds_->d(); ++j) out[j] = coeff * xi[j] - s[j];
  }

  double second_moment(int i, const StateVector& s) const override {
    const PosteriorSpec spec = PosteriorSpec::make(i, theta_for(s), *ds_, params_);
    const TiltedStats st = tilted_posterior_stats(spec, nodes_);
    // || (X_i/(||X_i|| sigma^2)) (z - E z) ||^2 integrates to Var(z)/sigma^4.
    return st.variance / (params_.sigma2 * params_.sigma2);
  }

 private:
  // theta = Omega s is shared by every component evaluated at the same state;
  // memoized per thread keyed on the exact state bytes.
  const Vec& theta_for(const StateVector& s) const {
    struct Cache {
      const void* owner = nullptr;
      StateVector s;
      Vec theta;
    };
    thread_local Cache cache;
    if (cache.owner != this || cache.s != s) {
      cache.owner = this;
      cache.s = s;
      cache.theta = omega_->to_theta(s);
    }
    return cache.theta;
  }

  std::shared_ptr<const Dataset> ds_;
  ModelParams params_;
  std::shared_ptr<const OmegaMatrix> omega_;
  int nodes_;
};

}  // namespace

std::shared_ptr<GradientOracle> make_oracles(std::shared_ptr<const Dataset> ds,
                                             const ModelParams& params,
                                             std::shared_ptr<const OmegaMatrix> omega,
                                             int nodes) {
  if (!ds || !omega) throw ConfigError("make_oracles: null dataset or omega");
  if (omega->dim() != ds->d()) throw ConfigError("make_oracles: dimension mismatch");
  if (nodes < 16) throw ConfigError("make_oracles: need at least 16 quadrature nodes");
  return std::make_shared<LatentLogisticOracle>(std::move(ds), params, std::move(omega),
                                                nodes);
}

Regularizer constraint_set(const OmegaMatrix& omega, double tau) {
  if (!(tau > 0.0)) throw ConfigError("constraint_set: tau must be > 0");
  const double radius = 2.0 * kLn2 / (tau * omega.lambda_min());
  return Regularizer::ellipsoid(omega.omega(), radius);
}

Preconditioner make_preconditioner(const OmegaMatrix& omega) {
  return Preconditioner::constant_spd(omega.omega(), omega.lambda_min(),
                                      omega.lambda_max());
}

LipschitzData estimate_lipschitz(const OmegaMatrix& omega, const ModelParams& params) {
  const double l_i = omega.lambda_max() / params.sigma2 + 1.0;
  return LipschitzData::from_aggregates(l_i, omega.lambda_max() * l_i);
}

}  // namespace spider3p::latent
