#pragma once

#include <memory>
#include <string>

#include "spider3p/oracles.hpp"
#include "spider3p/precond_prox.hpp"

// Logistic regression with Gaussian latent predictors, worked in the
// expectation (sufficient-statistic) space: given covariate rows X_i and
// labels Y_i in {-1,+1}, the latent predictor Z_i ~ N_d(theta, sigma^2 I)
// enters the likelihood through a one-dimensional integral per row. The
// penalized objective F(theta) is minimized through W(s) = F(Omega s), whose
// preconditioned gradient field is
//   h(s) = (1/n) sum_i  E_{p_i(.;Omega s)}[ s_i(z) ] - s,
//   s_i(z) = z X_i / (||X_i|| sigma^2),
// with p_i a logistic-tilted Gaussian in z. grad W(s) = -Omega h(s).
namespace spider3p::latent {

struct Dataset {
  Matrix x;                 // n x d covariate rows
  std::vector<int> y;       // labels in {-1, +1}
  Vec row_norms;            // ||X_i||, cached; strictly positive

  int n() const { return x.rows(); }
  int d() const { return x.cols(); }
};

struct ModelParams {
  double sigma2 = 0.1;  // known latent variance
  double tau = 1.0;     // penalty weight in pen(theta) = tau ||theta||^2
};

// CSV with header y,x1,...,xd; y in {-1, +1}; zero-norm rows rejected with
// their row numbers.
Dataset load_dataset_csv(const std::string& path);
void save_dataset_csv(const Dataset& ds, const std::string& path);

struct SyntheticSpec {
  int n = 0;
  int d = 0;
  double sigma2 = 0.1;
  double theta_scale = 1.0;  // ||theta_star||
  std::uint64_t seed = 0;
};

// Normalized Gaussian covariate rows; Z_i ~ N_d(theta_star, sigma^2 I);
// Y_i = +1 with probability sigmoid(<X_i, Z_i>). theta_star is drawn on the
// sphere of radius theta_scale and returned when requested.
Dataset generate_synthetic(const SyntheticSpec& spec, Vec* theta_star_out = nullptr);

// Omega = ( (1/(sigma^2 n)) sum_i X_i X_i^T / ||X_i||^2 + 2 tau I )^{-1},
// with R(theta) = (1/2) theta^T Omega^{-1} theta and theta = Omega s.
class OmegaMatrix {
 public:
  OmegaMatrix(Matrix omega, Matrix omega_inv, double lambda_min, double lambda_max);

  const Matrix& omega() const { return omega_; }
  const Matrix& inverse() const { return omega_inv_; }
  double lambda_min() const { return lambda_min_; }
  double lambda_max() const { return lambda_max_; }
  int dim() const { return omega_.rows(); }

  Vec to_theta(const Vec& s) const { return matvec(omega_, s); }

 private:
  Matrix omega_;
  Matrix omega_inv_;
  double lambda_min_ = 0.0;
  double lambda_max_ = 0.0;
};

OmegaMatrix compute_omega(const Dataset& ds, const ModelParams& params);

// One-dimensional tilted-Gaussian posterior of the latent coordinate:
// p_i(z; theta) proportional to sigmoid(a_i z) N(z; mu_i, sigma^2) with
// mu_i = <X_i, theta>/||X_i|| and a_i = Y_i ||X_i||.
struct PosteriorSpec {
  int index = 0;
  double mu = 0.0;
  double slope = 0.0;  // a_i
  double sigma2 = 0.0;

  static PosteriorSpec make(int i, const Vec& theta, const Dataset& ds,
                            const ModelParams& params);

  // log of the tilted-Gaussian form and of the unnormalized density as
  // written in terms of s_i(z); they differ by a z-independent constant.
  double log_density_tilted(double z) const;
  double log_density_expfam(double z) const;
};

// Exact draw from p_i by rejection: propose N(mu_i, sigma^2), accept with
// probability sigmoid(a_i z). Throws after max_proposals rejections.
double sample_posterior(const PosteriorSpec& spec, RngStream& rng,
                        long max_proposals = 1000000);

// Per-component h_i(s) by self-normalized Gauss-Hermite quadrature; the mean
// over i equals h(s).
Vec h_component_quadrature(int i, const Vec& s, const Dataset& ds,
                           const ModelParams& params, const OmegaMatrix& omega,
                           int nodes = 64);

// Penalized normalized negative log-likelihood (per-row integrals against the
// normalized Gaussian measure, so F(0) = ln 2), plus R(theta).
double objective_f(const Vec& theta, const Dataset& ds, const ModelParams& params,
                   const OmegaMatrix& omega, int nodes = 64);

// W(s) = F(Omega s).
double objective_w(const Vec& s, const Dataset& ds, const ModelParams& params,
                   const OmegaMatrix& omega, int nodes = 64);

// Oracle with both capabilities: exact via quadrature, Monte Carlo via the
// rejection sampler; second moments via quadrature.
std::shared_ptr<GradientOracle> make_oracles(std::shared_ptr<const Dataset> ds,
                                             const ModelParams& params,
                                             std::shared_ptr<const OmegaMatrix> omega,
                                             int nodes = 64);

// K = { s : s^T Omega s <= ln 4 / (tau lambda_min) }; every minimizer of F
// maps into K under theta = Omega s.
Regularizer constraint_set(const OmegaMatrix& omega, double tau);

Preconditioner make_preconditioner(const OmegaMatrix& omega);

// Conservative Lipschitz data: per-component bound lambda_max(Omega)/sigma^2 + 1
// (posterior variance never exceeds sigma^2), grad W bound lambda_max * L.
LipschitzData estimate_lipschitz(const OmegaMatrix& omega, const ModelParams& params);

}  // namespace spider3p::latent
