#pragma once

#include "upscale/core.hpp"

#include <cstdint>
#include <vector>

namespace upscale::vbayes {

/// Univariate Gaussian mixture used as a marginal distribution.
struct MixtureMarginal {
  Vector weights;
  Vector means;
  Vector sds;

  double cdf(double x) const;
  double pdf(double x) const;
  /// Inverse CDF by bracketed bisection with Newton polish.
  double quantile(double p) const;
  double mean() const;
  double variance() const;
};

struct GmmPriors {
  double alpha0 = 1e-3;  // Dirichlet concentration
  double beta0 = 1.0;    // mean precision scale
  double nu0Extra = 0.0; // Wishart dof is dim + nu0Extra
};

struct GmmOptions {
  double tol = 1e-10;
  int maxIter = 5000;
  int restarts = 5;
  std::uint64_t seed = 0;
};

/// Variational posterior of a Gaussian mixture with Dirichlet weights and a
/// Gaussian-Wishart prior on every component.
struct GmmPosterior {
  int dim = 0;
  Vector alpha;               // Dirichlet concentrations
  Vector beta;                // Gaussian-Wishart precision scales
  Vector nu;                  // Wishart dofs
  Matrix means;               // K x dim
  std::vector<Matrix> wishartScale;  // W_k
  Matrix responsibilities;    // N x K
  Matrix copulaCorrelation;   // dim x dim, identity until fitted
  double elbo = 0.0;
  int iterations = 0;
  std::vector<double> elboTrace;
  std::uint64_t seed = 0;

  int components() const { return static_cast<int>(alpha.size()); }
  Vector weights() const { return alpha / alpha.sum(); }
  /// Expected covariance (nu W)^-1 of component k.
  Matrix covariance(int k) const;
  MixtureMarginal marginal(int d) const;
  std::vector<MixtureMarginal> marginals() const;
};

GmmPosterior fitGmmVB(const Matrix& data, int kMax, const GmmPriors& priors = {},
                      const GmmOptions& options = {});

/// Correlation of z = Phi^-1(F(x)) per column, projected to the nearest
/// correlation matrix when it is not positive definite.
Matrix fitGaussianCopula(const Matrix& data, const std::vector<MixtureMarginal>& marginals);

/// Higham alternating projections onto unit-diagonal PSD matrices, with a
/// small eigenvalue floor so the result admits a Cholesky factor.
Matrix nearestCorrelation(const Matrix& a, double eigenFloor = 1e-10);

struct RvmPriors {
  double a = 1e-6, b = 1e-6;        // Gamma on coefficient precisions zeta
  double aNoise = 1e-6, bNoise = 1e-6;  // Gamma on the noise precision varsigma
};

struct RvmOptions {
  double tol = 1e-10;
  int maxIter = 2000;
  double pruneThreshold = 1e12;     // expected coefficient precision
  double noiseCapRelative = 1e12;   // E[varsigma] <= cap / mean(t^2)
};

struct RvmPosterior {
  Vector coefficientMean;        // zero where pruned
  Matrix coefficientCovariance;  // zero rows/cols where pruned
  Vector zetaA, zetaB;
  double noiseA = 0.0, noiseB = 0.0;
  std::vector<bool> pruned;
  double elbo = 0.0;
  int iterations = 0;
  std::vector<double> elboTrace;
  bool noiseCapped = false;

  double noisePrecisionMean() const { return noiseA / noiseB; }
  Eigen::Index activeCount() const;
};

/// Mean-field variational relevance vector machine for t ~ Psi v.
RvmPosterior fitRvm(const Matrix& design, const Vector& targets, const RvmPriors& priors = {},
                    const RvmOptions& options = {});

/// ELBO monotonicity bookkeeping across every fit in the process.
struct ElboStats {
  long checks = 0;
  long violations = 0;
};
ElboStats elboStats();
void resetElboStats();

}  // namespace upscale::vbayes
