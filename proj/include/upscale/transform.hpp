#pragma once

#include "upscale/pce.hpp"
#include "upscale/vbayes.hpp"

#include <cstdint>
#include <vector>

namespace upscale::transform {

/// Map between data space and independent standard Gaussian germs:
/// optional log, mixture-marginal Gaussianization, Cholesky whitening.
struct GermMap {
  std::vector<vbayes::MixtureMarginal> marginals;
  Matrix copulaCorrelation;
  Matrix choleskyFactor;  // lower triangular, L L^T = copulaCorrelation
  bool logSpace = true;
  std::uint64_t seed = 0;
  /// Joint mixture the marginals were taken from.
  vbayes::GmmPosterior model;

  int dim() const { return static_cast<int>(marginals.size()); }
  Vector toGerm(const Vector& x) const;
  Vector fromGerm(const Vector& z) const;
  /// Row-wise versions.
  Matrix toGermRows(const Matrix& x) const;
  Matrix fromGermRows(const Matrix& z) const;
};

struct GermMapOptions {
  int kMax = 5;
  bool logSpace = true;
  vbayes::GmmOptions gmm;
};

/// Fit marginals (VB-GMM on the possibly log-transformed data) and the
/// Gaussian copula.
GermMap fitGermMap(const Matrix& samples, const GermMapOptions& options = {});

/// Draw rows from the fitted joint mixture, mapped back to data space.
Matrix sampleModel(const GermMap& map, Eigen::Index n, std::uint64_t seed);

struct SynthesisReport {
  double meanRelError = 0.0;
  double covRelError = 0.0;
  bool warned = false;
  std::vector<vbayes::RvmPosterior> fits;
};

/// PCE of the data vector in the germ of `map`, coefficients by variational
/// RVM on evalBasis(toGerm(x_i)). Warns above 5% moment mismatch and raises
/// QualityFailure above 20%.
pce::PceVariable synthesizePce(const Matrix& samples, const GermMap& map, int degree,
                               SynthesisReport* report = nullptr,
                               const vbayes::RvmPriors& priors = {},
                               const vbayes::RvmOptions& options = {});

/// PCE of `values` (N x m) on given germ realizations (N x d), paired by row.
pce::PceVariable regressOnGerm(const Matrix& germs, const Matrix& values, int degree,
                               std::vector<vbayes::RvmPosterior>* fits = nullptr,
                               const vbayes::RvmPriors& priors = {},
                               const vbayes::RvmOptions& options = {});

/// Relative mismatch of the first two moments between a PCE and data rows.
std::pair<double, double> momentMismatch(const pce::PceVariable& v, const Matrix& samples);

}  // namespace upscale::transform
