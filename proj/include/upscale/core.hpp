#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace upscale {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Vector2 = Eigen::Vector2d;
using Matrix2 = Eigen::Matrix2d;

// Error hierarchy. Every failure mode named by the library contract gets its
// own type so callers can branch on it.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define UPSCALE_DEFINE_ERROR(Name)  \
  struct Name : Error {             \
    using Error::Error;             \
  }

UPSCALE_DEFINE_ERROR(PackingFailure);
UPSCALE_DEFINE_ERROR(DimensionMismatch);
UPSCALE_DEFINE_ERROR(DomainError);
UPSCALE_DEFINE_ERROR(SingularSystem);
UPSCALE_DEFINE_ERROR(NonConvergence);
UPSCALE_DEFINE_ERROR(MeshMismatch);
UPSCALE_DEFINE_ERROR(DegenerateData);
UPSCALE_DEFINE_ERROR(CdfOutOfRange);
UPSCALE_DEFINE_ERROR(IllConditioned);
UPSCALE_DEFINE_ERROR(SupportViolation);
UPSCALE_DEFINE_ERROR(SingularInnovation);
UPSCALE_DEFINE_ERROR(GermMismatch);
UPSCALE_DEFINE_ERROR(NotWellOrdered);
UPSCALE_DEFINE_ERROR(QualityFailure);

#undef UPSCALE_DEFINE_ERROR

using Rng = std::mt19937_64;

/// Matrix of iid standard normal draws.
Matrix standardNormal(Rng& rng, Eigen::Index rows, Eigen::Index cols);

double normalCdf(double x);
double normalPdf(double x);
/// Inverse standard normal CDF; p must lie in (0,1).
double normalQuantile(double p);

double digamma(double x);

/// Sample covariance (rows are observations), normalized by N-1.
Matrix sampleCovariance(const Matrix& rows);

/// Two-sided Kolmogorov-Smirnov statistic of `sample` against N(0,1).
double ksStatisticNormal(Vector sample);
/// Asymptotic 1% critical value of the one-sample KS statistic.
inline double ksCritical1Percent(Eigen::Index n) {
  return 1.628 / std::sqrt(static_cast<double>(n));
}

/// Empirical quantile (linear interpolation between order statistics).
double quantile(Vector sample, double p);

/// Calls fn(i) for i in [0, n) on up to `jobs` threads. Indices are handed
/// out dynamically; the first exception thrown is rethrown after all
/// workers finish.
void parallelFor(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace upscale
