#pragma once

#include "upscale/pce.hpp"

#include <cstdint>
#include <vector>

namespace upscale::gmkf {

using pce::PceVariable;

enum class MapKind { Monomial, OrthogonalPolynomial };

/// Prior parameters q_f and model forecast y_f on one germ theta. The
/// measurement noise eps ~ N(0, noiseCovariance) is added to y_f internally
/// and carried as extra germ dimensions appended to theta.
struct UpdateProblem {
  PceVariable priorQ;
  PceVariable forecastY;
  Matrix noiseCovariance;
  int mapOrder = 1;
  MapKind mapKind = MapKind::OrthogonalPolynomial;
  /// Monte Carlo budget for the map coefficients when exact Gauss-Hermite
  /// quadrature would need more than `maxQuadraturePoints` nodes.
  Eigen::Index mapSamples = 10000;
  Eigen::Index maxQuadraturePoints = 200000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GainResult {
  Matrix gain;
  int rankDeficiency = 0;
  bool pseudoInverse = false;
};

/// K = C_qy (C_y + C_eps)^-1, pseudo-inverse when the innovation covariance
/// is singular.
GainResult kalmanGain(const UpdateProblem& problem);

struct PosteriorResult {
  /// Germ (theta, eps, xi); split = dim(theta) + dim(eps).
  PceVariable assimilatedQ;
  /// Expectation over (theta, eps), a PCE over xi.
  PceVariable aleatoryQ;
  /// Linear gain, or map coefficients (features x dim q) for higher orders.
  Matrix gain;
  /// E|q_f - phi(y_M)|^2 under the forecast.
  double residualMeanSquare = 0.0;
  /// Number of integration nodes used for the map; zero for the linear map.
  Eigen::Index mapNodes = 0;
  bool exactQuadrature = true;
  int rankDeficiency = 0;
};

PosteriorResult updateLinear(const UpdateProblem& problem, const Vector& measurement);
PosteriorResult updateLinear(const UpdateProblem& problem, const PceVariable& measurement);

PosteriorResult updatePolynomial(const UpdateProblem& problem, const Vector& measurement);
PosteriorResult updatePolynomial(const UpdateProblem& problem, const PceVariable& measurement);

/// Linear or polynomial map depending on problem.mapOrder.
PosteriorResult update(const UpdateProblem& problem, const Vector& measurement);
PosteriorResult update(const UpdateProblem& problem, const PceVariable& measurement);

/// Aleatory parameter sample E_theta q_a for each deterministic measurement
/// (rows of `measurements`). Result has one row per measurement.
Matrix updatePerSample(const UpdateProblem& problem, const Matrix& measurements, int jobs = 1);

/// Keeps the coefficients whose leading (theta) part is the zero index. A
/// PCE without trailing germ collapses to a constant on a one-dimensional
/// germ.
PceVariable marginalizeTheta(const PceVariable& assimilated);

/// Features of the observable used by the polynomial map, one row per y.
Matrix mapFeatures(const Matrix& y, int order, MapKind kind, const Vector& center, const Vector& scale);

/// Probabilists' Gauss-Hermite rule with `n` nodes (weights sum to one).
void gaussHermite(int n, Vector& nodes, Vector& weights);

}  // namespace upscale::gmkf
