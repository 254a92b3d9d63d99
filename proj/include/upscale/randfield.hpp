#pragma once

#include "upscale/core.hpp"

#include <cstdint>
#include <vector>

namespace upscale::randfield {

/// Equal-radius circular inclusions inside the unit square.
struct InclusionLayout {
  std::vector<Vector2> centers;
  double radius = 0.0;
  std::uint64_t seed = 0;

  std::size_t count() const { return centers.size(); }
  bool contains(const Vector2& x) const;
};

/// Random sequential adsorption of `count` non-overlapping disks whose total
/// area equals `volumeFraction`. Each inclusion gets at most
/// `attemptsPerInclusion` trial positions; a stuck layout is restarted from
/// scratch up to `restarts` times before PackingFailure is raised.
InclusionLayout placeInclusions(int count, double volumeFraction, std::uint64_t seed,
                                int attemptsPerInclusion = 100000, int restarts = 20);

/// Parameters of the log of a lognormal variable with given mean and
/// coefficient of variation.
struct LognormalParams {
  double meanLog = 0.0;
  double sdLog = 0.0;
};

LognormalParams lognormalFromMeanCov(double mean, double cov);

/// Lognormal random field discretized at a fixed set of points with an
/// isotropic squared-exponential covariance exp(-|x-y|^2 / lc^2) of the log,
/// truncated Karhunen-Loeve representation.
class LognormalField {
 public:
  /// `points` are the evaluation sites (element midpoints); `correlationLength`
  /// is in the same length units as the points. Modes are kept until
  /// `energyFraction` of the covariance trace is captured.
  LognormalField(const std::vector<Vector2>& points, Vector meanLog, Vector sdLog,
                 double correlationLength, double energyFraction = 0.99);

  LognormalField(const std::vector<Vector2>& points, double meanLog, double sdLog,
                 double correlationLength, double energyFraction = 0.99);

  /// Field from explicit KL eigenpairs (eigenvectors are points x modes).
  LognormalField(Vector meanLog, Vector eigenvalues, Matrix eigenvectors, double correlationLength);

  Eigen::Index modeCount() const { return eigenvalues_.size(); }
  Eigen::Index pointCount() const { return meanLog_.size(); }
  const Vector& eigenvalues() const { return eigenvalues_; }
  const Matrix& eigenvectors() const { return eigenvectors_; }
  const Vector& meanLog() const { return meanLog_; }
  double correlationLength() const { return correlationLength_; }
  /// Sum of the retained eigenvalues divided by the covariance trace.
  double capturedFraction() const { return captured_; }

  /// Per-point positive values exp(meanLog + sum_k seeds_k sqrt(lambda_k) phi_k).
  Vector sample(const Vector& gaussianSeeds) const;
  /// Log of `sample` without the exponential.
  Vector sampleLog(const Vector& gaussianSeeds) const;

 private:
  void decompose(const std::vector<Vector2>& points, const Vector& sdLog, double energyFraction);

  Vector meanLog_;
  Vector eigenvalues_;
  Matrix eigenvectors_;  // points x modes, already scaled by sdLog per point
  double correlationLength_;
  double captured_ = 1.0;
};

/// Free-function spelling of LognormalField::sample with the seed-length check.
Vector sampleField(const LognormalField& field, const Vector& gaussianSeeds);

}  // namespace upscale::randfield
