#include "upscale/randfield.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <string>

namespace upscale::randfield {

bool InclusionLayout::contains(const Vector2& x) const {
  const double r2 = radius * radius;
  for (const auto& c : centers)
    if ((x - c).squaredNorm() <= r2) return true;
  return false;
}

InclusionLayout placeInclusions(int count, double volumeFraction, std::uint64_t seed,
                                int attemptsPerInclusion, int restarts) {
  if (count < 1) throw DomainError("placeInclusions: count must be >= 1");
  if (!(volumeFraction > 0.0 && volumeFraction < 1.0))
    throw DomainError("placeInclusions: volume fraction must lie in (0,1)");

  InclusionLayout layout;
  layout.seed = seed;
  layout.radius = std::sqrt(volumeFraction / (count * std::numbers::pi));
  const double r = layout.radius;
  if (2.0 * r >= 1.0) throw PackingFailure("placeInclusions: inclusion larger than the domain");

  Rng rng(seed);
  std::uniform_real_distribution<double> coord(r, 1.0 - r);
  const double minDist2 = 4.0 * r * r;

  for (int attempt = 0; attempt <= restarts; ++attempt) {
    layout.centers.clear();
    bool stuck = false;
    while (static_cast<int>(layout.centers.size()) < count && !stuck) {
      stuck = true;
      for (int trial = 0; trial < attemptsPerInclusion; ++trial) {
        const Vector2 c(coord(rng), coord(rng));
        bool free = true;
        for (const auto& other : layout.centers) {
          if ((c - other).squaredNorm() < minDist2) {
            free = false;
            break;
          }
        }
        if (free) {
          layout.centers.push_back(c);
          stuck = false;
          break;
        }
      }
    }
    if (!stuck) return layout;
  }
  throw PackingFailure("placeInclusions: could not place " + std::to_string(count) +
                       " inclusions at volume fraction " + std::to_string(volumeFraction));
}

LognormalParams lognormalFromMeanCov(double mean, double cov) {
  if (!(mean > 0.0)) throw DomainError("lognormalFromMeanCov: mean must be positive");
  if (cov < 0.0) throw DomainError("lognormalFromMeanCov: coefficient of variation must be >= 0");
  const double var = std::log1p(cov * cov);
  return {std::log(mean) - 0.5 * var, std::sqrt(var)};
}

LognormalField::LognormalField(const std::vector<Vector2>& points, Vector meanLog, Vector sdLog,
                               double correlationLength, double energyFraction)
    : meanLog_(std::move(meanLog)), correlationLength_(correlationLength) {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (meanLog_.size() != n || sdLog.size() != n)
    throw DimensionMismatch("LognormalField: per-point statistics must match the point count");
  if (!(correlationLength > 0.0)) throw DomainError("LognormalField: correlation length must be positive");
  decompose(points, sdLog, energyFraction);
}

LognormalField::LognormalField(const std::vector<Vector2>& points, double meanLog, double sdLog,
                               double correlationLength, double energyFraction)
    : LognormalField(points, Vector::Constant(static_cast<Eigen::Index>(points.size()), meanLog),
                     Vector::Constant(static_cast<Eigen::Index>(points.size()), sdLog),
                     correlationLength, energyFraction) {}

LognormalField::LognormalField(Vector meanLog, Vector eigenvalues, Matrix eigenvectors,
                               double correlationLength)
    : meanLog_(std::move(meanLog)),
      eigenvalues_(std::move(eigenvalues)),
      eigenvectors_(std::move(eigenvectors)),
      correlationLength_(correlationLength) {
  if (eigenvectors_.rows() != meanLog_.size() || eigenvectors_.cols() != eigenvalues_.size())
    throw DimensionMismatch("LognormalField: eigenpair shapes do not match");
  if ((eigenvalues_.array() < 0.0).any()) throw DomainError("LognormalField: negative eigenvalue");
}

void LognormalField::decompose(const std::vector<Vector2>& points, const Vector& sdLog,
                               double energyFraction) {
  const auto n = static_cast<Eigen::Index>(points.size());
  const double lc2 = correlationLength_ * correlationLength_;

  // Correlation matrix; per-point standard deviations are applied afterwards so
  // that eigenpairs of a homogeneous field are those of the kernel itself.
  Matrix corr(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    corr(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = std::exp(-(points[i] - points[j]).squaredNorm() / lc2);
      corr(i, j) = v;
      corr(j, i) = v;
    }
  }
  const Matrix cov = sdLog.asDiagonal() * corr * sdLog.asDiagonal();
  const double trace = cov.trace();
  if (trace <= 0.0) {
    eigenvalues_.resize(0);
    eigenvectors_.resize(n, 0);
    captured_ = 1.0;
    return;
  }

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  // Eigen returns ascending order; walk from the top.
  Eigen::Index keep = 0;
  double acc = 0.0;
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    acc += std::max(eig.eigenvalues()(k), 0.0);
    ++keep;
    if (acc >= energyFraction * trace) break;
  }
  eigenvalues_.resize(keep);
  eigenvectors_.resize(n, keep);
  for (Eigen::Index m = 0; m < keep; ++m) {
    eigenvalues_(m) = std::max(eig.eigenvalues()(n - 1 - m), 0.0);
    eigenvectors_.col(m) = eig.eigenvectors().col(n - 1 - m);
  }
  captured_ = eigenvalues_.sum() / trace;
}

Vector LognormalField::sampleLog(const Vector& gaussianSeeds) const {
  if (gaussianSeeds.size() != eigenvalues_.size())
    throw DimensionMismatch("LognormalField: expected " + std::to_string(eigenvalues_.size()) +
                            " seeds, got " + std::to_string(gaussianSeeds.size()));
  return meanLog_ +
         eigenvectors_ * (eigenvalues_.cwiseSqrt().cwiseProduct(gaussianSeeds));
}

Vector LognormalField::sample(const Vector& gaussianSeeds) const {
  return sampleLog(gaussianSeeds).array().exp().matrix();
}

Vector sampleField(const LognormalField& field, const Vector& gaussianSeeds) {
  return field.sample(gaussianSeeds);
}

}  // namespace upscale::randfield
