#pragma once

#include "upscale/core.hpp"

#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

namespace upscale::pce {

using MultiIndex = std::vector<int>;

struct MultiIndexHash {
  std::size_t operator()(const MultiIndex& a) const noexcept;
};

/// Total-degree multi-index set, graded lexicographic: the zero index first,
/// then degree 1, degree 2 and so on. Within one degree indices run in
/// descending lexicographic order, so the linear term of germ k sits at 1 + k.
class MultiIndexSet {
 public:
  MultiIndexSet(int dimension, int degree);

  int dimension() const { return dim_; }
  int degree() const { return degree_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(indices_.size()); }
  const MultiIndex& operator[](Eigen::Index i) const { return indices_[static_cast<std::size_t>(i)]; }
  const std::vector<MultiIndex>& indices() const { return indices_; }

  /// Position of `alpha`, or -1 when it is not part of the set.
  Eigen::Index find(const MultiIndex& alpha) const;
  /// alpha! for every index, in order.
  const Vector& factorials() const { return factorials_; }
  int totalDegree(Eigen::Index i) const;

 private:
  int dim_, degree_;
  std::vector<MultiIndex> indices_;
  std::unordered_map<MultiIndex, Eigen::Index, MultiIndexHash> lookup_;
  Vector factorials_;
};

using SetPtr = std::shared_ptr<const MultiIndexSet>;
inline SetPtr makeSet(int dimension, int degree) {
  return std::make_shared<const MultiIndexSet>(dimension, degree);
}

/// Binomial coefficient C(n, k) as a double.
double binomial(int n, int k);

/// Probabilists' Hermite polynomial He_n(x).
double hermite(int n, double x);

/// H_alpha(theta) for every alpha of the set.
Vector evalBasis(const MultiIndexSet& set, const Vector& theta);
/// Row i holds evalBasis(set, thetas.row(i)).
Matrix evalBasisRows(const MultiIndexSet& set, const Matrix& thetas);

/// Random vector q(theta) = sum_alpha c_alpha H_alpha(theta).
///
/// The germ may be split into a leading block theta (first `split` entries)
/// and a trailing block xi.
class PceVariable {
 public:
  PceVariable(SetPtr basis, Matrix coefficients, int split = -1);

  const MultiIndexSet& basis() const { return *basis_; }
  const SetPtr& basisPtr() const { return basis_; }
  const Matrix& coefficients() const { return coeffs_; }
  Matrix& coefficients() { return coeffs_; }
  Eigen::Index outputDim() const { return coeffs_.rows(); }
  int germDim() const { return basis_->dimension(); }
  int split() const { return split_; }

  Vector mean() const { return coeffs_.col(0); }
  Matrix covariance() const;
  Vector evaluate(const Vector& theta) const;
  /// Evaluate at every row of `thetas`; result is N x outputDim.
  Matrix evaluateRows(const Matrix& thetas) const;

  /// Expectation over the leading block: only coefficients whose leading part
  /// is zero survive. The result still lives on the full germ.
  PceVariable expectLeading() const;
  /// Coefficients whose multi-index has a zero leading block, as a PCE in the
  /// trailing germ only.
  PceVariable trailingPart() const;

 private:
  SetPtr basis_;
  Matrix coeffs_;
  int split_;
};

struct Moments {
  Vector mean;
  Matrix covariance;
};

Moments moments(const PceVariable& v);

/// N x outputDim samples; thetas drawn row by row from a seeded generator.
Matrix samplePce(const PceVariable& v, Eigen::Index nSamples, std::uint64_t seed);

/// Least-squares projection of sampled values (N x d) at germ points
/// (N x L) onto the set; returns d x P coefficients.
Matrix regress(const MultiIndexSet& set, const Matrix& thetas, const Matrix& values,
               double ridge = 0.0);

/// Gaussian points from a scrambled-free Halton sequence mapped through the
/// normal quantile, N x dim.
Matrix haltonNormal(Eigen::Index n, int dim, Eigen::Index skip = 1);

}  // namespace upscale::pce
