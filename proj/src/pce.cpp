#include "upscale/pce.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

namespace upscale::pce {

std::size_t MultiIndexHash::operator()(const MultiIndex& a) const noexcept {
  std::size_t h = 1469598103934665603ull;
  for (int v : a) {
    h ^= static_cast<std::size_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  }
  return h;
}

namespace {

// All indices of total degree `d` in `dim` variables, first coordinate
// descending.
void appendDegree(int dim, int d, MultiIndex& cur, int pos, std::vector<MultiIndex>& out) {
  if (pos == dim - 1) {
    cur[pos] = d;
    out.push_back(cur);
    return;
  }
  for (int k = d; k >= 0; --k) {
    cur[pos] = k;
    appendDegree(dim, d - k, cur, pos + 1, out);
  }
  cur[pos] = 0;
}

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

}  // namespace

MultiIndexSet::MultiIndexSet(int dimension, int degree) : dim_(dimension), degree_(degree) {
  if (dimension < 1 || degree < 0) throw DomainError("MultiIndexSet: need dimension >= 1, degree >= 0");
  MultiIndex cur(static_cast<std::size_t>(dimension), 0);
  for (int d = 0; d <= degree; ++d) appendDegree(dimension, d, cur, 0, indices_);
  factorials_.resize(size());
  lookup_.reserve(indices_.size());
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    lookup_.emplace(indices_[i], static_cast<Eigen::Index>(i));
    double f = 1.0;
    for (int a : indices_[i]) f *= factorial(a);
    factorials_(static_cast<Eigen::Index>(i)) = f;
  }
}

Eigen::Index MultiIndexSet::find(const MultiIndex& alpha) const {
  auto it = lookup_.find(alpha);
  return it == lookup_.end() ? -1 : it->second;
}

int MultiIndexSet::totalDegree(Eigen::Index i) const {
  int s = 0;
  for (int a : (*this)[i]) s += a;
  return s;
}

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return std::round(r);
}

double hermite(int n, double x) {
  if (n < 0) throw DomainError("hermite: negative order");
  if (n == 0) return 1.0;
  double hm = 1.0, h = x;
  for (int k = 1; k < n; ++k) {
    const double hn = x * h - k * hm;
    hm = h;
    h = hn;
  }
  return h;
}

Vector evalBasis(const MultiIndexSet& set, const Vector& theta) {
  if (theta.size() != set.dimension())
    throw DimensionMismatch("evalBasis: germ has " + std::to_string(theta.size()) +
                            " entries, basis expects " + std::to_string(set.dimension()));
  const int L = set.dimension(), p = set.degree();
  // Table of He_n(theta_k).
  Matrix table(p + 1, L);
  for (int k = 0; k < L; ++k) {
    table(0, k) = 1.0;
    if (p >= 1) table(1, k) = theta(k);
    for (int n = 1; n < p; ++n) table(n + 1, k) = theta(k) * table(n, k) - n * table(n - 1, k);
  }
  Vector out(set.size());
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    double v = 1.0;
    const auto& a = set[i];
    for (int k = 0; k < L; ++k)
      if (a[static_cast<std::size_t>(k)]) v *= table(a[static_cast<std::size_t>(k)], k);
    out(i) = v;
  }
  return out;
}

Matrix evalBasisRows(const MultiIndexSet& set, const Matrix& thetas) {
  Matrix out(thetas.rows(), set.size());
  for (Eigen::Index i = 0; i < thetas.rows(); ++i)
    out.row(i) = evalBasis(set, thetas.row(i).transpose()).transpose();
  return out;
}

PceVariable::PceVariable(SetPtr basis, Matrix coefficients, int split)
    : basis_(std::move(basis)), coeffs_(std::move(coefficients)), split_(split) {
  if (!basis_) throw DomainError("PceVariable: null basis");
  if (coeffs_.cols() != basis_->size())
    throw DimensionMismatch("PceVariable: coefficient columns do not match the basis size");
  if (split_ < 0) split_ = basis_->dimension();
  if (split_ > basis_->dimension()) throw DomainError("PceVariable: split beyond germ dimension");
}

Matrix PceVariable::covariance() const {
  const Eigen::Index P = coeffs_.cols();
  if (P <= 1) return Matrix::Zero(coeffs_.rows(), coeffs_.rows());
  const Matrix c = coeffs_.rightCols(P - 1);
  const Vector w = basis_->factorials().tail(P - 1);
  Matrix cov = c * w.asDiagonal() * c.transpose();
  return 0.5 * (cov + cov.transpose());
}

Vector PceVariable::evaluate(const Vector& theta) const { return coeffs_ * evalBasis(*basis_, theta); }

Matrix PceVariable::evaluateRows(const Matrix& thetas) const {
  return evalBasisRows(*basis_, thetas) * coeffs_.transpose();
}

PceVariable PceVariable::expectLeading() const {
  Matrix c = coeffs_;
  for (Eigen::Index i = 0; i < basis_->size(); ++i) {
    const auto& a = (*basis_)[i];
    if (std::any_of(a.begin(), a.begin() + split_, [](int v) { return v != 0; })) c.col(i).setZero();
  }
  return PceVariable(basis_, std::move(c), split_);
}

PceVariable PceVariable::trailingPart() const {
  const int trailing = basis_->dimension() - split_;
  if (trailing < 1) throw DomainError("PceVariable: no trailing germ block");
  auto set = makeSet(trailing, basis_->degree());
  Matrix c = Matrix::Zero(coeffs_.rows(), set->size());
  for (Eigen::Index i = 0; i < basis_->size(); ++i) {
    const auto& a = (*basis_)[i];
    if (std::any_of(a.begin(), a.begin() + split_, [](int v) { return v != 0; })) continue;
    const MultiIndex tail(a.begin() + split_, a.end());
    c.col(set->find(tail)) = coeffs_.col(i);
  }
  return PceVariable(set, std::move(c), 0);
}

Moments moments(const PceVariable& v) { return {v.mean(), v.covariance()}; }

Matrix samplePce(const PceVariable& v, Eigen::Index nSamples, std::uint64_t seed) {
  Rng rng(seed);
  return v.evaluateRows(standardNormal(rng, nSamples, v.germDim()));
}

Matrix regress(const MultiIndexSet& set, const Matrix& thetas, const Matrix& values, double ridge) {
  if (thetas.rows() != values.rows()) throw DimensionMismatch("regress: sample counts differ");
  const Matrix A = evalBasisRows(set, thetas);
  Matrix gram = A.transpose() * A;
  if (ridge > 0.0) gram.diagonal().array() += ridge * gram.diagonal().mean();
  const Matrix rhs = A.transpose() * values;
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success) throw IllConditioned("regress: normal equations are singular");
  return ldlt.solve(rhs).transpose();
}

Matrix haltonNormal(Eigen::Index n, int dim, Eigen::Index skip) {
  static constexpr int primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41, 43,
                                   47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103};
  if (dim > static_cast<int>(std::size(primes))) throw DomainError("haltonNormal: dimension too large");
  Matrix out(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < dim; ++k) {
      const int b = primes[k];
      double f = 1.0, r = 0.0;
      for (Eigen::Index m = i + skip; m > 0; m /= b) {
        f /= b;
        r += f * static_cast<double>(m % b);
      }
      out(i, k) = normalQuantile(r);
    }
  }
  return out;
}

}  // namespace upscale::pce
