#include "upscale/gmkf.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace upscale::gmkf {

using pce::MultiIndex;
using pce::MultiIndexSet;
using pce::SetPtr;

namespace {

constexpr double kPinvThreshold = 1e-12;
constexpr double kJitter = 1e-10;

Matrix embed(const PceVariable& v, const MultiIndexSet& target, int offset) {
  Matrix c = Matrix::Zero(v.outputDim(), target.size());
  MultiIndex idx(static_cast<std::size_t>(target.dimension()), 0);
  for (Eigen::Index i = 0; i < v.basis().size(); ++i) {
    std::fill(idx.begin(), idx.end(), 0);
    const auto& a = v.basis()[i];
    std::copy(a.begin(), a.end(), idx.begin() + offset);
    const Eigen::Index j = target.find(idx);
    if (j < 0) throw DomainError("gmkf: target basis cannot hold the expansion");
    c.col(j) += v.coefficients().col(i);
  }
  return c;
}

Matrix crossCovariance(const Matrix& a, const Matrix& b, const Vector& factorials) {
  const Eigen::Index p = factorials.size();
  return a.rightCols(p - 1) * factorials.tail(p - 1).asDiagonal() * b.rightCols(p - 1).transpose();
}

Matrix noiseFactor(const Matrix& c) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(c);
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

// Prior and noisy forecast on the germ (theta, eps).
struct Forecast {
  SetPtr set;
  Matrix q, y;
  int thetaDim = 0, noiseDim = 0;
};

Forecast noisyForecast(const UpdateProblem& p, int degree) {
  Forecast f;
  f.thetaDim = p.priorQ.germDim();
  f.noiseDim = static_cast<int>(p.noiseCovariance.rows());
  degree = std::max({degree, p.priorQ.basis().degree(), p.forecastY.basis().degree(), 1});
  f.set = pce::makeSet(f.thetaDim + f.noiseDim, degree);
  f.q = embed(p.priorQ, *f.set, 0);
  f.y = embed(p.forecastY, *f.set, 0);
  const Matrix l = noiseFactor(p.noiseCovariance);
  for (int k = 0; k < f.noiseDim; ++k) f.y.col(1 + f.thetaDim + k) += l.col(k);
  return f;
}

void tensorRule(int dim, int points, Matrix& nodes, Vector& weights) {
  Vector x, w;
  gaussHermite(points, x, w);
  Eigen::Index total = 1;
  for (int k = 0; k < dim; ++k) total *= points;
  nodes.resize(total, dim);
  weights.resize(total);
  std::vector<int> digit(static_cast<std::size_t>(dim), 0);
  for (Eigen::Index i = 0; i < total; ++i) {
    double wi = 1.0;
    for (int k = 0; k < dim; ++k) {
      nodes(i, k) = x(digit[static_cast<std::size_t>(k)]);
      wi *= w(digit[static_cast<std::size_t>(k)]);
    }
    weights(i) = wi;
    for (int k = 0; k < dim && ++digit[static_cast<std::size_t>(k)] == points; ++k)
      digit[static_cast<std::size_t>(k)] = 0;
  }
}

// Exact tensor Gauss-Hermite when affordable, else seeded Monte Carlo.
bool integrationRule(int dim, int degree, Eigen::Index maxNodes, Eigen::Index samples,
                     std::uint64_t seed, Matrix& nodes, Vector& weights) {
  const int r = degree / 2 + 1;
  const double total = std::pow(static_cast<double>(r), dim);
  if (total <= static_cast<double>(maxNodes)) {
    tensorRule(dim, r, nodes, weights);
    return true;
  }
  Rng rng(seed);
  nodes = standardNormal(rng, samples, dim);
  weights = Vector::Constant(samples, 1.0 / static_cast<double>(samples));
  return false;
}

// Coefficients (rows x P) of values sampled at the rule's nodes.
Matrix project(const MultiIndexSet& set, const Matrix& nodes, const Vector& weights,
               const Matrix& values, bool exact) {
  if (!exact) return pce::regress(set, nodes, values, kJitter);
  Matrix c = Matrix::Zero(values.cols(), set.size());
  for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
    const Vector h = evalBasis(set, nodes.row(i).transpose());
    c.noalias() += weights(i) * values.row(i).transpose() * h.transpose();
  }
  return c * set.factorials().cwiseInverse().asDiagonal();
}

struct FittedMap {
  Forecast forecast;
  int order = 1;
  MapKind kind = MapKind::OrthogonalPolynomial;
  Vector center, scale;
  Matrix beta;  // features x dim q, or the gain (dim q x dim y) when order == 1
  // Expansion of q_f - phi(y_M) on (theta, eps).
  PceVariable residual{pce::makeSet(1, 0), Matrix::Zero(1, 1)};
  double meanSquare = 0.0;
  Eigen::Index nodes = 0;
  bool exact = true;
  int rankDeficiency = 0;

  Matrix phi(const Matrix& y) const {
    if (order == 1) return y * beta.transpose();
    return mapFeatures(y, order, kind, center, scale) * beta;
  }
};

FittedMap fitLinear(const UpdateProblem& p) {
  FittedMap m;
  const GainResult g = kalmanGain(p);
  m.forecast = noisyForecast(p, 1);
  m.beta = g.gain;
  m.rankDeficiency = g.rankDeficiency;
  Matrix r = m.forecast.q - g.gain * m.forecast.y;
  m.meanSquare = crossCovariance(r, r, m.forecast.set->factorials()).trace();
  m.residual = PceVariable(m.forecast.set, std::move(r));
  return m;
}

FittedMap fitPolynomial(const UpdateProblem& p) {
  if (p.mapKind == MapKind::Monomial && p.mapOrder >= 4)
    throw IllConditioned("updatePolynomial: monomial map of order >= 4; use the orthogonal kind");
  FittedMap m;
  m.order = p.mapOrder;
  m.kind = p.mapKind;
  m.forecast = noisyForecast(p, 1);
  const auto& f = m.forecast;
  const PceVariable y(f.set, f.y), q(f.set, f.q);
  m.center = y.mean();
  m.scale = y.covariance().diagonal().cwiseSqrt();
  for (Eigen::Index k = 0; k < m.scale.size(); ++k)
    if (!(m.scale(k) > 0.0)) m.scale(k) = 1.0;

  const int dy = std::max(p.forecastY.basis().degree(), 1);
  const int degree = std::max(p.priorQ.basis().degree(), m.order * dy);
  Matrix nodes;
  Vector w;
  m.exact = integrationRule(f.set->dimension(), 2 * degree, p.maxQuadraturePoints, p.mapSamples,
                            p.seed, nodes, w);
  m.nodes = nodes.rows();

  const Matrix qs = q.evaluateRows(nodes);
  const Matrix ys = y.evaluateRows(nodes);
  const Matrix feat = mapFeatures(ys, m.order, m.kind, m.center, m.scale);
  Matrix gram = feat.transpose() * w.asDiagonal() * feat;
  gram.diagonal() *= 1.0 + kJitter;
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success) throw IllConditioned("updatePolynomial: singular map normal equations");
  m.beta = ldlt.solve(feat.transpose() * w.asDiagonal() * qs);

  const Matrix r = qs - feat * m.beta;
  m.meanSquare = (w.asDiagonal() * r.rowwise().squaredNorm()).sum();
  auto set = pce::makeSet(f.set->dimension(), degree);
  m.residual = PceVariable(set, project(*set, nodes, w, r, m.exact));
  return m;
}

FittedMap fitMap(const UpdateProblem& p) {
  p.validate();
  return p.mapOrder == 1 ? fitLinear(p) : fitPolynomial(p);
}

PosteriorResult assemble(const UpdateProblem& p, const FittedMap& m, const Vector* ym,
                         const PceVariable* ymPce) {
  const int lead = m.forecast.thetaDim + m.forecast.noiseDim;
  const int xiDim = ymPce ? ymPce->germDim() : 0;
  int degree = m.residual.basis().degree();
  PceVariable measured(pce::makeSet(1, 0), Matrix::Zero(p.priorQ.outputDim(), 1));
  if (ymPce) {
    if (ymPce->outputDim() != p.forecastY.outputDim())
      throw DimensionMismatch("gmkf: measurement dimension differs from the forecast");
    if (m.order == 1) {
      measured = PceVariable(ymPce->basisPtr(), m.beta * ymPce->coefficients());
    } else {
      const int dm = m.order * std::max(ymPce->basis().degree(), 1);
      Matrix nodes;
      Vector w;
      const bool exact = integrationRule(xiDim, 2 * dm, p.maxQuadraturePoints, p.mapSamples,
                                         p.seed + 1, nodes, w);
      auto set = pce::makeSet(xiDim, dm);
      measured = PceVariable(set, project(*set, nodes, w, m.phi(ymPce->evaluateRows(nodes)), exact));
    }
    degree = std::max(degree, measured.basis().degree());
  } else {
    if (ym->size() != p.forecastY.outputDim())
      throw DimensionMismatch("gmkf: measurement dimension differs from the forecast");
    if (!ym->allFinite()) throw DomainError("gmkf: measurement is not finite");
  }

  auto set = pce::makeSet(lead + xiDim, degree);
  Matrix c = embed(m.residual, *set, 0);
  if (ymPce) c += embed(measured, *set, lead);
  else c.col(0) += m.phi(ym->transpose()).transpose();

  PosteriorResult out{PceVariable(set, std::move(c), lead), PceVariable(pce::makeSet(1, 0), Matrix::Zero(1, 1)),
                      m.beta, m.meanSquare, m.order == 1 ? 0 : m.nodes, m.exact, m.rankDeficiency};
  out.aleatoryQ = marginalizeTheta(out.assimilatedQ);
  return out;
}

}  // namespace

void UpdateProblem::validate() const {
  if (priorQ.germDim() != forecastY.germDim())
    throw GermMismatch("UpdateProblem: prior and forecast live on different germs");
  const Eigen::Index ny = forecastY.outputDim();
  if (noiseCovariance.rows() != ny || noiseCovariance.cols() != ny)
    throw DimensionMismatch("UpdateProblem: noise covariance does not match the forecast dimension");
  const double scale = std::max(noiseCovariance.cwiseAbs().maxCoeff(), 1e-300);
  if ((noiseCovariance - noiseCovariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw DomainError("UpdateProblem: noise covariance is not symmetric");
  if (ny > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(noiseCovariance, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-12 * scale)
      throw DomainError("UpdateProblem: noise covariance is not positive semidefinite");
  }
  if (mapOrder < 1) throw DomainError("UpdateProblem: map order must be >= 1");
  if (mapSamples < 1) throw DomainError("UpdateProblem: map sample budget must be >= 1");
}

GainResult kalmanGain(const UpdateProblem& problem) {
  problem.validate();
  const int degree = std::max(problem.priorQ.basis().degree(), problem.forecastY.basis().degree());
  auto set = pce::makeSet(problem.priorQ.germDim(), degree);
  const Matrix q = embed(problem.priorQ, *set, 0);
  const Matrix y = embed(problem.forecastY, *set, 0);
  const Matrix cqy = crossCovariance(q, y, set->factorials());
  const Matrix s = crossCovariance(y, y, set->factorials()) + problem.noiseCovariance;

  Eigen::JacobiSVD<Matrix> svd(s, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double cut = kPinvThreshold * (sv.size() ? sv(0) : 0.0);
  Vector inv = Vector::Zero(sv.size());
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cut) {
      inv(i) = 1.0 / sv(i);
      ++rank;
    }
  GainResult g;
  g.rankDeficiency = static_cast<int>(sv.size()) - rank;
  g.pseudoInverse = g.rankDeficiency > 0;
  if (2 * g.rankDeficiency > sv.size())
    throw SingularInnovation("kalmanGain: innovation covariance has rank " + std::to_string(rank) +
                             " of " + std::to_string(sv.size()));
  g.gain = cqy * svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return g;
}

PosteriorResult updateLinear(const UpdateProblem& problem, const Vector& measurement) {
  return assemble(problem, fitLinear(problem), &measurement, nullptr);
}

PosteriorResult updateLinear(const UpdateProblem& problem, const PceVariable& measurement) {
  return assemble(problem, fitLinear(problem), nullptr, &measurement);
}

PosteriorResult updatePolynomial(const UpdateProblem& problem, const Vector& measurement) {
  return assemble(problem, fitMap(problem), &measurement, nullptr);
}

PosteriorResult updatePolynomial(const UpdateProblem& problem, const PceVariable& measurement) {
  return assemble(problem, fitMap(problem), nullptr, &measurement);
}

PosteriorResult update(const UpdateProblem& problem, const Vector& measurement) {
  return updatePolynomial(problem, measurement);
}

PosteriorResult update(const UpdateProblem& problem, const PceVariable& measurement) {
  return updatePolynomial(problem, measurement);
}

Matrix updatePerSample(const UpdateProblem& problem, const Matrix& measurements, int jobs) {
  if (measurements.rows() < 1) throw DomainError("updatePerSample: need at least one measurement");
  if (measurements.cols() != problem.forecastY.outputDim())
    throw DimensionMismatch("updatePerSample: measurement dimension differs from the forecast");
  const FittedMap m = fitMap(problem);
  const Vector base = m.residual.mean();
  Matrix out(measurements.rows(), problem.priorQ.outputDim());
  parallelFor(static_cast<std::size_t>(measurements.rows()), jobs, [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (!measurements.row(row).allFinite())
      throw DomainError("updatePerSample: measurement " + std::to_string(i) + " is not finite");
    out.row(row) = base.transpose() + m.phi(measurements.row(row));
  });
  return out;
}

PceVariable marginalizeTheta(const PceVariable& assimilated) {
  if (assimilated.split() >= assimilated.germDim())
    return PceVariable(pce::makeSet(1, 0), assimilated.mean(), 0);
  return assimilated.trailingPart();
}

Matrix mapFeatures(const Matrix& y, int order, MapKind kind, const Vector& center, const Vector& scale) {
  const int ny = static_cast<int>(y.cols());
  const MultiIndexSet set(ny, order);
  Matrix out(y.rows(), set.size());
  Matrix table(order + 1, ny);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (int k = 0; k < ny; ++k) {
      table(0, k) = 1.0;
      if (kind == MapKind::Monomial) {
        for (int n = 1; n <= order; ++n) table(n, k) = table(n - 1, k) * y(i, k);
      } else {
        const double s = (y(i, k) - center(k)) / scale(k);
        if (order >= 1) table(1, k) = s;
        for (int n = 1; n < order; ++n) table(n + 1, k) = s * table(n, k) - n * table(n - 1, k);
      }
    }
    for (Eigen::Index j = 0; j < set.size(); ++j) {
      double v = 1.0;
      const auto& a = set[j];
      for (int k = 0; k < ny; ++k) v *= table(a[static_cast<std::size_t>(k)], k);
      out(i, j) = v;
    }
  }
  return out;
}

void gaussHermite(int n, Vector& nodes, Vector& weights) {
  if (n < 1) throw DomainError("gaussHermite: need at least one node");
  Matrix jac = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) jac(k, k - 1) = jac(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jac);
  nodes = eig.eigenvalues();
  weights = eig.eigenvectors().row(0).transpose().cwiseAbs2();
  weights /= weights.sum();
}

}  // namespace upscale::gmkf
