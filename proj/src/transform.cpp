#include "upscale/transform.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <iostream>

namespace upscale::transform {

namespace {

constexpr double kClamp = 1e-12;

}  // namespace

Vector GermMap::toGerm(const Vector& x) const {
  if (x.size() != dim()) throw DimensionMismatch("GermMap::toGerm: wrong data dimension");
  Vector g(dim());
  for (int j = 0; j < dim(); ++j) {
    double y = x(j);
    if (logSpace) {
      if (!(y > 0.0)) throw SupportViolation("GermMap::toGerm: non-positive component");
      y = std::log(y);
    }
    const double u = marginals[static_cast<std::size_t>(j)].cdf(y);
    if (!std::isfinite(u)) throw CdfOutOfRange("GermMap::toGerm: marginal CDF is not finite");
    g(j) = normalQuantile(std::clamp(u, kClamp, 1.0 - kClamp));
  }
  return choleskyFactor.triangularView<Eigen::Lower>().solve(g);
}

Vector GermMap::fromGerm(const Vector& z) const {
  if (z.size() != dim()) throw DimensionMismatch("GermMap::fromGerm: wrong germ dimension");
  const Vector g = choleskyFactor * z;
  Vector x(dim());
  for (int j = 0; j < dim(); ++j) {
    const double u = std::clamp(normalCdf(g(j)), kClamp, 1.0 - kClamp);
    const double y = marginals[static_cast<std::size_t>(j)].quantile(u);
    x(j) = logSpace ? std::exp(y) : y;
  }
  return x;
}

Matrix GermMap::toGermRows(const Matrix& x) const {
  Matrix z(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) z.row(i) = toGerm(x.row(i).transpose()).transpose();
  return z;
}

Matrix GermMap::fromGermRows(const Matrix& z) const {
  Matrix x(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) x.row(i) = fromGerm(z.row(i).transpose()).transpose();
  return x;
}

GermMap fitGermMap(const Matrix& samples, const GermMapOptions& options) {
  if (samples.rows() < 2 || samples.cols() < 1) throw DegenerateData("fitGermMap: too few samples");
  Matrix y = samples;
  if (options.logSpace) {
    if ((samples.array() <= 0.0).any()) throw SupportViolation("fitGermMap: non-positive sample");
    y = samples.array().log().matrix();
  }
  GermMap map;
  map.logSpace = options.logSpace;
  map.seed = options.gmm.seed;
  map.model = vbayes::fitGmmVB(y, options.kMax, {}, options.gmm);
  map.marginals = map.model.marginals();
  if (samples.cols() >= 2) map.copulaCorrelation = vbayes::fitGaussianCopula(y, map.marginals);
  else map.copulaCorrelation = Matrix::Identity(1, 1);
  map.model.copulaCorrelation = map.copulaCorrelation;
  Eigen::LLT<Matrix> llt(map.copulaCorrelation);
  if (llt.info() != Eigen::Success) throw IllConditioned("fitGermMap: copula correlation not positive definite");
  map.choleskyFactor = llt.matrixL();
  return map;
}

Matrix sampleModel(const GermMap& map, Eigen::Index n, std::uint64_t seed) {
  const auto& m = map.model;
  Rng rng(seed);
  const Vector w = m.weights();
  std::discrete_distribution<int> pick(w.data(), w.data() + w.size());
  std::vector<Matrix> chol;
  for (int k = 0; k < m.components(); ++k) chol.push_back(Eigen::LLT<Matrix>(m.covariance(k)).matrixL());
  Matrix out(n, m.dim);
  std::normal_distribution<double> normal;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = pick(rng);
    Vector e(m.dim);
    for (int j = 0; j < m.dim; ++j) e(j) = normal(rng);
    Vector y = m.means.row(k).transpose() + chol[static_cast<std::size_t>(k)] * e;
    if (map.logSpace) y = y.array().exp();
    out.row(i) = y.transpose();
  }
  return out;
}

pce::PceVariable regressOnGerm(const Matrix& germs, const Matrix& values, int degree,
                               std::vector<vbayes::RvmPosterior>* fits, const vbayes::RvmPriors& priors,
                               const vbayes::RvmOptions& options) {
  if (germs.rows() != values.rows()) throw DimensionMismatch("regressOnGerm: sample counts differ");
  auto set = pce::makeSet(static_cast<int>(germs.cols()), degree);
  const Matrix Psi = pce::evalBasisRows(*set, germs);
  Matrix coeffs = Matrix::Zero(values.cols(), set->size());
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    const Vector t = values.col(j);
    const double mean = t.mean();
    const double spread = (t.array() - mean).abs().maxCoeff();
    if (spread <= 1e-14 * std::max(1.0, std::abs(mean))) {
      // Constant output: only the zero index survives.
      coeffs(j, 0) = mean;
      continue;
    }
    auto post = vbayes::fitRvm(Psi, t, priors, options);
    coeffs.row(j) = post.coefficientMean.transpose();
    if (fits) fits->push_back(std::move(post));
  }
  return pce::PceVariable(set, std::move(coeffs));
}

std::pair<double, double> momentMismatch(const pce::PceVariable& v, const Matrix& samples) {
  const Vector dm = samples.colwise().mean().transpose();
  const Matrix dc = sampleCovariance(samples);
  const double me = (v.mean() - dm).norm() / std::max(dm.norm(), 1e-300);
  const double dcn = dc.norm();
  const double ce = dcn > 0.0 ? (v.covariance() - dc).norm() / dcn : v.covariance().norm();
  return {me, ce};
}

pce::PceVariable synthesizePce(const Matrix& samples, const GermMap& map, int degree,
                               SynthesisReport* report, const vbayes::RvmPriors& priors,
                               const vbayes::RvmOptions& options) {
  if (samples.cols() != map.dim()) throw DimensionMismatch("synthesizePce: data dimension differs from the map");
  SynthesisReport local;
  SynthesisReport& rep = report ? *report : local;
  const Vector first = samples.row(0).transpose();
  if (((samples.rowwise() - first.transpose()).array().abs() == 0.0).all()) {
    auto set = pce::makeSet(map.dim(), degree);
    Matrix c = Matrix::Zero(samples.cols(), set->size());
    c.col(0) = first;
    rep.meanRelError = rep.covRelError = 0.0;
    return pce::PceVariable(set, std::move(c));
  }
  const Matrix germs = map.toGermRows(samples);
  pce::PceVariable v = regressOnGerm(germs, samples, degree, &rep.fits, priors, options);
  std::tie(rep.meanRelError, rep.covRelError) = momentMismatch(v, samples);
  const double worst = std::max(rep.meanRelError, rep.covRelError);
  if (worst > 0.20)
    throw QualityFailure("synthesizePce: surrogate moments differ from the data by " +
                         std::to_string(100.0 * worst) + "%");
  if (worst > 0.05) {
    rep.warned = true;
    std::clog << "warning: PCE surrogate moment mismatch " << 100.0 * worst << "%\n";
  }
  return v;
}

}  // namespace upscale::transform
