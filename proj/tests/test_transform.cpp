#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "upscale/transform.hpp"

#include <cmath>

using namespace upscale;
using namespace upscale::transform;

namespace {

GermMap singleGaussianMap(double mu, double sd) {
  GermMap m;
  m.marginals.push_back({Vector::Ones(1), Vector::Constant(1, mu), Vector::Constant(1, sd)});
  m.copulaCorrelation = Matrix::Identity(1, 1);
  m.choleskyFactor = Matrix::Identity(1, 1);
  return m;
}

// Lognormal columns joined by a Gaussian copula with correlation rho.
Matrix correlatedLognormal(Rng& rng, int n, double rho, double s0, double s1) {
  const Matrix z = standardNormal(rng, n, 2);
  Matrix x(n, 2);
  x.col(0) = (s0 * z.col(0)).array().exp();
  x.col(1) = (s1 * (rho * z.col(0) + std::sqrt(1.0 - rho * rho) * z.col(1))).array().exp() * 3.0;
  return x;
}

double correlation(const Matrix& x) {
  const Matrix c = sampleCovariance(x);
  return c(0, 1) / std::sqrt(c(0, 0) * c(1, 1));
}

}  // namespace

TEST_CASE("median maps to the origin") {
  const GermMap m = singleGaussianMap(0.3, 0.2);
  CHECK(std::abs(m.toGerm(Vector::Constant(1, std::exp(0.3)))(0)) < 1e-14);
  CHECK(m.fromGerm(Vector::Zero(1))(0) == doctest::Approx(std::exp(0.3)).epsilon(1e-14));
  CHECK_THROWS_AS(m.toGerm(Vector::Constant(1, -1.0)), SupportViolation);
  CHECK_THROWS_AS(m.toGerm(Vector::Zero(2)), DimensionMismatch);
}

TEST_CASE("fitted map whitens and round-trips") {
  Rng rng(1);
  const Matrix x = correlatedLognormal(rng, 2000, 0.7, 0.3, 0.2);
  GermMapOptions opt;
  opt.kMax = 3;
  const GermMap map = fitGermMap(x, opt);
  CHECK(std::abs(map.copulaCorrelation(0, 1) - 0.7) < 0.05);
  CHECK((map.choleskyFactor * map.choleskyFactor.transpose() - map.copulaCorrelation).norm() < 1e-12);

  const Matrix model = sampleModel(map, 5000, 2);
  const Matrix z = map.toGermRows(model);
  const Matrix c = sampleCovariance(z);
  CHECK((c - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.05 * 2.0);
  CHECK(std::abs(c(0, 1)) < 0.05);
  for (int j = 0; j < 2; ++j) CHECK(ksStatisticNormal(z.col(j)) < ksCritical1Percent(z.rows()));

  for (int i = 0; i < 100; ++i) {
    const Vector xi = model.row(i).transpose();
    const Vector back = map.fromGerm(map.toGerm(xi));
    CHECK(((back - xi).array().abs() / xi.array().abs()).maxCoeff() < 1e-8);
    const Vector zi = z.row(i).transpose();
    CHECK((map.toGerm(map.fromGerm(zi)) - zi).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("scalar lognormal surrogate mean") {
  Rng rng(3);
  const Matrix x = (0.5 * standardNormal(rng, 2000, 1)).array().exp();
  const GermMap map = fitGermMap(x);
  SynthesisReport rep;
  const auto v = synthesizePce(x, map, 3, &rep);
  CHECK(std::abs(v.mean()(0) - std::exp(0.125)) / std::exp(0.125) < 0.02);
  CHECK(rep.meanRelError < 0.05);
  CHECK(rep.covRelError < 0.05);
}

TEST_CASE("constant data keeps only the zero index") {
  const GermMap map = singleGaussianMap(0.0, 1.0);
  const Matrix x = Matrix::Constant(50, 1, 2.0);
  const auto v = synthesizePce(x, map, 3);
  CHECK(v.coefficients()(0, 0) == 2.0);
  CHECK(v.coefficients().rightCols(v.coefficients().cols() - 1).norm() == 0.0);
  const auto w = regressOnGerm(Matrix::Random(50, 2), x, 2);
  CHECK(w.coefficients()(0, 0) == 2.0);
  CHECK(w.covariance().norm() == 0.0);
}

TEST_CASE("surrogate keeps the dependence of lognormal columns") {
  Rng rng(4);
  const Matrix x = correlatedLognormal(rng, 2000, 0.5, 0.25, 0.3);
  GermMapOptions opt;
  opt.kMax = 3;
  const GermMap map = fitGermMap(x, opt);
  const auto v = synthesizePce(x, map, 3);
  const Matrix c = v.covariance();
  const double rhoPce = c(0, 1) / std::sqrt(c(0, 0) * c(1, 1));
  CHECK(std::abs(rhoPce - correlation(x)) < 0.1);

  const auto v2 = synthesizePce(x, fitGermMap(x, opt), 3);
  CHECK(v2.coefficients() == v.coefficients());
}
