#include "upscale/vbayes.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace upscale::vbayes {

namespace {

std::atomic<long> gChecks{0};
std::atomic<long> gViolations{0};

constexpr double kLog2Pi = 1.8378770664093453;

void recordStep(double prev, double next) {
  ++gChecks;
  if (next < prev - 1e-9 * std::max(1.0, std::abs(prev))) ++gViolations;
}

// ln B(W, nu) of the Wishart normalizer, given ln|W|.
double logWishartB(double logDetW, double nu, int d) {
  double s = -0.5 * nu * logDetW - 0.5 * nu * d * std::numbers::ln2 -
             0.25 * d * (d - 1) * std::log(std::numbers::pi);
  for (int i = 1; i <= d; ++i) s -= std::lgamma(0.5 * (nu + 1 - i));
  return s;
}

double logDirichletC(const Vector& a) {
  double s = std::lgamma(a.sum());
  for (Eigen::Index k = 0; k < a.size(); ++k) s -= std::lgamma(a(k));
  return s;
}

double gammaEntropy(double a, double b) {
  return a - std::log(b) + std::lgamma(a) + (1.0 - a) * digamma(a);
}

// --- VB-GMM ---------------------------------------------------------------

struct GmmWork {
  GmmWork(const Matrix& data, const GmmPriors& priors)
      : X(data), pr(priors), N(static_cast<int>(data.rows())), d(static_cast<int>(data.cols())),
        m0(data.colwise().mean().transpose()) {}

  const Matrix& X;
  GmmPriors pr;
  int N, d;
  Vector m0;
  Matrix W0inv;
  double nu0 = 0.0;
  double logDetW0 = 0.0;

  Matrix r;  // N x K
  Vector alpha, beta, nu;
  Matrix m;                     // K x d
  std::vector<Matrix> Winv;     // inverse Wishart scales
  std::vector<Eigen::LLT<Matrix>> WinvLlt;
  Vector logDetW, logLambda, logPi;
  Vector Nk;
  Matrix xbar;                  // K x d
  std::vector<Matrix> S;

  int K() const { return static_cast<int>(r.cols()); }

  void mStep() {
    const int k = K();
    Nk = r.colwise().sum().transpose();
    xbar = r.transpose() * X;
    S.assign(static_cast<std::size_t>(k), Matrix::Zero(d, d));
    alpha = pr.alpha0 + Nk.array();
    beta = pr.beta0 + Nk.array();
    nu = nu0 + Nk.array();
    m.resize(k, d);
    Winv.assign(static_cast<std::size_t>(k), Matrix());
    WinvLlt.assign(static_cast<std::size_t>(k), Eigen::LLT<Matrix>());
    logDetW.resize(k);
    logLambda.resize(k);
    for (int j = 0; j < k; ++j) {
      if (Nk(j) > 1e-300) {
        xbar.row(j) /= Nk(j);
        const Matrix c = X.rowwise() - xbar.row(j);
        const Matrix cw = c.array().colwise() * r.col(j).array();
        S[j] = (cw.transpose() * c) / Nk(j);
      } else {
        xbar.row(j) = m0.transpose();
      }
      m.row(j) = (pr.beta0 * m0.transpose() + Nk(j) * xbar.row(j)) / beta(j);
      const Vector dx = xbar.row(j).transpose() - m0;
      Winv[j] = W0inv + Nk(j) * S[j] + (pr.beta0 * Nk(j) / (pr.beta0 + Nk(j))) * dx * dx.transpose();
      Winv[j] = 0.5 * (Winv[j] + Winv[j].transpose());
      WinvLlt[j].compute(Winv[j]);
      logDetW(j) = -2.0 * WinvLlt[j].matrixLLT().diagonal().array().log().sum();
      double ll = d * std::numbers::ln2 + logDetW(j);
      for (int i = 1; i <= d; ++i) ll += digamma(0.5 * (nu(j) + 1 - i));
      logLambda(j) = ll;
    }
    const double psiSum = digamma(alpha.sum());
    logPi.resize(k);
    for (int j = 0; j < k; ++j) logPi(j) = digamma(alpha(j)) - psiSum;
  }

  // (y)^T W_k y
  double quadW(int j, const Vector& y) const {
    return y.dot(WinvLlt[j].solve(y));
  }

  void eStep() {
    const int k = K();
    Matrix logRho(N, k);
    for (int j = 0; j < k; ++j) {
      // W_k = U^T U with U from the Cholesky factor of W_k^-1.
      const Matrix Winv_L = WinvLlt[j].matrixL();
      const Matrix c = X.rowwise() - m.row(j);  // N x d
      const Matrix y = Winv_L.triangularView<Eigen::Lower>().solve(c.transpose());
      const Vector quad = y.colwise().squaredNorm().transpose();
      logRho.col(j) = (logPi(j) + 0.5 * logLambda(j) - 0.5 * d * kLog2Pi - 0.5 * d / beta(j)) -
                      0.5 * nu(j) * quad.array();
    }
    const Vector mx = logRho.rowwise().maxCoeff();
    r = (logRho.colwise() - mx).array().exp();
    const Vector sum = r.rowwise().sum();
    r.array().colwise() /= sum.array();
  }

  double elbo() const {
    const int k = K();
    double t1 = 0, t2 = 0, t4 = 0, t6 = 0, t7 = 0;
    for (int j = 0; j < k; ++j) {
      const Vector dxm = xbar.row(j).transpose() - m.row(j).transpose();
      const double trSW = WinvLlt[j].solve(S[j]).trace();
      t1 += 0.5 * Nk(j) *
            (logLambda(j) - d / beta(j) - nu(j) * trSW - nu(j) * quadW(j, dxm) - d * kLog2Pi);
      t2 += Nk(j) * logPi(j);
      const Vector dm0 = m.row(j).transpose() - m0;
      const double trW0W = WinvLlt[j].solve(W0inv).trace();
      t4 += 0.5 * (d * std::log(pr.beta0 / (2.0 * std::numbers::pi)) + logLambda(j) -
                   d * pr.beta0 / beta(j) - pr.beta0 * nu(j) * quadW(j, dm0)) +
            logWishartB(logDetW0, nu0, d) + 0.5 * (nu0 - d - 1) * logLambda(j) - 0.5 * nu(j) * trW0W;
      t6 += (alpha(j) - 1.0) * logPi(j);
      const double H = -logWishartB(logDetW(j), nu(j), d) - 0.5 * (nu(j) - d - 1) * logLambda(j) +
                       0.5 * nu(j) * d;
      t7 += 0.5 * logLambda(j) + 0.5 * d * std::log(beta(j) / (2.0 * std::numbers::pi)) - 0.5 * d - H;
    }
    const double t3 = logDirichletC(Vector::Constant(k, pr.alpha0)) + (pr.alpha0 - 1.0) * logPi.sum();
    t6 += logDirichletC(alpha);
    const double t5 = (r.array() > 0.0).select(r.array() * r.array().max(1e-300).log(), 0.0).sum();
    return t1 + t2 + t3 + t4 - t5 - t6 - t7;
  }
};

Matrix kmeansPlusPlus(const Matrix& X, int k, Rng& rng) {
  const Eigen::Index N = X.rows();
  Matrix centers(k, X.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, N - 1);
  centers.row(0) = X.row(pick(rng));
  Vector d2 = (X.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index idx = pick(rng);
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), acc = 0.0;
      for (idx = 0; idx < N - 1; ++idx) {
        acc += d2(idx);
        if (acc >= target) break;
      }
    }
    centers.row(c) = X.row(idx);
    d2 = d2.cwiseMin((X.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  // A few Lloyd iterations.
  std::vector<int> label(static_cast<std::size_t>(N), 0);
  for (int it = 0; it < 20; ++it) {
    for (Eigen::Index n = 0; n < N; ++n) {
      Eigen::Index best;
      (centers.rowwise() - X.row(n)).rowwise().squaredNorm().minCoeff(&best);
      label[static_cast<std::size_t>(n)] = static_cast<int>(best);
    }
    Matrix sum = Matrix::Zero(k, X.cols());
    Vector cnt = Vector::Zero(k);
    for (Eigen::Index n = 0; n < N; ++n) {
      sum.row(label[static_cast<std::size_t>(n)]) += X.row(n);
      cnt(label[static_cast<std::size_t>(n)]) += 1.0;
    }
    for (int c = 0; c < k; ++c)
      if (cnt(c) > 0) centers.row(c) = sum.row(c) / cnt(c);
  }
  Matrix r = Matrix::Zero(N, k);
  for (Eigen::Index n = 0; n < N; ++n) r(n, label[static_cast<std::size_t>(n)]) = 1.0;
  return r;
}

GmmPosterior runGmm(GmmWork& w, const GmmOptions& opt, std::uint64_t seed) {
  GmmPosterior out;
  out.seed = seed;
  int totalIt = 0;
  const double pruneWeight = 1.0 / (10.0 * w.N);
  for (;;) {
    w.mStep();
    double prev = w.elbo();
    out.elboTrace.push_back(prev);
    for (int it = 0; it < opt.maxIter; ++it) {
      w.eStep();
      w.mStep();
      const double cur = w.elbo();
      recordStep(prev, cur);
      out.elboTrace.push_back(cur);
      ++totalIt;
      const bool done = std::abs(cur - prev) < opt.tol * std::abs(cur);
      prev = cur;
      if (done || (w.K() > 1 && (w.alpha / w.alpha.sum()).minCoeff() < pruneWeight)) break;
    }
    // Prune components with negligible weight and continue from the rest.
    const Vector wts = w.alpha / w.alpha.sum();
    std::vector<int> keep;
    for (int j = 0; j < w.K(); ++j)
      if (wts(j) >= pruneWeight) keep.push_back(j);
    if (static_cast<int>(keep.size()) == w.K() || keep.empty()) {
      out.elbo = prev;
      break;
    }
    Matrix r(w.N, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) r.col(static_cast<Eigen::Index>(c)) = w.r.col(keep[c]);
    const Vector rs = r.rowwise().sum();
    for (int n = 0; n < w.N; ++n) {
      if (rs(n) > 0.0) r.row(n) /= rs(n);
      else r.row(n).setConstant(1.0 / static_cast<double>(keep.size()));
    }
    w.r = r;
  }
  out.dim = w.d;
  out.iterations = totalIt;
  out.alpha = w.alpha;
  out.beta = w.beta;
  out.nu = w.nu;
  out.means = w.m;
  out.responsibilities = w.r;
  for (int j = 0; j < w.K(); ++j) out.wishartScale.push_back(w.WinvLlt[j].solve(Matrix::Identity(w.d, w.d)));
  out.copulaCorrelation = Matrix::Identity(w.d, w.d);
  return out;
}

}  // namespace

ElboStats elboStats() { return {gChecks.load(), gViolations.load()}; }
void resetElboStats() {
  gChecks = 0;
  gViolations = 0;
}

// --- mixture marginal ------------------------------------------------------

double MixtureMarginal::cdf(double x) const {
  double s = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) s += weights(k) * normalCdf((x - means(k)) / sds(k));
  return s;
}

double MixtureMarginal::pdf(double x) const {
  double s = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k)
    s += weights(k) * normalPdf((x - means(k)) / sds(k)) / sds(k);
  return s;
}

double MixtureMarginal::quantile(double p) const {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("MixtureMarginal::quantile: p outside (0,1)");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  const double zq = std::abs(normalQuantile(std::min(p, 1.0 - p))) + 1.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    lo = std::min(lo, means(k) - zq * sds(k));
    hi = std::max(hi, means(k) + zq * sds(k));
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = cdf(x) - p;
    if (std::abs(f) <= 1e-15) break;
    if (f > 0.0) hi = x;
    else lo = x;
    const double dens = pdf(x);
    double nx = dens > 0.0 ? x - f / dens : 0.5 * (lo + hi);
    if (!(nx > lo && nx < hi)) nx = 0.5 * (lo + hi);
    if (std::abs(nx - x) <= 1e-15 * (1.0 + std::abs(x))) {
      x = nx;
      break;
    }
    x = nx;
  }
  return x;
}

double MixtureMarginal::mean() const { return weights.dot(means); }

double MixtureMarginal::variance() const {
  const double mu = mean();
  double s = 0.0;
  for (Eigen::Index k = 0; k < weights.size(); ++k)
    s += weights(k) * (sds(k) * sds(k) + (means(k) - mu) * (means(k) - mu));
  return s;
}

Matrix GmmPosterior::covariance(int k) const {
  return wishartScale[static_cast<std::size_t>(k)].inverse() / nu(k);
}

MixtureMarginal GmmPosterior::marginal(int d) const {
  MixtureMarginal m;
  m.weights = weights();
  m.means = means.col(d);
  m.sds.resize(components());
  for (int k = 0; k < components(); ++k) m.sds(k) = std::sqrt(covariance(k)(d, d));
  return m;
}

std::vector<MixtureMarginal> GmmPosterior::marginals() const {
  std::vector<MixtureMarginal> out;
  for (int d = 0; d < dim; ++d) out.push_back(marginal(d));
  return out;
}

GmmPosterior fitGmmVB(const Matrix& data, int kMax, const GmmPriors& priors, const GmmOptions& options) {
  const auto N = static_cast<int>(data.rows());
  const auto d = static_cast<int>(data.cols());
  if (kMax < 1) throw DomainError("fitGmmVB: kMax must be >= 1");
  if (N <= d + 1) throw DegenerateData("fitGmmVB: need more samples than dimension + 1");
  if (!data.allFinite()) throw DegenerateData("fitGmmVB: non-finite data");
  const Matrix cov = sampleCovariance(data);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const double emax = eig.eigenvalues().maxCoeff();
  if (!(emax > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * emax)
    throw DegenerateData("fitGmmVB: data covariance is rank deficient");

  GmmPosterior best;
  double bestScore = 0.0;
  bool have = false;
  const int kTop = std::min(kMax, N);
  // Restarts from kMax components, then one start from each smaller count.
  const int runs = std::max(1, options.restarts) + kTop - 1;
  for (int rs = 0; rs < runs; ++rs) {
    const int k0 = rs < std::max(1, options.restarts) ? kTop : kTop - 1 - (rs - std::max(1, options.restarts));
    const std::uint64_t seed = options.seed + 7919ull * static_cast<std::uint64_t>(rs);
    Rng rng(seed);
    GmmWork w(data, priors);
    w.nu0 = d + priors.nu0Extra;
    if (w.nu0 <= d - 1) throw DomainError("fitGmmVB: Wishart dof must exceed dim - 1");
    // Prior expected precision nu0 W0 equals the inverse data covariance.
    w.W0inv = w.nu0 * cov;
    Eigen::LLT<Matrix> l0(w.W0inv);
    w.logDetW0 = -2.0 * l0.matrixLLT().diagonal().array().log().sum();
    w.r = kmeansPlusPlus(data, k0, rng);
    GmmPosterior post = runGmm(w, options, seed);
    // ln K! accounts for the K! equivalent labelings of one mixture.
    const double score = post.elbo + std::lgamma(post.components() + 1.0);
    if (!have || score > bestScore) {
      best = std::move(post);
      bestScore = score;
      have = true;
    }
  }
  return best;
}

// --- copula ----------------------------------------------------------------

Matrix nearestCorrelation(const Matrix& a, double eigenFloor) {
  const Eigen::Index n = a.rows();
  Matrix y = 0.5 * (a + a.transpose());
  Matrix dS = Matrix::Zero(n, n);
  auto isGood = [&](const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> e(m);
    return e.eigenvalues().minCoeff() >= eigenFloor;
  };
  if (isGood(y) && (y.diagonal().array() - 1.0).abs().maxCoeff() < 1e-14) {
    y.diagonal().setOnes();
    return y;
  }
  for (int it = 0; it < 200; ++it) {
    const Matrix r = y - dS;
    Eigen::SelfAdjointEigenSolver<Matrix> e(r);
    const Matrix x = e.eigenvectors() * e.eigenvalues().cwiseMax(eigenFloor).asDiagonal() *
                     e.eigenvectors().transpose();
    dS = x - r;
    Matrix yn = x;
    yn.diagonal().setOnes();
    const double change = (yn - y).norm();
    y = yn;
    if (change < 1e-14 * n) break;
  }
  // Final rescale keeps the unit diagonal exact.
  Eigen::SelfAdjointEigenSolver<Matrix> e(y);
  Matrix x = e.eigenvectors() * e.eigenvalues().cwiseMax(eigenFloor).asDiagonal() *
             e.eigenvectors().transpose();
  const Vector s = x.diagonal().cwiseSqrt().cwiseInverse();
  x = s.asDiagonal() * x * s.asDiagonal();
  return 0.5 * (x + x.transpose());
}

Matrix fitGaussianCopula(const Matrix& data, const std::vector<MixtureMarginal>& marginals) {
  const Eigen::Index N = data.rows(), d = data.cols();
  if (static_cast<Eigen::Index>(marginals.size()) != d)
    throw DimensionMismatch("fitGaussianCopula: one marginal per column required");
  if (N < 2) throw DegenerateData("fitGaussianCopula: need at least two samples");
  Matrix z(N, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < N; ++i) {
      const double u = marginals[static_cast<std::size_t>(j)].cdf(data(i, j));
      if (!std::isfinite(u) || u < 0.0 || u > 1.0) throw CdfOutOfRange("fitGaussianCopula: invalid marginal CDF");
      z(i, j) = normalQuantile(std::clamp(u, 1e-12, 1.0 - 1e-12));
    }
  }
  Matrix c = sampleCovariance(z);
  const Vector s = c.diagonal().cwiseSqrt();
  if ((s.array() <= 0.0).any()) throw DegenerateData("fitGaussianCopula: constant column");
  c = s.cwiseInverse().asDiagonal() * c * s.cwiseInverse().asDiagonal();
  return nearestCorrelation(c);
}

// --- variational RVM -------------------------------------------------------

Eigen::Index RvmPosterior::activeCount() const {
  return static_cast<Eigen::Index>(std::count(pruned.begin(), pruned.end(), false));
}

namespace {

struct RvmWork {
  const Matrix& Psi;
  const Vector& t;
  const Matrix& G;  // Psi^T Psi
  const Vector& h;  // Psi^T t
  double tt;
  double N;
  RvmPriors pr;
  double noiseBMin;

  std::vector<int> active;
  Vector mu;
  Matrix Sigma;
  Vector bZ;  // per active coefficient
  double aZ;
  double aS, bS;
  bool capped = false;

  Matrix sub(const std::vector<int>& idx) const {
    const auto n = static_cast<Eigen::Index>(idx.size());
    Matrix out(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) out(i, j) = G(idx[i], idx[j]);
    return out;
  }
  Vector subh(const std::vector<int>& idx) const {
    Vector out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = h(idx[i]);
    return out;
  }

  // Optimal q(v) on `idx` given precisions.
  void solveV(const std::vector<int>& idx, const Vector& bz, Vector& m, Matrix& S) const {
    const auto n = static_cast<Eigen::Index>(idx.size());
    if (n == 0) {
      m.resize(0);
      S.resize(0, 0);
      return;
    }
    const double es = aS / bS;
    Matrix prec = es * sub(idx);
    for (Eigen::Index i = 0; i < n; ++i) prec(i, i) += aZ / bz(i);
    Eigen::LLT<Matrix> llt(prec);
    if (llt.info() != Eigen::Success) throw IllConditioned("fitRvm: posterior precision not positive definite");
    S = llt.solve(Matrix::Identity(n, n));
    m = es * S * subh(idx);
  }

  // E||t - Psi v||^2, with the data misfit formed explicitly to avoid
  // cancellation when the fit is nearly exact.
  double residual(const std::vector<int>& idx, const Vector& m, const Matrix& S) const {
    if (idx.empty()) return tt;
    Vector fit = Vector::Zero(t.size());
    for (std::size_t i = 0; i < idx.size(); ++i) fit += m(static_cast<Eigen::Index>(i)) * Psi.col(idx[i]);
    return (t - fit).squaredNorm() + (sub(idx) * S).trace();
  }

  double elbo(const std::vector<int>& idx, const Vector& m, const Matrix& S, const Vector& bz) const {
    const double es = aS / bS, lns = digamma(aS) - std::log(bS);
    double L = 0.5 * N * lns - 0.5 * N * kLog2Pi - 0.5 * es * residual(idx, m, S);
    L += pr.aNoise * std::log(pr.bNoise) - std::lgamma(pr.aNoise) + (pr.aNoise - 1.0) * lns - pr.bNoise * es;
    L += gammaEntropy(aS, bS);
    const auto n = static_cast<Eigen::Index>(idx.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      const double ez = aZ / bz(i), lnz = digamma(aZ) - std::log(bz(i));
      const double ev2 = m(i) * m(i) + S(i, i);
      L += 0.5 * lnz - 0.5 * kLog2Pi - 0.5 * ez * ev2;
      L += pr.a * std::log(pr.b) - std::lgamma(pr.a) + (pr.a - 1.0) * lnz - pr.b * ez;
      L += gammaEntropy(aZ, bz(i));
    }
    if (n > 0) {
      Eigen::LLT<Matrix> llt(S);
      L += llt.matrixLLT().diagonal().array().log().sum() + 0.5 * n * (1.0 + kLog2Pi);
    }
    return L;
  }

  void updateNoise() {
    const double half = 0.5 * residual(active, mu, Sigma);
    // Flag fits where the residual no longer controls the noise precision.
    capped = half < std::max(pr.bNoise, noiseBMin);
    bS = std::max(pr.bNoise + half, noiseBMin);
  }
};

}  // namespace

RvmPosterior fitRvm(const Matrix& design, const Vector& targets, const RvmPriors& priors,
                    const RvmOptions& options) {
  const Eigen::Index N = design.rows(), Z = design.cols();
  if (N < 1 || Z < 1) throw DimensionMismatch("fitRvm: empty design");
  if (targets.size() != N) throw DimensionMismatch("fitRvm: target length differs from design rows");
  if (!design.allFinite() || !targets.allFinite()) throw IllConditioned("fitRvm: non-finite input");

  const Matrix G = design.transpose() * design;
  const Vector h = design.transpose() * targets;
  {
    Eigen::SelfAdjointEigenSolver<Matrix> e(G, Eigen::EigenvaluesOnly);
    const double lmax = e.eigenvalues().maxCoeff(), lmin = e.eigenvalues().minCoeff();
    if (!(lmax > 0.0) || lmin <= lmax * 1e-14)
      throw IllConditioned("fitRvm: design Gram condition number exceeds 1e14");
  }
  const double meanSq = targets.squaredNorm() / static_cast<double>(N);

  RvmWork w{design, targets, G, h, targets.squaredNorm(), static_cast<double>(N), priors, 0.0, {}, {}, {}, {},
            priors.a + 0.5, priors.aNoise + 0.5 * static_cast<double>(N), 0.0};
  w.noiseBMin = meanSq > 0.0 ? w.aS * meanSq / options.noiseCapRelative : 0.0;

  // Ridge initialization.
  w.active.resize(static_cast<std::size_t>(Z));
  std::iota(w.active.begin(), w.active.end(), 0);
  Matrix ridge = G;
  ridge.diagonal().array() += 1e-8 * G.trace() / static_cast<double>(Z);
  const Vector mu0 = ridge.ldlt().solve(h);
  w.bZ = priors.b + 0.5 * mu0.array().square();
  w.mu = mu0;
  w.Sigma = Matrix::Zero(Z, Z);
  w.bS = 1.0;
  w.updateNoise();

  RvmPosterior out;
  double prev = -std::numeric_limits<double>::infinity();
  bool havePrev = false;
  int it = 0;
  for (; it < options.maxIter; ++it) {
    w.solveV(w.active, w.bZ, w.mu, w.Sigma);
    for (Eigen::Index i = 0; i < w.mu.size(); ++i)
      w.bZ(i) = priors.b + 0.5 * (w.mu(i) * w.mu(i) + w.Sigma(i, i));
    w.updateNoise();
    const double cur = w.elbo(w.active, w.mu, w.Sigma, w.bZ);
    if (havePrev) recordStep(prev, cur);
    out.elboTrace.push_back(cur);
    const bool converged = havePrev && std::abs(cur - prev) <= options.tol * std::abs(cur);
    prev = cur;
    havePrev = true;

    // Hard cap on the coefficient precision; the model changes, so the
    // monotonicity reference restarts.
    bool capPruned = false;
    for (Eigen::Index i = static_cast<Eigen::Index>(w.active.size()) - 1; i >= 0; --i) {
      if (w.aZ / w.bZ(i) > options.pruneThreshold) {
        w.active.erase(w.active.begin() + i);
        Vector bz(w.bZ.size() - 1);
        bz << w.bZ.head(i), w.bZ.tail(w.bZ.size() - i - 1);
        w.bZ = bz;
        capPruned = true;
      }
    }
    if (capPruned) {
      havePrev = false;
      continue;
    }
    if (!converged) continue;

    // At a fixed point, drop the coefficient whose removal raises the bound
    // the most; stop when no removal helps.
    double bestAlt = cur;
    std::size_t bestPos = w.active.size();
    Vector bestM, bestBz;
    Matrix bestS;
    for (std::size_t pos = 0; pos < w.active.size(); ++pos) {
      std::vector<int> cand = w.active;
      cand.erase(cand.begin() + static_cast<std::ptrdiff_t>(pos));
      Vector bz(w.bZ.size() - 1);
      const auto ip = static_cast<Eigen::Index>(pos);
      bz << w.bZ.head(ip), w.bZ.tail(w.bZ.size() - ip - 1);
      Vector m;
      Matrix S;
      w.solveV(cand, bz, m, S);
      const double alt = w.elbo(cand, m, S, bz);
      if (alt >= bestAlt) {
        bestAlt = alt;
        bestPos = pos;
        bestM = m;
        bestS = S;
        bestBz = bz;
      }
    }
    if (bestPos == w.active.size()) break;
    w.active.erase(w.active.begin() + static_cast<std::ptrdiff_t>(bestPos));
    w.bZ = bestBz;
    w.mu = bestM;
    w.Sigma = bestS;
    prev = bestAlt;
    out.elboTrace.push_back(bestAlt);
  }

  out.iterations = it;
  out.elbo = prev;
  out.coefficientMean = Vector::Zero(Z);
  out.coefficientCovariance = Matrix::Zero(Z, Z);
  out.zetaA = Vector::Constant(Z, w.aZ);
  out.zetaB = Vector::Constant(Z, std::numeric_limits<double>::infinity());
  out.pruned.assign(static_cast<std::size_t>(Z), true);
  for (std::size_t i = 0; i < w.active.size(); ++i) {
    const int gi = w.active[i];
    out.pruned[static_cast<std::size_t>(gi)] = false;
    out.coefficientMean(gi) = w.mu(static_cast<Eigen::Index>(i));
    out.zetaB(gi) = w.bZ(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < w.active.size(); ++j)
      out.coefficientCovariance(gi, w.active[j]) =
          w.Sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  out.noiseA = w.aS;
  out.noiseB = w.bS;
  out.noiseCapped = w.capped;
  return out;
}

}  // namespace upscale::vbayes
