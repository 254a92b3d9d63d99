#include "upscale/pipeline.hpp"

#include <iostream>
#include <mutex>

namespace upscale::pipeline {

namespace {

constexpr Eigen::Index kPosteriorSamples = 20000;

Json matrixJson(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) r.push_back(m(i, k));
    rows.push_back(r);
  }
  return rows;
}

Json vectorJson(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Json pceJson(const pce::PceVariable& v) {
  Json idx = Json::array();
  for (const auto& a : v.basis().indices()) idx.push_back(a);
  return {{"germDim", v.germDim()},
          {"degree", v.basis().degree()},
          {"split", v.split()},
          {"indices", idx},
          {"coefficients", matrixJson(v.coefficients())}};
}

Json momentsJson(const MomentSummary& m, const std::vector<std::string>& names) {
  Json j = Json::object();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    j[names[k]] = {{"mean", m.mean(i)}, {"sd", m.sd(i)}, {"logMean", m.logMean(i)}, {"logSd", m.logSd(i)}};
  }
  return j;
}

// Linear Gaussian PCE with the sample mean and covariance of the rows.
pce::PceVariable gaussianPce(const Matrix& rows) {
  const Eigen::Index d = rows.cols();
  const Vector mean = rows.colwise().mean().transpose();
  if (rows.rows() < 2) {
    Matrix c = Matrix::Zero(d, 1);
    c.col(0) = mean;
    return pce::PceVariable(pce::makeSet(1, 0), c);
  }
  Matrix cov = sampleCovariance(rows);
  cov.diagonal().array() += 1e-14 * (1.0 + cov.diagonal().maxCoeff());
  const Matrix l = cov.llt().matrixL();
  auto set = pce::makeSet(static_cast<int>(d), 1);
  Matrix c = Matrix::Zero(d, set->size());
  c.col(0) = mean;
  c.block(0, 1, d, d) = l;
  return pce::PceVariable(set, c);
}

std::vector<int> varyingColumns(const Matrix& rows) {
  std::vector<int> out;
  for (Eigen::Index k = 0; k < rows.cols(); ++k) {
    const auto c = rows.col(k);
    const double spread = c.maxCoeff() - c.minCoeff();
    if (spread > 1e-10 * (1.0 + c.cwiseAbs().maxCoeff())) out.push_back(static_cast<int>(k));
  }
  return out;
}

Matrix pickColumns(const Matrix& m, const std::vector<int>& cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
  return out;
}

// PCE of the per-sample parameter cloud; constant columns stay constant.
pce::PceVariable cloudPce(const Matrix& q, const ExperimentConfig& c, std::string& model) {
  const auto vary = varyingColumns(q);
  const Vector mean = q.colwise().mean().transpose();
  if (vary.empty() || q.rows() < 20) {
    model = vary.empty() ? "constant" : "gaussian";
    if (vary.empty()) {
      Matrix coef = Matrix::Zero(q.cols(), 1);
      coef.col(0) = mean;
      return pce::PceVariable(pce::makeSet(1, 0), coef);
    }
  }
  const Matrix sub = pickColumns(q, vary);
  pce::PceVariable part = gaussianPce(sub);
  if (q.rows() >= 20) {
    try {
      transform::GermMapOptions opts;
      opts.kMax = c.kMax;
      opts.logSpace = false;
      opts.gmm.seed = c.seed;
      const auto map = transform::fitGermMap(sub, opts);
      part = transform::synthesizePce(sub, map, c.pceDegree);
      model = "mixture";
    } catch (const QualityFailure& e) {
      std::clog << "warning: posterior synthesis falls back to a Gaussian model: " << e.what() << "\n";
      model = "gaussian";
    }
  }
  Matrix coef = Matrix::Zero(q.cols(), part.basis().size());
  for (std::size_t k = 0; k < vary.size(); ++k) coef.row(vary[k]) = part.coefficients().row(static_cast<Eigen::Index>(k));
  for (Eigen::Index k = 0; k < q.cols(); ++k)
    if (std::find(vary.begin(), vary.end(), static_cast<int>(k)) == vary.end()) coef(k, 0) = mean(k);
  return pce::PceVariable(part.basisPtr(), coef);
}

std::vector<LognormalSpec> resolvePrior(const ExperimentConfig& c) {
  const int p = c.paramCount();
  std::string kind = c.prior.kind;
  const bool inclusions = c.isElastic() && c.inclusions.count > 0;
  if (kind == "default") kind = inclusions ? "HS" : "scaled";
  std::vector<LognormalSpec> out;
  if (kind == "lognormal") return c.prior.params;
  if (kind == "scaled") {
    std::vector<double> ref;
    if (c.isElastic()) ref = {c.inclusions.matrix.K, c.inclusions.matrix.G};
    else ref.assign(c.field.mean.begin(), c.field.mean.end());
    for (int k = 0; k < p; ++k) out.push_back({c.prior.meanFactor * ref[static_cast<std::size_t>(k)], c.prior.cov});
    return out;
  }
  if (kind == "HS" || kind == "RV" || kind == "MAT") {
    if (!inclusions) throw DomainError("prior '" + kind + "' needs an elastic inclusion experiment");
    const auto& in = c.inclusions;
    const auto b = homog::bounds({in.matrix, in.inclusion}, {1.0 - in.fraction, in.fraction});
    double lo[2], hi[2];
    if (kind == "HS") {
      lo[0] = b.hsLowerK, hi[0] = b.hsUpperK, lo[1] = b.hsLowerG, hi[1] = b.hsUpperG;
    } else if (kind == "RV") {
      lo[0] = b.reussK, hi[0] = b.voigtK, lo[1] = b.reussG, hi[1] = b.voigtG;
    } else {
      lo[0] = std::min(in.matrix.K, in.inclusion.K), hi[0] = std::max(in.matrix.K, in.inclusion.K);
      lo[1] = std::min(in.matrix.G, in.inclusion.G), hi[1] = std::max(in.matrix.G, in.inclusion.G);
    }
    for (int k = 0; k < 2; ++k) {
      if (!(hi[k] > lo[k])) throw DomainError("prior '" + kind + "': empty bracket");
      const double mu = 0.5 * (std::log(lo[k]) + std::log(hi[k]));
      const double sd = (std::log(hi[k]) - std::log(lo[k])) / (2.0 * 1.959963984540054);
      // Stored as (mean, cov) of the lognormal.
      out.push_back({std::exp(mu + 0.5 * sd * sd), std::sqrt(std::exp(sd * sd) - 1.0)});
    }
    return out;
  }
  throw DomainError("unknown prior kind '" + kind + "'");
}

}  // namespace

Matrix Observable::apply(const Matrix& values) const {
  Matrix y(values.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t k = 0; k < columns.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    if (columns[k] >= values.cols()) throw DimensionMismatch("Observable: column beyond archive width");
    const auto shifted = (values.col(columns[k]).array() + offsets(i)).eval();
    if ((shifted <= 0.0).any()) throw SupportViolation("Observable: non-positive energy in " + names[k]);
    y.col(i) = shifted.log().matrix();
  }
  return y;
}

Json Observable::toJson() const {
  Json cols = Json::array();
  for (std::size_t k = 0; k < columns.size(); ++k)
    cols.push_back({{"column", columns[k]}, {"name", names[k]}, {"offset", offsets(static_cast<Eigen::Index>(k))}});
  return cols;
}

Observable Observable::fromJson(const Json& j) {
  Observable o;
  o.offsets.resize(static_cast<Eigen::Index>(j.size()));
  Eigen::Index k = 0;
  for (const auto& e : j) {
    o.columns.push_back(e.at("column").get<int>());
    o.names.push_back(e.at("name").get<std::string>());
    o.offsets(k++) = e.at("offset").get<double>();
  }
  return o;
}

Observable selectObservable(const ExperimentConfig& c, const EnergyArchive& archive) {
  if (archive.values.rows() == 0) throw DegenerateData("observable: empty archive");
  std::vector<int> steps = c.observedSteps;
  if (steps.empty())
    for (int s = 1; s <= archive.steps; ++s) steps.push_back(s);
  Observable o;
  std::vector<double> offsets;
  for (int lc = 0; lc < archive.cases; ++lc)
    for (int s : steps) {
      if (s > archive.steps) throw DomainError("observable: step beyond archive");
      for (const auto& e : c.energies) {
        const int f = EnergyArchive::fieldIndex(e);
        const int col = archive.column(lc, s - 1, f);
        const auto v = archive.values.col(col);
        if ((v.array() <= 0.0).all()) {
          std::clog << "notice: dropping " << archive.columnName(col) << " (zero in every member)\n";
          continue;
        }
        o.columns.push_back(col);
        o.names.push_back(archive.columnName(col));
        offsets.push_back(e == "Ee" ? 0.0 : c.observableOffset * v.mean());
      }
    }
  if (o.columns.empty()) throw DegenerateData("observable: every energy column is zero");
  o.offsets = Eigen::Map<const Vector>(offsets.data(), static_cast<Eigen::Index>(offsets.size()));
  return o;
}

Json Identified::toJson() const {
  Json j{{"observable", observable.toJson()},
         {"germColumns", germColumns},
         {"deterministic", deterministic},
         {"components", components},
         {"meanRelError", meanRelError},
         {"covRelError", covRelError}};
  if (deterministic) j["value"] = vectorJson(deterministicValue);
  else j["measurement"] = pceJson(measurement);
  return j;
}

Identified identifyEnergies(const ExperimentConfig& c, const EnergyArchive& archive) {
  Identified id;
  id.observable = selectObservable(c, archive);
  const Matrix y = id.observable.apply(archive.values);
  const int step = c.identifyStep > 0 ? c.identifyStep : archive.steps;
  std::vector<int> candidates;
  for (std::size_t k = 0; k < id.observable.columns.size(); ++k)
    if ((id.observable.columns[k] / EnergyArchive::kFields) % archive.steps == step - 1)
      candidates.push_back(static_cast<int>(k));
  if (candidates.empty()) throw DomainError("identify: no observed column at the identification step");
  const Matrix yc = pickColumns(y, candidates);
  for (int k : varyingColumns(yc)) id.germColumns.push_back(candidates[static_cast<std::size_t>(k)]);

  if (y.rows() < 2 || id.germColumns.empty()) {
    id.deterministic = true;
    id.deterministicValue = y.colwise().mean().transpose();
    return id;
  }
  transform::GermMapOptions opts;
  opts.kMax = c.kMax;
  opts.logSpace = false;
  opts.gmm.seed = c.seed;
  const Matrix yg = pickColumns(y, id.germColumns);
  id.map = transform::fitGermMap(yg, opts);
  id.components = id.map.model.components();

  transform::SynthesisReport rep;
  const auto germPart = transform::synthesizePce(yg, id.map, c.pceDegree, &rep);
  const Matrix germs = id.map.toGermRows(yg);
  const auto all = transform::regressOnGerm(germs, y, c.pceDegree);
  Matrix coef = all.coefficients();
  for (std::size_t k = 0; k < id.germColumns.size(); ++k)
    coef.row(id.germColumns[k]) = germPart.coefficients().row(static_cast<Eigen::Index>(k));
  id.measurement = pce::PceVariable(all.basisPtr(), coef);
  std::tie(id.meanRelError, id.covRelError) = transform::momentMismatch(id.measurement, y);
  return id;
}

MomentSummary summarize(const Matrix& logSamples) {
  MomentSummary m;
  const Matrix nat = logSamples.array().exp().matrix();
  m.logMean = logSamples.colwise().mean().transpose();
  m.mean = nat.colwise().mean().transpose();
  const double n = static_cast<double>(logSamples.rows());
  const double dof = n > 1 ? n - 1.0 : 1.0;
  m.logSd = ((logSamples.rowwise() - m.logMean.transpose()).colwise().squaredNorm() / dof).cwiseSqrt().transpose();
  m.sd = ((nat.rowwise() - m.mean.transpose()).colwise().squaredNorm() / dof).cwiseSqrt().transpose();
  return m;
}

PriorModel buildPrior(const ExperimentConfig& c, int degree) {
  const auto specs = resolvePrior(c);
  const int p = c.paramCount();
  if (static_cast<int>(specs.size()) != p) throw DimensionMismatch("prior: one entry per parameter");
  PriorModel m;
  m.logMean.resize(p);
  m.logSd.resize(p);
  for (int k = 0; k < p; ++k) {
    const auto lp = randfield::lognormalFromMeanCov(specs[static_cast<std::size_t>(k)].mean,
                                                    specs[static_cast<std::size_t>(k)].cov);
    m.logMean(k) = lp.meanLog;
    m.logSd(k) = lp.sdLog;
  }
  auto set = pce::makeSet(p, std::max(1, degree));
  Matrix coef = Matrix::Zero(p, set->size());
  coef.col(0) = m.logMean;
  for (int k = 0; k < p; ++k) coef(k, 1 + k) = m.logSd(k);
  m.pce = pce::PceVariable(set, coef);
  m.moments.logMean = m.logMean;
  m.moments.logSd = m.logSd;
  m.moments.mean = (m.logMean.array() + 0.5 * m.logSd.array().square()).exp().matrix();
  m.moments.sd = (m.moments.mean.array() * (m.logSd.array().square().exp() - 1.0).sqrt()).matrix();
  return m;
}

Forecast buildForecast(const ExperimentConfig& c, const PriorModel& prior, const Observable& obs, int jobs) {
  const int p = c.paramCount();
  auto set = pce::makeSet(p, c.forecastDegree);
  const Eigen::Index n = std::max<Eigen::Index>(c.forecastSamples, 3 * set->size());
  const Matrix theta = pce::haltonNormal(n, p);
  const Eigen::Index m = static_cast<Eigen::Index>(obs.columns.size());
  Matrix y(n, m);
  std::vector<char> ok(static_cast<std::size_t>(n), 0);
  parallelFor(static_cast<std::size_t>(n), jobs, [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Vector params = (prior.logMean.array() + prior.logSd.array() * theta.row(r).transpose().array()).exp();
    try {
      y.row(r) = obs.apply(macroEnergies(c, params).transpose());
      ok[i] = 1;
    } catch (const DomainError&) {
    } catch (const SupportViolation&) {
    } catch (const NonConvergence&) {
    }
  });
  Forecast f;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; ++i)
    if (ok[static_cast<std::size_t>(i)]) keep.push_back(i);
  f.used = static_cast<int>(keep.size());
  f.dropped = static_cast<int>(n) - f.used;
  if (f.used < set->size()) throw DegenerateData("forecast: too few admissible prior points");
  if (f.dropped > 0) std::clog << "notice: forecast dropped " << f.dropped << " inadmissible prior points\n";
  Matrix th(f.used, p), yy(f.used, m);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    th.row(static_cast<Eigen::Index>(k)) = theta.row(keep[k]);
    yy.row(static_cast<Eigen::Index>(k)) = y.row(keep[k]);
  }
  const Matrix coef = pce::regress(*set, th, yy, 1e-12);
  f.y = pce::PceVariable(set, coef);
  const Matrix res = f.y.evaluateRows(th) - yy;
  const Matrix centered = yy.rowwise() - yy.colwise().mean();
  f.fitError = centered.norm() > 0.0 ? res.norm() / centered.norm() : res.norm();
  return f;
}

Json UpscaleResult::toJson() const {
  return {{"strategy", toString(strategy)},
          {"parameters", names},
          {"prior", momentsJson(prior, names)},
          {"total", momentsJson(total, names)},
          {"aleatory", momentsJson(aleatory, names)},
          {"posteriorLog", pceJson(posterior)},
          {"gain", matrixJson(gain)},
          {"observable", observable.toJson()},
          {"forecastFitError", forecastFitError}};
}

UpscaleResult upscale(const ExperimentConfig& c, const EnergyArchive& archive, Strategy strategy,
                      const Identified* identified, int jobs) {
  c.validate();
  Identified local;
  if (strategy == Strategy::EnergyPceThenUpdate && !identified) {
    local = identifyEnergies(c, archive);
    identified = &local;
  }
  UpscaleResult r;
  r.strategy = strategy;
  r.names = c.paramNames();
  r.observable = identified ? identified->observable : selectObservable(c, archive);

  const PriorModel prior = buildPrior(c, 1);
  const Forecast fc = buildForecast(c, prior, r.observable, jobs);
  r.forecastFitError = fc.fitError;
  if (fc.fitError > 0.05) std::clog << "warning: forecast surrogate relative error " << fc.fitError << "\n";

  gmkf::UpdateProblem problem{prior.pce, fc.y, Matrix()};
  const auto m = static_cast<Eigen::Index>(r.observable.columns.size());
  problem.noiseCovariance = Matrix::Identity(m, m) * (c.noiseLevel * c.noiseLevel);
  problem.mapOrder = c.mapOrder;
  problem.seed = c.seed;
  r.prior = prior.moments;

  if (strategy == Strategy::PerSampleThenIdentify) {
    const Matrix ym = r.observable.apply(archive.values);
    const Matrix qbar = gmkf::updatePerSample(problem, ym, jobs);
    const auto post = gmkf::update(problem, Vector(ym.row(0).transpose()));
    r.gain = post.gain;
    pce::PceVariable centered = post.assimilatedQ;
    centered.coefficients().col(0).setZero();
    const Matrix resid = pce::samplePce(centered, kPosteriorSamples, c.seed + 1);
    r.totalSamples.resize(kPosteriorSamples, qbar.cols());
    for (Eigen::Index k = 0; k < kPosteriorSamples; ++k) r.totalSamples.row(k) = qbar.row(k % qbar.rows()) + resid.row(k);
    r.aleatorySamples = qbar;
    std::string model;
    r.posterior = cloudPce(qbar, c, model);
  } else {
    const auto post = identified->deterministic ? gmkf::update(problem, identified->deterministicValue)
                                                : gmkf::update(problem, identified->measurement);
    r.gain = post.gain;
    r.posterior = post.assimilatedQ;
    r.totalSamples = pce::samplePce(post.assimilatedQ, kPosteriorSamples, c.seed + 1);
    r.aleatorySamples = pce::samplePce(post.aleatoryQ, kPosteriorSamples, c.seed + 2);
  }
  r.total = summarize(r.totalSamples);
  r.aleatory = summarize(r.aleatorySamples);
  return r;
}

Json BoundsResult::toJson() const {
  return {{"voigt", {{"K", bounds.voigtK}, {"G", bounds.voigtG}}},
          {"reuss", {{"K", bounds.reussK}, {"G", bounds.reussG}}},
          {"hsLower", {{"K", bounds.hsLowerK}, {"G", bounds.hsLowerG}}},
          {"hsUpper", {{"K", bounds.hsUpperK}, {"G", bounds.hsUpperG}}},
          {"apparentMean", {{"K", meanK}, {"G", meanG}}},
          {"members", apparent.rows()},
          {"violations", violations}};
}

BoundsResult computeBounds(const ExperimentConfig& c, int jobs) {
  c.validate();
  if (!c.isElastic() || c.inclusions.count == 0)
    throw DomainError("bounds: needs an elastic inclusion experiment");
  const auto& in = c.inclusions;
  BoundsResult r;
  r.bounds = homog::bounds({in.matrix, in.inclusion}, {1.0 - in.fraction, in.fraction});
  r.apparent.resize(c.ensembleSize, 2);
  parallelFor(static_cast<std::size_t>(c.ensembleSize), jobs, [&](std::size_t i) {
    const auto s = buildSpecimen(c, static_cast<int>(i), c.loadCases.front());
    const auto a = homog::deterministicHomogenize(s, c.strainMagnitude);
    r.apparent(static_cast<Eigen::Index>(i), 0) = a.K;
    r.apparent(static_cast<Eigen::Index>(i), 1) = a.G;
  });
  r.meanK = r.apparent.col(0).mean();
  r.meanG = r.apparent.col(1).mean();
  r.bounds.apparentK = r.meanK;
  r.bounds.apparentG = r.meanG;
  const auto& b = r.bounds;
  for (Eigen::Index i = 0; i < r.apparent.rows(); ++i) {
    const double k = r.apparent(i, 0), g = r.apparent(i, 1);
    if (k < b.hsLowerK || k > b.hsUpperK || g < b.hsLowerG || g > b.hsUpperG) ++r.violations;
  }
  if (r.violations > 0)
    std::clog << "notice: " << r.violations << " members have apparent moduli outside the bounds\n";
  return r;
}

}  // namespace upscale::pipeline
