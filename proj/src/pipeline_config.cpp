#include "upscale/pipeline.hpp"

#include "upscale/randfield.hpp"

#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>

namespace upscale::pipeline {

namespace {

template <typename E, std::size_t N>
E fromName(const std::string& s, const std::array<std::pair<const char*, E>, N>& table, const char* what) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  throw DomainError(std::string("unknown ") + what + " '" + s + "'");
}

constexpr std::array<std::pair<const char*, ExperimentKind>, 4> kKinds{{
    {"ElasticValidation", ExperimentKind::ElasticValidation},
    {"ElasticRandom", ExperimentKind::ElasticRandom},
    {"DamageValidation", ExperimentKind::DamageValidation},
    {"DamageHeterogeneous", ExperimentKind::DamageHeterogeneous},
}};

constexpr std::array<std::pair<const char*, LoadCase>, 4> kCases{{
    {"Shear", LoadCase::Shear},
    {"Compression", LoadCase::Compression},
    {"Mixed1", LoadCase::Mixed1},
    {"Mixed2", LoadCase::Mixed2},
}};

Json phaseJson(const homog::Phase& p) { return {{"K", p.K}, {"G", p.G}}; }

homog::Phase phaseFrom(const Json& j, homog::Phase p) {
  if (j.contains("K")) p.K = j.at("K").get<double>();
  if (j.contains("G")) p.G = j.at("G").get<double>();
  return p;
}

void rejectUnknown(const Json& j, std::initializer_list<const char*> keys, const char* where) {
  std::set<std::string> known(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw DomainError(std::string(where) + ": unknown key '" + it.key() + "'");
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Standardized KL field of one mesh, shared between members.
std::shared_ptr<const randfield::LognormalField> standardField(const fem::Mesh& mesh, double lc,
                                                               double energyFraction) {
  static std::mutex mu;
  static std::map<std::tuple<int, double, double>, std::shared_ptr<const randfield::LognormalField>> cache;
  const auto key = std::make_tuple(mesh.nElemX(), lc, energyFraction);
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto f = std::make_shared<const randfield::LognormalField>(mesh.midpoints(), 0.0, 1.0, lc, energyFraction);
  cache.emplace(key, f);
  return f;
}

}  // namespace

const char* toString(ExperimentKind k) {
  for (const auto& [name, value] : kKinds)
    if (value == k) return name;
  return "?";
}

const char* toString(LoadCase c) {
  for (const auto& [name, value] : kCases)
    if (value == c) return name;
  return "?";
}

const char* toString(Strategy s) {
  return s == Strategy::EnergyPceThenUpdate ? "EnergyPceThenUpdate" : "PerSampleThenIdentify";
}

ExperimentKind experimentKindFromString(const std::string& s) { return fromName(s, kKinds, "experiment kind"); }
LoadCase loadCaseFromString(const std::string& s) { return fromName(s, kCases, "load case"); }

Strategy strategyFromString(const std::string& s) {
  if (s == "energy-pce" || s == "EnergyPceThenUpdate") return Strategy::EnergyPceThenUpdate;
  if (s == "per-sample" || s == "PerSampleThenIdentify") return Strategy::PerSampleThenIdentify;
  throw DomainError("unknown strategy '" + s + "'");
}

Matrix2 loadTensor(LoadCase c) {
  Matrix2 t = Matrix2::Zero();
  switch (c) {
    case LoadCase::Shear: t(0, 1) = t(1, 0) = 0.5; break;
    case LoadCase::Compression: t = -Matrix2::Identity(); break;
    case LoadCase::Mixed1: t(0, 0) = -1.0; break;
    case LoadCase::Mixed2: t(1, 1) = -1.0; break;
  }
  return t;
}

std::array<double, 4> referenceDamageMeans() { return {2.0444e11, 0.92e11, 0.0031e11, 0.0047e11}; }

std::vector<std::string> ExperimentConfig::paramNames() const {
  if (isElastic()) return {"K", "G"};
  return {"K", "G", "sigmaF", "Kd"};
}

ExperimentConfig ExperimentConfig::defaults(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  switch (kind) {
    case ExperimentKind::ElasticValidation:
      c.ensembleSize = 1;
      c.bc = fem::BcKind::Periodic;
      c.mesh = 96;
      c.energies = {"Ee"};
      break;
    case ExperimentKind::ElasticRandom:
      c.ensembleSize = 100;
      c.bc = fem::BcKind::LinearDisplacement;
      c.mesh = 96;
      c.energies = {"Ee"};
      break;
    case ExperimentKind::DamageValidation:
      c.ensembleSize = 100;
      c.mesh = 20;
      break;
    case ExperimentKind::DamageHeterogeneous:
      c.ensembleSize = 100;
      c.mesh = 50;
      c.prior.meanFactor = 1.0;
      break;
  }
  return c;
}

void ExperimentConfig::validate() const {
  if (ensembleSize < 1) throw DomainError("config: ensembleSize must be >= 1");
  if (mesh < 1) throw DomainError("config: mesh must be >= 1");
  if (loadCases.empty()) throw DomainError("config: at least one load case");
  if (steps < 2) throw DomainError("config: steps must be >= 2");
  if (pceDegree < 0 || forecastDegree < 1) throw DomainError("config: invalid PCE degree");
  if (forecastSamples < 10) throw DomainError("config: forecastSamples must be >= 10");
  if (mapOrder < 1) throw DomainError("config: mapOrder must be >= 1");
  if (kMax < 1) throw DomainError("config: kMax must be >= 1");
  if (!(noiseLevel >= 0.0)) throw DomainError("config: noiseLevel must be >= 0");
  if (!(observableOffset >= 0.0)) throw DomainError("config: observableOffset must be >= 0");
  if (!(strainMagnitude > 0.0)) throw DomainError("config: strainMagnitude must be positive");
  if (inclusions.count < 0) throw DomainError("config: inclusion count must be >= 0");
  if (!(inclusions.fraction > 0.0 && inclusions.fraction < 1.0))
    throw DomainError("config: inclusion fraction must lie in (0,1)");
  for (const auto& p : {inclusions.matrix, inclusions.inclusion})
    if (!(p.K > 0.0 && p.G > 0.0)) throw DomainError("config: phase moduli must be positive");
  for (double m : field.mean)
    if (!(m > 0.0)) throw DomainError("config: field means must be positive");
  if (!(field.cov >= 0.0) || !(field.correlationLength > 0.0)) throw DomainError("config: invalid field spec");
  if (!(prior.meanFactor > 0.0 && prior.cov > 0.0)) throw DomainError("config: prior must be positive");
  for (const auto& p : prior.params)
    if (!(p.mean > 0.0 && p.cov > 0.0)) throw DomainError("config: prior must be positive");
  if (prior.kind == "lognormal" && static_cast<int>(prior.params.size()) != paramCount())
    throw DimensionMismatch("config: prior needs one entry per parameter");
  for (const auto& e : energies) EnergyArchive::fieldIndex(e);
  for (int s : observedSteps)
    if (s < 1 || s > stepCount()) throw DomainError("config: observed step out of range");
  if (identifyStep < 0 || identifyStep > stepCount()) throw DomainError("config: identifyStep out of range");
}

Json ExperimentConfig::toJson() const {
  Json cases = Json::array();
  for (auto lc : loadCases) cases.push_back(toString(lc));
  Json priorParams = Json::array();
  for (const auto& p : prior.params) priorParams.push_back({{"mean", p.mean}, {"cov", p.cov}});
  return {
      {"experiment", toString(kind)},
      {"ensembleSize", ensembleSize},
      {"bc", fem::toString(bc)},
      {"loadCases", cases},
      {"mesh", mesh},
      {"inclusions",
       {{"count", inclusions.count},
        {"fraction", inclusions.fraction},
        {"matrix", phaseJson(inclusions.matrix)},
        {"inclusion", phaseJson(inclusions.inclusion)}}},
      {"field",
       {{"mean", field.mean},
        {"cov", field.cov},
        {"correlationLength", field.correlationLength},
        {"energyFraction", field.energyFraction}}},
      {"prior", {{"kind", prior.kind}, {"params", priorParams}, {"meanFactor", prior.meanFactor}, {"cov", prior.cov}}},
      {"pceDegree", pceDegree},
      {"forecastDegree", forecastDegree},
      {"forecastSamples", forecastSamples},
      {"mapOrder", mapOrder},
      {"kMax", kMax},
      {"noiseLevel", noiseLevel},
      {"observableOffset", observableOffset},
      {"steps", steps},
      {"observedSteps", observedSteps},
      {"energies", energies},
      {"identifyStep", identifyStep},
      {"strainMagnitude", strainMagnitude},
      {"interiorMargin", interiorMargin},
      {"seed", seed},
      {"outputDir", outputDir},
  };
}

ExperimentConfig ExperimentConfig::fromJson(const Json& j) {
  rejectUnknown(j,
                {"experiment", "ensembleSize", "bc", "loadCase", "loadCases", "mesh", "inclusions", "field",
                 "prior", "pceDegree", "forecastDegree", "forecastSamples", "mapOrder", "kMax", "noiseLevel",
                 "observableOffset", "steps", "observedSteps", "energies", "identifyStep", "strainMagnitude",
                 "interiorMargin", "seed", "outputDir"},
                "config");
  const auto kind = experimentKindFromString(j.value("experiment", std::string("ElasticRandom")));
  ExperimentConfig c = defaults(kind);
  auto get = [&](const char* key, auto& target) {
    if (j.contains(key)) target = j.at(key).get<std::decay_t<decltype(target)>>();
  };
  get("ensembleSize", c.ensembleSize);
  if (j.contains("bc")) c.bc = fem::bcKindFromString(j.at("bc").get<std::string>());
  for (const char* key : {"loadCase", "loadCases"}) {
    if (!j.contains(key)) continue;
    const auto& v = j.at(key);
    c.loadCases.clear();
    if (v.is_string()) c.loadCases.push_back(loadCaseFromString(v.get<std::string>()));
    else
      for (const auto& s : v) c.loadCases.push_back(loadCaseFromString(s.get<std::string>()));
  }
  get("mesh", c.mesh);
  if (j.contains("inclusions")) {
    const auto& s = j.at("inclusions");
    rejectUnknown(s, {"count", "fraction", "matrix", "inclusion"}, "config.inclusions");
    c.inclusions.count = s.value("count", c.inclusions.count);
    c.inclusions.fraction = s.value("fraction", c.inclusions.fraction);
    if (s.contains("matrix")) c.inclusions.matrix = phaseFrom(s.at("matrix"), c.inclusions.matrix);
    if (s.contains("inclusion")) c.inclusions.inclusion = phaseFrom(s.at("inclusion"), c.inclusions.inclusion);
  }
  if (j.contains("field")) {
    const auto& s = j.at("field");
    rejectUnknown(s, {"mean", "cov", "correlationLength", "energyFraction"}, "config.field");
    if (s.contains("mean")) {
      const auto& m = s.at("mean");
      if (m.is_array()) {
        c.field.mean = m.get<std::array<double, 4>>();
      } else {
        const char* names[] = {"K", "G", "sigmaF", "Kd"};
        for (int k = 0; k < 4; ++k) c.field.mean[static_cast<std::size_t>(k)] = m.value(names[k], c.field.mean[static_cast<std::size_t>(k)]);
      }
    }
    c.field.cov = s.value("cov", c.field.cov);
    c.field.correlationLength = s.value("correlationLength", c.field.correlationLength);
    c.field.energyFraction = s.value("energyFraction", c.field.energyFraction);
  }
  bool priorCovGiven = false;
  if (j.contains("prior")) {
    const auto& s = j.at("prior");
    rejectUnknown(s, {"kind", "params", "meanFactor", "cov"}, "config.prior");
    c.prior.kind = s.value("kind", c.prior.kind);
    c.prior.meanFactor = s.value("meanFactor", c.prior.meanFactor);
    priorCovGiven = s.contains("cov");
    c.prior.cov = s.value("cov", c.prior.cov);
    if (s.contains("params")) {
      c.prior.params.clear();
      for (const auto& p : s.at("params")) c.prior.params.push_back({p.at("mean").get<double>(), p.at("cov").get<double>()});
    }
  }
  if (kind == ExperimentKind::DamageHeterogeneous && !priorCovGiven) c.prior.cov = c.field.cov;
  get("pceDegree", c.pceDegree);
  get("forecastDegree", c.forecastDegree);
  get("forecastSamples", c.forecastSamples);
  get("mapOrder", c.mapOrder);
  get("kMax", c.kMax);
  get("noiseLevel", c.noiseLevel);
  get("observableOffset", c.observableOffset);
  get("steps", c.steps);
  get("observedSteps", c.observedSteps);
  get("energies", c.energies);
  get("identifyStep", c.identifyStep);
  get("strainMagnitude", c.strainMagnitude);
  get("interiorMargin", c.interiorMargin);
  get("seed", c.seed);
  get("outputDir", c.outputDir);
  c.validate();
  return c;
}

ExperimentConfig loadConfig(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DomainError("cannot open config " + file.string());
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("config " + file.string() + ": " + e.what());
  }
  return ExperimentConfig::fromJson(j);
}

std::uint64_t memberSeed(std::uint64_t runSeed, int member) {
  return splitmix(splitmix(runSeed) ^ static_cast<std::uint64_t>(member));
}

fem::MesoSpecimen buildSpecimen(const ExperimentConfig& c, int member, LoadCase lc) {
  const std::uint64_t seed = memberSeed(c.seed, member);
  fem::MesoSpecimen s;
  if (c.isElastic()) {
    const auto& inc = c.inclusions;
    if (inc.count > 0) {
      const auto layout = randfield::placeInclusions(inc.count, inc.fraction, seed);
      s = homog::twoPhaseSpecimen(layout, c.mesh, inc.matrix, inc.inclusion, c.bc);
    } else {
      s = fem::MesoSpecimen::homogeneous(c.mesh, c.mesh, fem::MaterialParams::elastic(inc.matrix.K, inc.matrix.G), c.bc);
    }
    s.macroTensor = c.strainMagnitude * loadTensor(lc);
  } else {
    Rng rng(seed);
    if (c.kind == ExperimentKind::DamageValidation) {
      Eigen::Vector4d v;
      const Matrix z = standardNormal(rng, 1, 4);
      for (int k = 0; k < 4; ++k) {
        const auto lp = randfield::lognormalFromMeanCov(c.field.mean[static_cast<std::size_t>(k)], c.field.cov);
        v(k) = std::exp(lp.meanLog + lp.sdLog * z(0, k));
      }
      s = fem::MesoSpecimen::homogeneous(c.mesh, c.mesh, fem::MaterialParams::fromVector(v), c.bc);
    } else {
      s.mesh = fem::Mesh(c.mesh, c.mesh);
      s.bcKind = c.bc;
      const auto field = standardField(s.mesh, c.field.correlationLength * s.mesh.elementLength(),
                                       c.field.energyFraction);
      Matrix logs(s.mesh.elementCount(), 4);
      for (int k = 0; k < 4; ++k) {
        const auto lp = randfield::lognormalFromMeanCov(c.field.mean[static_cast<std::size_t>(k)], c.field.cov);
        const Vector g = field->sampleLog(standardNormal(rng, field->modeCount(), 1));
        logs.col(k) = (lp.meanLog + lp.sdLog * g.array()).matrix();
      }
      s.material.reserve(static_cast<std::size_t>(s.mesh.elementCount()));
      for (int e = 0; e < s.mesh.elementCount(); ++e)
        s.material.push_back(fem::MaterialParams::fromVector(logs.row(e).transpose().array().exp().matrix()));
    }
    s.loadProgram = fem::defaultDamageProgram();
    s.macroTensor = loadTensor(lc);
  }
  s.interiorMargin = c.interiorMargin;
  return s;
}

Vector macroEnergies(const ExperimentConfig& c, const Vector& params) {
  if (params.size() != c.paramCount()) throw DimensionMismatch("macroEnergies: wrong parameter count");
  const int steps = c.stepCount();
  Vector row = Vector::Zero(static_cast<Eigen::Index>(c.loadCases.size()) * steps * EnergyArchive::kFields);
  const fem::MaterialParams m = c.isElastic() ? fem::MaterialParams::elastic(params(0), params(1))
                                              : fem::MaterialParams::fromVector(params);
  m.validate();
  for (std::size_t lc = 0; lc < c.loadCases.size(); ++lc) {
    auto s = fem::MesoSpecimen::homogeneous(1, 1, m, c.bc);
    std::vector<fem::EnergyRecord> recs;
    if (c.isElastic()) {
      s.macroTensor = c.strainMagnitude * loadTensor(c.loadCases[lc]);
      recs.push_back(fem::assembleAndSolveElastic(s, s.macroTensor).energies);
    } else {
      s.loadProgram = fem::defaultDamageProgram();
      s.macroTensor = loadTensor(c.loadCases[lc]);
      recs = fem::runDamageProgram(s, steps).records;
    }
    for (int k = 0; k < steps; ++k) {
      const auto& r = recs[static_cast<std::size_t>(k)];
      const Eigen::Index base = (static_cast<Eigen::Index>(lc) * steps + k) * EnergyArchive::kFields;
      row.segment(base, 5) << r.elasticE, r.damageE, r.hardeningE, r.externalWork, r.dissipation;
    }
  }
  return row;
}

}  // namespace upscale::pipeline
