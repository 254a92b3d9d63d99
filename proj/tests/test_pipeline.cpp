#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "upscale/pipeline.hpp"

#include <fstream>

using namespace upscale;
using namespace upscale::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("upscale_test_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig homogeneousElastic(std::vector<LoadCase> cases, fem::BcKind bc = fem::BcKind::LinearDisplacement) {
  auto c = ExperimentConfig::defaults(ExperimentKind::ElasticValidation);
  c.inclusions.count = 0;
  c.mesh = 4;
  c.bc = bc;
  c.loadCases = std::move(cases);
  return c;
}

// Archive whose members are single homogeneous elements with lognormal moduli.
EnergyArchive syntheticElastic(const ExperimentConfig& c, int n, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix z = standardNormal(rng, n, 2);
  EnergyArchive a;
  a.cases = static_cast<int>(c.loadCases.size());
  a.steps = 1;
  for (auto lc : c.loadCases) a.caseNames.push_back(toString(lc));
  a.values.resize(n, a.cases * EnergyArchive::kFields);
  for (int i = 0; i < n; ++i) {
    const Vector p = Eigen::Vector2d(std::exp(std::log(4.0) + 0.1 * z(i, 0)), std::exp(std::log(1.0) + 0.1 * z(i, 1)));
    a.values.row(i) = macroEnergies(c, p).transpose();
    a.members.push_back(i);
    a.seeds.push_back(static_cast<std::uint64_t>(i));
  }
  return a;
}

double correlation(const Vector& a, const Vector& b) {
  const Vector x = a.array() - a.mean(), y = b.array() - b.mean();
  return x.dot(y) / (x.norm() * y.norm());
}

}  // namespace

TEST_CASE("config round trip and validation") {
  auto c = ExperimentConfig::defaults(ExperimentKind::DamageValidation);
  c.ensembleSize = 7;
  c.loadCases = {LoadCase::Shear, LoadCase::Compression};
  c.seed = 99;
  const auto back = ExperimentConfig::fromJson(c.toJson());
  CHECK(back.toJson() == c.toJson());
  CHECK(back.paramNames().size() == 4);

  Json bad = c.toJson();
  bad["ensembelSize"] = 3;
  CHECK_THROWS_AS(ExperimentConfig::fromJson(bad), DomainError);
  Json j{{"experiment", "ElasticRandom"}, {"loadCase", "Shear"}, {"bc", "PR"}};
  const auto e = ExperimentConfig::fromJson(j);
  CHECK(e.loadCases.size() == 1);
  CHECK((e.loadCases[0] == LoadCase::Shear));
  CHECK((e.bc == fem::BcKind::Periodic));
  CHECK_THROWS_AS(ExperimentConfig::fromJson(Json{{"experiment", "Plastic"}}), DomainError);
  CHECK((strategyFromString("per-sample") == Strategy::PerSampleThenIdentify));
  CHECK((strategyFromString("energy-pce") == Strategy::EnergyPceThenUpdate));

  const auto h = ExperimentConfig::fromJson(Json{{"experiment", "DamageHeterogeneous"}, {"field", {{"cov", 0.1}}}});
  CHECK(h.prior.cov == 0.1);
}

TEST_CASE("single homogeneous member matches the patch test energy") {
  const auto c = homogeneousElastic({LoadCase::Compression, LoadCase::Shear});
  const auto a = runEnsemble(c);
  REQUIRE(a.values.rows() == 1);
  const double eps = c.strainMagnitude;
  CHECK(a.values(0, a.column(0, 0, 0)) == doctest::Approx(2.0 * 4.0 * eps * eps).epsilon(1e-10));
  CHECK(a.values(0, a.column(1, 0, 0)) == doctest::Approx(0.5 * 1.0 * eps * eps).epsilon(1e-10));
  CHECK(a.values(0, a.column(0, 0, 1)) == 0.0);
}

TEST_CASE("archives are byte identical across reruns, job counts and resumes") {
  auto c = ExperimentConfig::defaults(ExperimentKind::ElasticRandom);
  c.ensembleSize = 4;
  c.inclusions.count = 4;
  c.mesh = 16;
  const auto d1 = scratch("run1"), d2 = scratch("run2");
  runEnsemble(c, {1, d1});
  runEnsemble(c, {2, d2});
  const auto h = fileHash(d1 / "archive.csv");
  CHECK(h == fileHash(d2 / "archive.csv"));

  fs::remove(d2 / "archive.csv");
  fs::remove(d2 / "members" / "member_00002.csv");
  runEnsemble(c, {1, d2});
  CHECK(h == fileHash(d2 / "archive.csv"));

  const auto m = Manifest::read(d1 / "simulate.manifest.json");
  CHECK(m.command == "simulate");
  CHECK(m.outputs["archive.csv"].get<std::string>() == h);
  CHECK(m.extra["status"].get<std::string>() == "complete");

  const auto back = EnergyArchive::load(d1 / "archive.csv");
  const auto mem = runEnsemble(c);
  CHECK((back.values - mem.values).norm() == 0.0);
  CHECK(back.seeds == mem.seeds);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("elastic archives drop the dissipative dimensions") {
  auto c = ExperimentConfig::defaults(ExperimentKind::ElasticRandom);
  c.energies = {"Ee", "Ed", "Eh"};
  const auto a = syntheticElastic(c, 30, 5);
  const auto obs = selectObservable(c, a);
  REQUIRE(obs.columns.size() == 1);
  CHECK(obs.names[0] == "Compression.s1.Ee");
  CHECK(obs.offsets(0) == 0.0);
}

TEST_CASE("lognormal energies identify a single component") {
  auto c = ExperimentConfig::defaults(ExperimentKind::ElasticRandom);
  const auto a = syntheticElastic(c, 200, 8);
  const auto id = identifyEnergies(c, a);
  CHECK_FALSE(id.deterministic);
  CHECK(id.components == 1);
  CHECK(id.meanRelError < 0.05);
  CHECK(id.covRelError < 0.05);
}

TEST_CASE("zero-noise homogeneous elastic recovers the moduli") {
  auto c = homogeneousElastic({LoadCase::Shear, LoadCase::Compression}, fem::BcKind::Periodic);
  c.noiseLevel = 0.0;
  const auto a = runEnsemble(c);
  const auto r = pipeline::upscale(c, a, Strategy::PerSampleThenIdentify);
  CHECK(r.aleatory.mean(0) == doctest::Approx(4.0).epsilon(0.01));
  CHECK(r.aleatory.mean(1) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(r.total.sd(0) < 0.01 * 4.0);

  const auto e = pipeline::upscale(c, a, Strategy::EnergyPceThenUpdate);
  CHECK(e.total.mean(0) == doctest::Approx(4.0).epsilon(0.01));
  CHECK(e.total.mean(1) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("compression alone leaves the shear modulus at its prior") {
  auto c = homogeneousElastic({LoadCase::Compression});
  const auto a = runEnsemble(c);
  const auto r = pipeline::upscale(c, a, Strategy::PerSampleThenIdentify);
  CHECK(r.total.mean(1) == doctest::Approx(r.prior.mean(1)).epsilon(0.02));
  CHECK(r.total.sd(1) == doctest::Approx(r.prior.sd(1)).epsilon(0.05));
  CHECK(r.total.sd(0) < 0.5 * r.prior.sd(0));
}

TEST_CASE("both strategies agree on a synthetic elastic ensemble") {
  auto c = ExperimentConfig::defaults(ExperimentKind::ElasticRandom);
  c.inclusions.count = 0;
  c.loadCases = {LoadCase::Shear, LoadCase::Compression};
  c.bc = fem::BcKind::Periodic;
  const auto a = syntheticElastic(c, 100, 3);
  const auto ps = pipeline::upscale(c, a, Strategy::PerSampleThenIdentify);
  const auto ep = pipeline::upscale(c, a, Strategy::EnergyPceThenUpdate);
  for (int k = 0; k < 2; ++k) {
    CHECK(ep.total.mean(k) == doctest::Approx(ps.total.mean(k)).epsilon(0.1));
    CHECK(ep.total.sd(k) == doctest::Approx(ps.total.sd(k)).epsilon(0.1));
  }
  CHECK(ps.aleatory.mean(0) == doctest::Approx(4.02).epsilon(0.03));
  CHECK(ps.aleatory.logSd(0) == doctest::Approx(0.1).epsilon(0.2));
}

TEST_CASE("damage energies are strongly correlated at the last step") {
  auto c = ExperimentConfig::defaults(ExperimentKind::DamageValidation);
  c.ensembleSize = 20;
  c.mesh = 2;
  const auto a = runEnsemble(c);
  const Vector ed = a.energy("Ed").col(0), eh = a.energy("Eh").col(0);
  REQUIRE((ed.array() > 0.0).all());
  CHECK(correlation(ed.array().log().matrix(), eh.array().log().matrix()) > 0.9);
  CHECK((a.energy("Ed", 0).array() == 0.0).all());
}

TEST_CASE("prior kinds") {
  auto c = ExperimentConfig::defaults(ExperimentKind::ElasticRandom);
  const auto b = homog::bounds({c.inclusions.matrix, c.inclusions.inclusion}, {0.6, 0.4});
  for (const char* kind : {"HS", "RV", "MAT"}) {
    c.prior.kind = kind;
    const auto p = buildPrior(c, 1);
    CHECK(p.pce.outputDim() == 2);
    CHECK(p.logSd(0) > 0.0);
  }
  c.prior.kind = "HS";
  const auto p = buildPrior(c, 1);
  CHECK(std::exp(p.logMean(0) - 1.959963984540054 * p.logSd(0)) == doctest::Approx(b.hsLowerK).epsilon(1e-12));
  CHECK(std::exp(p.logMean(1) + 1.959963984540054 * p.logSd(1)) == doctest::Approx(b.hsUpperG).epsilon(1e-12));
  c.prior.kind = "bogus";
  CHECK_THROWS_AS(buildPrior(c, 1), DomainError);

  auto d = ExperimentConfig::defaults(ExperimentKind::DamageValidation);
  const auto q = buildPrior(d, 1);
  const auto ref = referenceDamageMeans();
  CHECK(q.moments.mean(2) == doctest::Approx(1.2 * ref[2]).epsilon(1e-12));
  CHECK(q.moments.sd(2) == doctest::Approx(0.24 * ref[2]).epsilon(1e-12));
}

TEST_CASE("quantiles and densities") {
  const Vector flat = Vector::Constant(10, 2.5);
  const auto q = quantileRow("x", flat);
  CHECK(q.p50 == 2.5);
  CHECK(q.p99 == 2.5);
  CHECK(q.sd == 0.0);
  CHECK(kernelDensity(flat).rows() == 1);

  Rng rng(4);
  const Vector z = standardNormal(rng, 5000, 1);
  const auto r = quantileRow("z", z);
  CHECK(r.p50 == doctest::Approx(0.0).epsilon(0.05).scale(1.0));
  CHECK(r.p95 == doctest::Approx(1.645).epsilon(0.05));
  const Matrix kde = kernelDensity(z);
  const double dx = kde(1, 0) - kde(0, 0);
  CHECK(kde.col(1).sum() * dx == doctest::Approx(1.0).epsilon(0.01));

  const auto dir = scratch("report");
  CHECK_THROWS_AS(report(dir), DomainError);
  fs::create_directories(dir);
  writeCsv(dir / "posterior_total_samples.csv", {"K"}, z);
  report(dir);
  CHECK(fs::exists(dir / "quantiles.csv"));
  CHECK(fs::exists(dir / "densities.csv"));
  fs::remove_all(dir);
}

TEST_CASE("csv and hash helpers") {
  const auto dir = scratch("csv");
  Matrix m(2, 2);
  m << 0.1, 1e300, -3.0, 1.0 / 3.0;
  writeCsv(dir / "m.csv", {"a", "b"}, m);
  std::vector<std::string> head;
  const Matrix back = readCsv(dir / "m.csv", &head);
  CHECK(back == m);
  CHECK(head == std::vector<std::string>{"a", "b"});
  const auto h = fileHash(dir / "m.csv");
  CHECK(h.size() == 16);
  writeCsv(dir / "m.csv", {"a", "b"}, m * 2.0);
  CHECK(fileHash(dir / "m.csv") != h);
  fs::remove_all(dir);
}
