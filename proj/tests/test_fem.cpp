#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "upscale/fem.hpp"
#include "upscale/randfield.hpp"

#include <cmath>

using namespace upscale;
using namespace upscale::fem;

namespace {

MaterialParams tableMeans() { return {204440.0, 92000.0, 300.0, 450.0}; }

Matrix2 shear(double gamma) {
  Matrix2 F;
  F << 0.0, 0.5 * gamma, 0.5 * gamma, 0.0;
  return F;
}

MesoSpecimen damageSpecimen(int n, const MaterialParams& m) {
  auto s = MesoSpecimen::homogeneous(n, n, m, BcKind::LinearDisplacement);
  s.loadProgram = defaultDamageProgram();
  s.macroTensor = -Matrix2::Identity();
  return s;
}

void checkDamageRun(DamageSolver& solver, int nSteps) {
  DamageState prev = solver.state();
  EnergyRecord last;
  for (int k = 1; k <= nSteps; ++k) {
    const EnergyRecord r = solver.advance(10.0 * k / nSteps);
    CHECK(r.elasticE >= 0.0);
    CHECK(r.damageE >= 0.0);
    CHECK(r.hardeningE >= 0.0);
    CHECK(r.externalWork >= 0.0);
    CHECK(r.dissipation >= last.dissipation - 1e-12 * std::abs(r.externalWork));
    const double dWork = r.externalWork - last.externalWork;
    const double dStored = (r.elasticE + r.damageE + r.hardeningE) -
                           (last.elasticE + last.damageE + last.hardeningE);
    const double dDiss = r.dissipation - last.dissipation;
    CHECK(std::abs(dWork - dStored - dDiss) <= 1e-6 * std::abs(dWork));
    const auto& st = solver.state();
    int violations = 0;
    for (std::size_t i = 0; i < st.size(); ++i) {
      if (st[i].hardeningVar < prev[i].hardeningVar) ++violations;
      if (st[i].damageCompliance < prev[i].damageCompliance) ++violations;
    }
    CHECK(violations == 0);
    prev = st;
    last = r;
  }
  CHECK(solver.maxYieldRatio() <= 1e-8);
}

}  // namespace

TEST_CASE("material parameters") {
  const MaterialParams m = tableMeans();
  const MaterialParams back = MaterialParams::fromLog(m.logParams());
  CHECK(back.bulkK == doctest::Approx(m.bulkK).epsilon(1e-15));
  CHECK(back.sigmaF == doctest::Approx(m.sigmaF).epsilon(1e-15));
  CHECK_THROWS_AS(MaterialParams({-1.0, 1.0, 1.0, 1.0}).validate(), DomainError);
  CHECK_THROWS_AS(MaterialParams({1.0, 6.0, 1.0, 1.0}).validate(), DomainError);
}

TEST_CASE("elastic patch test in pure shear") {
  for (auto kind : {BcKind::LinearDisplacement, BcKind::Periodic}) {
    auto s = MesoSpecimen::homogeneous(4, 4, MaterialParams::elastic(4.0, 1.0), kind);
    const auto sol = assembleAndSolveElastic(s, shear(0.01));
    CHECK(sol.energies.elasticE == doctest::Approx(5e-5).epsilon(1e-10));
    CHECK(sol.energies.damageE == 0.0);
    CHECK(sol.energies.hardeningE == 0.0);
    CHECK(sol.residualNorm <= 1e-10 * sol.loadNorm);
    const Eigen::Vector3d ref = sol.gaussStress.col(0);
    for (Eigen::Index q = 0; q < sol.gaussStress.cols(); ++q)
      CHECK((sol.gaussStress.col(q) - ref).norm() <= 1e-10 * ref.norm());
    CHECK(ref(2) == doctest::Approx(0.01));
  }
}

TEST_CASE("equibiaxial energy depends only on the area bulk modulus") {
  auto s = MesoSpecimen::homogeneous(3, 3, MaterialParams::elastic(4.0, 1.0), BcKind::LinearDisplacement);
  const double e = 1e-3;
  const auto sol = assembleAndSolveElastic(s, -e * Matrix2::Identity());
  CHECK(sol.energies.elasticE == doctest::Approx(2.0 * 4.0 * e * e).epsilon(1e-12));
}

TEST_CASE("zero macro strain gives zero response") {
  auto s = MesoSpecimen::homogeneous(3, 3, MaterialParams::elastic(4.0, 1.0), BcKind::LinearDisplacement);
  const auto sol = assembleAndSolveElastic(s, Matrix2::Zero());
  CHECK(sol.displacement.norm() == 0.0);
  CHECK(sol.energies.elasticE == 0.0);
  const auto cs = applyBoundaryCondition(BcKind::LinearDisplacement, Matrix2::Zero(), s.mesh);
  CHECK(cs.affine.norm() == 0.0);
}

TEST_CASE("boundary conditions agree on a homogeneous patch") {
  const MaterialParams m = MaterialParams::elastic(4.0, 1.0);
  Matrix2 F;
  F << -1e-3, 4e-4, 4e-4, 2e-4;
  auto s = MesoSpecimen::homogeneous(5, 5, m, BcKind::LinearDisplacement);
  const double eLD = assembleAndSolveElastic(s, F).energies.elasticE;
  s.bcKind = BcKind::Periodic;
  const double ePR = assembleAndSolveElastic(s, F).energies.elasticE;
  CHECK(ePR == doctest::Approx(eLD).epsilon(1e-10));

  // Uniform tension with the stress of the homogeneous solution.
  const double K3 = m.bulk3D();
  const double tr = F.trace();
  Matrix2 sigma = 2.0 * m.shearG * F;
  sigma.diagonal().array() += (K3 - 2.0 * m.shearG / 3.0) * tr;
  s.bcKind = BcKind::UniformTension;
  const auto ut = assembleAndSolveElastic(s, sigma);
  CHECK(ut.energies.elasticE == doctest::Approx(eLD).epsilon(1e-9));
}

TEST_CASE("heterogeneous LD energy is not below PR") {
  const auto layout = randfield::placeInclusions(16, 0.4, 5);
  auto s = MesoSpecimen::homogeneous(24, 24, MaterialParams::elastic(4.0, 1.0), BcKind::LinearDisplacement);
  for (int e = 0; e < s.mesh.elementCount(); ++e)
    if (layout.contains(s.mesh.midpoint(e))) s.material[e] = MaterialParams::elastic(40.0, 10.0);
  Matrix2 F;
  F << -1e-3, 3e-4, 3e-4, -5e-4;
  const double eLD = assembleAndSolveElastic(s, F).energies.elasticE;
  s.bcKind = BcKind::Periodic;
  const double ePR = assembleAndSolveElastic(s, F).energies.elasticE;
  CHECK(eLD >= ePR);
  CHECK(ePR > 0.0);
}

TEST_CASE("stiffness is symmetric and positive semidefinite") {
  const auto layout = randfield::placeInclusions(4, 0.3, 2);
  auto s = MesoSpecimen::homogeneous(6, 6, MaterialParams::elastic(4.0, 1.0), BcKind::Periodic);
  for (int e = 0; e < s.mesh.elementCount(); ++e)
    if (layout.contains(s.mesh.midpoint(e))) s.material[e] = MaterialParams::elastic(40.0, 10.0);
  const Eigen::SparseMatrix<double> K = assembleElasticStiffness(s);
  const Matrix Kd(K);
  CHECK((Kd - Kd.transpose()).norm() <= 1e-12 * Kd.norm());
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Vector u = standardNormal(rng, K.rows(), 1);
    CHECK(u.dot(K * u) >= -1e-10 * Kd.norm() * u.squaredNorm());
  }
}

TEST_CASE("uniform tension energy ignores the rigid-mode choice") {
  auto s = MesoSpecimen::homogeneous(4, 4, MaterialParams::elastic(4.0, 1.0), BcKind::UniformTension);
  s.material[5] = MaterialParams::elastic(40.0, 10.0);
  Matrix2 sig;
  sig << -0.01, 0.002, 0.002, 0.003;
  const auto a = assembleAndSolveElastic(s, sig);
  // Superposing a rigid motion does not change the strain energy.
  Vector u = a.displacement;
  for (int n = 0; n < s.mesh.nodeCount(); ++n) {
    const Vector2 x = s.mesh.node(n);
    u(2 * n) += 0.3 - 0.01 * x.y();
    u(2 * n + 1) += -0.2 + 0.01 * x.x();
  }
  const DamageState zero(static_cast<std::size_t>(4 * s.mesh.elementCount()));
  CHECK(computeEnergies(s, zero, u).elasticE == doctest::Approx(a.energies.elasticE).epsilon(1e-10));
}

TEST_CASE("damage multiplier solves the consistency condition") {
  const MaterialParams m = tableMeans();
  const DamagePointState fresh;
  const double c = 1.0 / m.bulk3D();
  const double dg = damageMultiplier(m, fresh, 330.0);
  // Bisection on the scalar consistency equation.
  auto g = [&](double x) { return (330.0 - 9.0 * x / c) - m.sigmaF - m.hardeningKd * x; };
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0.0 ? lo : hi) = mid;
  }
  CHECK(dg == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-12));
  CHECK(std::abs(g(dg)) <= 1e-8 * m.sigmaF);
  CHECK(damageMultiplier(m, fresh, 290.0) == 0.0);

  // Same through the point update with an equibiaxial trial strain.
  const double v = 330.0 / 3.0 * c;
  const auto r = updatePoint(m, fresh, Eigen::Vector3d(-0.5 * v, -0.5 * v, 0.0));
  CHECK(r.multiplier == doctest::Approx(dg).epsilon(1e-12));
  CHECK(std::abs(3.0 * r.pressure - m.sigmaF - m.hardeningKd * r.state.hardeningVar) <= 1e-8 * m.sigmaF);
  CHECK(r.state.damageCompliance > 0.0);
}

TEST_CASE("consistent tangent matches finite differences") {
  const MaterialParams m = tableMeans();
  DamagePointState st;
  st.hardeningVar = 0.01;
  st.damageCompliance = 1e-6;
  const Eigen::Vector3d eps(-8e-4, -6e-4, 2e-4);
  const auto r = updatePoint(m, st, eps);
  REQUIRE(r.multiplier > 0.0);
  for (int j = 0; j < 3; ++j) {
    const double h = 1e-10;
    Eigen::Vector3d ep = eps, em = eps;
    ep(j) += h;
    em(j) -= h;
    const Eigen::Vector3d fd = (updatePoint(m, st, ep).stress - updatePoint(m, st, em).stress) / (2 * h);
    CHECK((fd - r.tangent.col(j)).norm() <= 1e-5 * r.tangent.norm());
  }
}

TEST_CASE("energy densities by hand") {
  auto s = MesoSpecimen::homogeneous(1, 1, tableMeans(), BcKind::LinearDisplacement);
  DamageState st(4);
  for (auto& p : st) p.hardeningVar = 0.001;
  const Vector u0 = Vector::Zero(s.mesh.dofCount());
  const auto eh = computeEnergies(s, st, u0);
  CHECK(eh.hardeningE == doctest::Approx(2.25e-4).epsilon(1e-12));
  CHECK(eh.elasticE == 0.0);
  CHECK(eh.damageE == 0.0);

  // Uniform compression with a known compliance.
  const double e = 1e-4, d = 2e-6;
  for (auto& p : st) {
    p.hardeningVar = 0.0;
    p.damageCompliance = d;
  }
  Vector u(s.mesh.dofCount());
  for (int n = 0; n < 4; ++n) u.segment<2>(2 * n) = -e * s.mesh.node(n);
  const auto ed = computeEnergies(s, st, u);
  const MaterialParams m = tableMeans();
  const double P = 2.0 * e / (1.0 / m.bulk3D() + d);
  CHECK(ed.damageE == doctest::Approx(0.5 * P * (d * P)).epsilon(1e-12));
  // Out-of-plane deviatoric part: |dev eps|^2 = 2 e^2 / 3.
  const double devPart = m.shearG * 2.0 * e * e / 3.0;
  CHECK(ed.elasticE + ed.damageE == doctest::Approx(0.5 * P * 2.0 * e + devPart).epsilon(1e-12));
}

TEST_CASE("load program validation") {
  auto s = damageSpecimen(1, tableMeans());
  CHECK_THROWS_AS(runDamageProgram(s, 1), DomainError);
  s.loadProgram = {{1.0, 0.0}, {2.0, 1.0}};
  CHECK_THROWS_AS(runDamageProgram(s, 4), DomainError);
  s = damageSpecimen(2, tableMeans());
  s.material.pop_back();
  CHECK_THROWS_AS(runDamageProgram(s, 4), MeshMismatch);
}

TEST_CASE("below the damage limit every step is elastic") {
  auto s = damageSpecimen(1, tableMeans());
  s.loadProgram = {{0.0, 0.0}, {10.0, 0.0002}};
  const auto run = runDamageProgram(s, 8);
  for (const auto& r : run.records) {
    CHECK(r.damageE == 0.0);
    CHECK(r.hardeningE == 0.0);
    CHECK(r.dissipation == doctest::Approx(0.0).scale(1e-3));
  }
}

TEST_CASE("damage program on the single macro element") {
  DamageSolver solver(damageSpecimen(1, tableMeans()));
  checkDamageRun(solver, 8);
  const auto& rec = solver.records();
  CHECK(rec[0].damageE == 0.0);
  CHECK(rec[1].damageE == 0.0);
  CHECK(rec[0].hardeningE == 0.0);
  CHECK(rec[1].hardeningE == 0.0);
  CHECK(rec[7].damageE > 0.0);
  CHECK(rec[7].hardeningE > 0.0);
  CHECK(rec[7].dissipation > 0.0);
}

TEST_CASE("damage program on a heterogeneous field") {
  const int n = 20;
  const Mesh mesh(n, n);
  const auto pts = mesh.midpoints();
  const auto mk = randfield::lognormalFromMeanCov(204440.0, 0.1);
  const auto mg = randfield::lognormalFromMeanCov(92000.0, 0.1);
  const auto ms = randfield::lognormalFromMeanCov(300.0, 0.1);
  const auto md = randfield::lognormalFromMeanCov(450.0, 0.1);
  const double lc = 5.0 * mesh.elementLength();
  Rng rng(17);
  auto field = [&](const randfield::LognormalParams& p) {
    randfield::LognormalField f(pts, p.meanLog, p.sdLog, lc);
    return f.sample(standardNormal(rng, f.modeCount(), 1));
  };
  const Vector K = field(mk), G = field(mg), S = field(ms), D = field(md);
  auto s = damageSpecimen(n, tableMeans());
  for (int e = 0; e < mesh.elementCount(); ++e) s.material[e] = {K(e), G(e), S(e), D(e)};
  DamageSolver solver(s);
  checkDamageRun(solver, 8);
  CHECK(solver.records().back().damageE > 0.0);
}

TEST_CASE("mesh refinement sanity for the homogeneous damage problem") {
  const auto a = runDamageProgram(damageSpecimen(2, tableMeans()), 8).records.back();
  const auto b = runDamageProgram(damageSpecimen(4, tableMeans()), 8).records.back();
  CHECK(std::abs(a.elasticE - b.elasticE) <= 0.01 * a.elasticE);
  CHECK(std::abs(a.damageE - b.damageE) <= 0.01 * a.damageE);
  CHECK(std::abs(a.hardeningE - b.hardeningE) <= 0.01 * a.hardeningE);
}
