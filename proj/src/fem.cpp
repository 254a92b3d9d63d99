#include "upscale/fem.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace upscale::fem {

namespace {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using ElemB = Eigen::Matrix<double, 3, 8>;

struct GaussData {
  std::array<ElemB, 4> B;
  double weight;  // detJ for unit Gauss weights
};

GaussData gaussData(const Mesh& mesh) {
  const double hx = 1.0 / mesh.nElemX();
  const double hy = 1.0 / mesh.nElemY();
  const double g = 1.0 / std::sqrt(3.0);
  static constexpr double xiN[4] = {-1.0, 1.0, 1.0, -1.0};
  static constexpr double etaN[4] = {-1.0, -1.0, 1.0, 1.0};
  const double xiG[4] = {-g, g, g, -g};
  const double etaG[4] = {-g, -g, g, g};

  GaussData out;
  out.weight = 0.25 * hx * hy;
  for (int q = 0; q < 4; ++q) {
    ElemB& B = out.B[q];
    B.setZero();
    for (int a = 0; a < 4; ++a) {
      const double dxi = 0.25 * xiN[a] * (1.0 + etaN[a] * etaG[q]);
      const double deta = 0.25 * etaN[a] * (1.0 + xiN[a] * xiG[q]);
      const double dx = dxi * 2.0 / hx;
      const double dy = deta * 2.0 / hy;
      B(0, 2 * a) = dx;
      B(1, 2 * a + 1) = dy;
      B(2, 2 * a) = dy;
      B(2, 2 * a + 1) = dx;
    }
  }
  return out;
}

Eigen::Matrix<double, 8, 1> gatherElement(const Mesh& mesh, int e, const Vector& u) {
  Eigen::Matrix<double, 8, 1> ue;
  const auto& nodes = mesh.element(e);
  for (int a = 0; a < 4; ++a) {
    ue(2 * a) = u(2 * nodes[a]);
    ue(2 * a + 1) = u(2 * nodes[a] + 1);
  }
  return ue;
}

bool inInterior(const Mesh& mesh, int e, double margin) {
  if (margin <= 0.0) return true;
  const Vector2 c = mesh.midpoint(e);
  const double dist = std::min({c.x(), c.y(), 1.0 - c.x(), 1.0 - c.y()});
  return dist >= margin;
}

struct SolveResult {
  Vector u;
  Vector w;
  int iterations = 0;
  double residual = 0.0;
  double reference = 0.0;
};

// Newton iteration on the reduced unknowns w with u = affine + T w.
template <typename AssembleFn>
SolveResult newtonSolve(const ConstraintSet& cs, Vector w, AssembleFn&& assemble, int maxIt,
                        double tol) {
  SolveResult out;
  out.w = std::move(w);
  if (out.w.size() != cs.T.cols()) out.w = Vector::Zero(cs.T.cols());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  bool analyzed = false;
  for (int it = 0; it <= maxIt; ++it) {
    out.u = cs.affine + cs.T * out.w;
    Vector fint;
    Eigen::SparseMatrix<double> K;
    assemble(out.u, fint, K);
    const Vector r = cs.T.transpose() * (fint - cs.externalForce);
    out.reference = std::max(fint.lpNorm<Eigen::Infinity>(), cs.externalForce.lpNorm<Eigen::Infinity>());
    out.residual = r.size() ? r.lpNorm<Eigen::Infinity>() : 0.0;
    out.iterations = it;
    if (out.residual <= tol * out.reference) return out;
    if (it == maxIt) break;
    const Eigen::SparseMatrix<double> Kr = cs.T.transpose() * K * cs.T;
    if (!analyzed) {
      solver.analyzePattern(Kr);
      analyzed = true;
    }
    solver.factorize(Kr);
    if (solver.info() != Eigen::Success) throw SingularSystem("fem: singular stiffness matrix");
    const Vector dw = solver.solve(-r);
    if (solver.info() != Eigen::Success || !dw.allFinite())
      throw SingularSystem("fem: linear solve failed");
    out.w += dw;
  }
  throw NonConvergence("fem: Newton did not converge in " + std::to_string(maxIt) +
                       " iterations (residual " + std::to_string(out.residual) + ")");
}

// Point response using the state's compliance without any new damage.
PointResponse respondFrozen(const MaterialParams& m, const DamagePointState& st, const Vec3& strain) {
  MaterialParams frozen = m;
  frozen.sigmaF = std::numeric_limits<double>::infinity();
  PointResponse r = updatePoint(frozen, st, strain);
  r.state.hardeningVar = st.hardeningVar;
  return r;
}

void assembleElastic(const MesoSpecimen& specimen, const Vector& u, Vector& fint,
                     Eigen::SparseMatrix<double>& K) {
  const Mesh& mesh = specimen.mesh;
  const GaussData gd = gaussData(mesh);
  const DamagePointState zero;
  fint = Vector::Zero(mesh.dofCount());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(64 * mesh.elementCount()));
  for (int e = 0; e < mesh.elementCount(); ++e) {
    const auto ue = gatherElement(mesh, e, u);
    MaterialParams mat = specimen.material[static_cast<std::size_t>(e)];
    mat.sigmaF = std::numeric_limits<double>::infinity();
    Eigen::Matrix<double, 8, 8> ke = Eigen::Matrix<double, 8, 8>::Zero();
    Eigen::Matrix<double, 8, 1> fe = Eigen::Matrix<double, 8, 1>::Zero();
    for (int q = 0; q < 4; ++q) {
      const PointResponse r = updatePoint(mat, zero, gd.B[q] * ue);
      fe += gd.weight * gd.B[q].transpose() * r.stress;
      ke += gd.weight * gd.B[q].transpose() * r.tangent * gd.B[q];
    }
    const auto& nodes = mesh.element(e);
    for (int a = 0; a < 8; ++a) {
      const int ga = 2 * nodes[a / 2] + a % 2;
      fint(ga) += fe(a);
      for (int b = 0; b < 8; ++b) trip.emplace_back(ga, 2 * nodes[b / 2] + b % 2, ke(a, b));
    }
  }
  K.resize(mesh.dofCount(), mesh.dofCount());
  K.setFromTriplets(trip.begin(), trip.end());
}

}  // namespace

// ---------------------------------------------------------------------------

Eigen::SparseMatrix<double> assembleElasticStiffness(const MesoSpecimen& specimen) {
  specimen.validate();
  Vector fint;
  Eigen::SparseMatrix<double> K;
  assembleElastic(specimen, Vector::Zero(specimen.mesh.dofCount()), fint, K);
  return K;
}

Eigen::Vector4d MaterialParams::logParams() const {
  return asVector().array().log().matrix();
}

MaterialParams MaterialParams::fromLog(const Eigen::Vector4d& q) {
  return fromVector(q.array().exp().matrix());
}

void MaterialParams::validate() const {
  if (!(bulkK > 0.0) || !(shearG > 0.0) || !(sigmaF > 0.0) || !(hardeningKd > 0.0))
    throw DomainError("MaterialParams: parameters must be positive");
  if (!(bulk3D() > 0.0)) throw DomainError("MaterialParams: bulk modulus must exceed G/3");
}

const char* toString(BcKind kind) {
  switch (kind) {
    case BcKind::LinearDisplacement: return "LD";
    case BcKind::Periodic: return "PR";
    case BcKind::UniformTension: return "UT";
  }
  return "?";
}

BcKind bcKindFromString(const std::string& name) {
  if (name == "LD" || name == "ld") return BcKind::LinearDisplacement;
  if (name == "PR" || name == "pr") return BcKind::Periodic;
  if (name == "UT" || name == "ut") return BcKind::UniformTension;
  throw DomainError("unknown boundary condition '" + name + "'");
}

std::vector<LoadPoint> defaultDamageProgram() {
  return {{0.0, 0.0}, {3.0, 0.00025}, {10.0, 0.00035}};
}

double interpolateProgram(const std::vector<LoadPoint>& program, double t) {
  if (program.empty()) throw DomainError("load program is empty");
  if (t <= program.front().time) return program.front().factor;
  for (std::size_t i = 1; i < program.size(); ++i) {
    if (t <= program[i].time) {
      const auto& a = program[i - 1];
      const auto& b = program[i];
      const double s = (t - a.time) / (b.time - a.time);
      return a.factor + s * (b.factor - a.factor);
    }
  }
  return program.back().factor;
}

// ---------------------------------------------------------------------------

Mesh::Mesh(int nElemX, int nElemY) : nx_(nElemX), ny_(nElemY) {
  if (nx_ < 1 || ny_ < 1) throw DomainError("Mesh: need at least one element per direction");
  nodes_.reserve(static_cast<std::size_t>(nodeCount()));
  for (int j = 0; j <= ny_; ++j)
    for (int i = 0; i <= nx_; ++i)
      nodes_.emplace_back(static_cast<double>(i) / nx_, static_cast<double>(j) / ny_);
  elements_.reserve(static_cast<std::size_t>(elementCount()));
  for (int j = 0; j < ny_; ++j)
    for (int i = 0; i < nx_; ++i)
      elements_.push_back({nodeId(i, j), nodeId(i + 1, j), nodeId(i + 1, j + 1), nodeId(i, j + 1)});
}

Vector2 Mesh::midpoint(int e) const {
  const auto& n = element(e);
  return 0.5 * (node(n[0]) + node(n[2]));
}

std::vector<Vector2> Mesh::midpoints() const {
  std::vector<Vector2> out;
  out.reserve(static_cast<std::size_t>(elementCount()));
  for (int e = 0; e < elementCount(); ++e) out.push_back(midpoint(e));
  return out;
}

bool Mesh::onBoundary(int id) const {
  const int i = id % (nx_ + 1);
  const int j = id / (nx_ + 1);
  return i == 0 || j == 0 || i == nx_ || j == ny_;
}

void MesoSpecimen::validate() const {
  if (static_cast<int>(material.size()) != mesh.elementCount())
    throw MeshMismatch("MesoSpecimen: " + std::to_string(material.size()) + " materials for " +
                       std::to_string(mesh.elementCount()) + " elements");
  for (const auto& m : material) m.validate();
  if (loadProgram.empty()) throw DomainError("MesoSpecimen: empty load program");
  if (loadProgram.front().time != 0.0 || loadProgram.front().factor != 0.0)
    throw DomainError("MesoSpecimen: load program must start at (0, 0)");
  for (std::size_t i = 1; i < loadProgram.size(); ++i)
    if (!(loadProgram[i].time > loadProgram[i - 1].time))
      throw DomainError("MesoSpecimen: load program times must increase strictly");
}

MesoSpecimen MesoSpecimen::homogeneous(int nx, int ny, const MaterialParams& m, BcKind kind) {
  MesoSpecimen s;
  s.mesh = Mesh(nx, ny);
  s.material.assign(static_cast<std::size_t>(s.mesh.elementCount()), m);
  s.bcKind = kind;
  return s;
}

// ---------------------------------------------------------------------------

ConstraintSet applyBoundaryCondition(BcKind kind, const Matrix2& tensor, const Mesh& mesh) {
  const int nDof = mesh.dofCount();
  ConstraintSet cs;
  cs.kind = kind;
  cs.affine = Vector::Zero(nDof);
  cs.externalForce = Vector::Zero(nDof);
  std::vector<Eigen::Triplet<double>> trip;
  int nFree = 0;

  auto affineFill = [&] {
    for (int n = 0; n < mesh.nodeCount(); ++n) cs.affine.segment<2>(2 * n) = tensor * mesh.node(n);
  };

  switch (kind) {
    case BcKind::LinearDisplacement: {
      affineFill();
      for (int n = 0; n < mesh.nodeCount(); ++n) {
        if (mesh.onBoundary(n)) continue;
        trip.emplace_back(2 * n, nFree++, 1.0);
        trip.emplace_back(2 * n + 1, nFree++, 1.0);
      }
      break;
    }
    case BcKind::Periodic: {
      affineFill();
      const int nx = mesh.nElemX(), ny = mesh.nElemY();
      std::unordered_map<int, int> column;
      for (int j = 0; j <= ny; ++j) {
        for (int i = 0; i <= nx; ++i) {
          const int ri = (i == nx) ? 0 : i;
          const int rj = (j == ny) ? 0 : j;
          if (ri == 0 && rj == 0) continue;  // corners carry the affine part only
          const int rep = mesh.nodeId(ri, rj);
          auto it = column.find(rep);
          if (it == column.end()) {
            it = column.emplace(rep, nFree).first;
            nFree += 2;
          }
          const int n = mesh.nodeId(i, j);
          trip.emplace_back(2 * n, it->second, 1.0);
          trip.emplace_back(2 * n + 1, it->second + 1, 1.0);
        }
      }
      break;
    }
    case BcKind::UniformTension: {
      const int nx = mesh.nElemX(), ny = mesh.nElemY();
      auto edgeLoad = [&](int a, int b, const Vector2& normal) {
        const double len = (mesh.node(b) - mesh.node(a)).norm();
        const Vector2 t = tensor * normal * (0.5 * len);
        cs.externalForce.segment<2>(2 * a) += t;
        cs.externalForce.segment<2>(2 * b) += t;
      };
      for (int i = 0; i < nx; ++i) {
        edgeLoad(mesh.nodeId(i, 0), mesh.nodeId(i + 1, 0), Vector2(0, -1));
        edgeLoad(mesh.nodeId(i, ny), mesh.nodeId(i + 1, ny), Vector2(0, 1));
      }
      for (int j = 0; j < ny; ++j) {
        edgeLoad(mesh.nodeId(0, j), mesh.nodeId(0, j + 1), Vector2(-1, 0));
        edgeLoad(mesh.nodeId(nx, j), mesh.nodeId(nx, j + 1), Vector2(1, 0));
      }
      const int pin = mesh.nodeId(0, 0);
      const int roller = mesh.nodeId(nx, 0);
      for (int d = 0; d < nDof; ++d) {
        if (d == 2 * pin || d == 2 * pin + 1 || d == 2 * roller + 1) continue;
        trip.emplace_back(d, nFree++, 1.0);
      }
      break;
    }
  }
  cs.T.resize(nDof, nFree);
  cs.T.setFromTriplets(trip.begin(), trip.end());
  return cs;
}

// ---------------------------------------------------------------------------

double damageMultiplier(const MaterialParams& m, const DamagePointState& committed,
                        double trialMinusTrace) {
  if (m.isElastic()) return 0.0;
  const double c = 1.0 / m.bulk3D() + committed.damageCompliance;
  const double f = trialMinusTrace - m.sigmaF - m.hardeningKd * committed.hardeningVar;
  if (f <= 0.0) return 0.0;
  return f / (9.0 / c + m.hardeningKd);
}

PointResponse updatePoint(const MaterialParams& m, const DamagePointState& committed,
                          const Vec3& strain) {
  const double K3 = m.bulk3D();
  const double G = m.shearG;
  const double tr = strain(0) + strain(1);
  const double v = -tr;

  PointResponse r;
  r.state = committed;
  r.volStrain = v;
  double Kt;
  if (v <= 0.0) {
    // Tension: the damage compliance only acts on compressive pressure.
    r.pressure = K3 * v;
    Kt = K3;
  } else {
    const double c = 1.0 / K3 + committed.damageCompliance;
    const double pTrial = v / c;
    const double dg = damageMultiplier(m, committed, 3.0 * pTrial);
    if (dg > 0.0) {
      r.pressure = pTrial - 3.0 * dg / c;
      r.state.hardeningVar = committed.hardeningVar + dg;
      r.state.damageCompliance = std::max(v / r.pressure - 1.0 / K3, committed.damageCompliance);
      r.multiplier = dg;
      Kt = m.hardeningKd / (9.0 + m.hardeningKd * c);
    } else {
      r.pressure = pTrial;
      Kt = 1.0 / c;
    }
  }
  r.state.damageStrainVol = -r.state.damageCompliance * std::max(r.pressure, 0.0);

  const double m3 = tr / 3.0;
  r.stress << -r.pressure + 2.0 * G * (strain(0) - m3), -r.pressure + 2.0 * G * (strain(1) - m3),
      G * strain(2);
  r.tangent << Kt + 4.0 * G / 3.0, Kt - 2.0 * G / 3.0, 0.0,  //
      Kt - 2.0 * G / 3.0, Kt + 4.0 * G / 3.0, 0.0,           //
      0.0, 0.0, G;
  return r;
}

Eigen::Vector3d energyDensities(const MaterialParams& m, const PointResponse& r, const Vec3& strain) {
  const double half = 0.5 * r.stress.dot(strain);
  const double pc = std::max(r.pressure, 0.0);
  const double ed = 0.5 * r.state.damageCompliance * pc * pc;
  const double eh = 0.5 * m.hardeningKd * r.state.hardeningVar * r.state.hardeningVar;
  return {half - ed, ed, eh};
}

EnergyRecord computeEnergies(const MesoSpecimen& specimen, const DamageState& state,
                             const Vector& displacement) {
  const Mesh& mesh = specimen.mesh;
  if (displacement.size() != mesh.dofCount())
    throw DimensionMismatch("computeEnergies: displacement size does not match the mesh");
  if (state.size() != static_cast<std::size_t>(4 * mesh.elementCount()))
    throw DimensionMismatch("computeEnergies: state size does not match the mesh");
  const GaussData gd = gaussData(mesh);
  EnergyRecord rec;
  for (int e = 0; e < mesh.elementCount(); ++e) {
    if (!inInterior(mesh, e, specimen.interiorMargin)) continue;
    const auto ue = gatherElement(mesh, e, displacement);
    const auto& mat = specimen.material[static_cast<std::size_t>(e)];
    for (int q = 0; q < 4; ++q) {
      const Vec3 eps = gd.B[q] * ue;
      const auto& st = state[static_cast<std::size_t>(4 * e + q)];
      const PointResponse r = respondFrozen(mat, st, eps);
      const Vec3 dens = energyDensities(mat, r, eps);
      rec.elasticE += gd.weight * dens(0);
      rec.damageE += gd.weight * dens(1);
      rec.hardeningE += gd.weight * dens(2);
    }
  }
  return rec;
}

// ---------------------------------------------------------------------------

ElasticSolution assembleAndSolveElastic(const MesoSpecimen& specimen, const Matrix2& macroTensor) {
  specimen.validate();
  MesoSpecimen elastic = specimen;
  for (auto& m : elastic.material) m.sigmaF = std::numeric_limits<double>::infinity();
  const Mesh& mesh = elastic.mesh;
  const GaussData gd = gaussData(mesh);
  const ConstraintSet cs = applyBoundaryCondition(elastic.bcKind, macroTensor, mesh);
  const DamagePointState zero;

  auto assemble = [&](const Vector& u, Vector& fint, Eigen::SparseMatrix<double>& K) {
    assembleElastic(elastic, u, fint, K);
  };

  const SolveResult sol = newtonSolve(cs, Vector(), assemble, 5, DamageSolver::kTolerance);

  ElasticSolution out;
  out.displacement = sol.u;
  out.residualNorm = sol.residual;
  out.loadNorm = sol.reference;
  DamageState state(static_cast<std::size_t>(4 * mesh.elementCount()));
  out.energies = computeEnergies(elastic, state, sol.u);
  out.gaussStress.resize(3, 4 * mesh.elementCount());
  for (int e = 0; e < mesh.elementCount(); ++e) {
    const auto ue = gatherElement(mesh, e, sol.u);
    for (int q = 0; q < 4; ++q)
      out.gaussStress.col(4 * e + q) =
          updatePoint(elastic.material[static_cast<std::size_t>(e)], zero, gd.B[q] * ue).stress;
  }
  return out;
}

// ---------------------------------------------------------------------------

DamageSolver::DamageSolver(MesoSpecimen specimen) : specimen_(std::move(specimen)) {
  specimen_.validate();
  const Mesh& mesh = specimen_.mesh;
  unitConstraints_ = applyBoundaryCondition(specimen_.bcKind, specimen_.macroTensor, mesh);
  state_.assign(static_cast<std::size_t>(4 * mesh.elementCount()), DamagePointState{});
  w_ = Vector::Zero(unitConstraints_.T.cols());
  time_ = specimen_.loadProgram.front().time;
  Assembly a = solveAt(interpolateProgram(specimen_.loadProgram, time_));
  for (std::size_t i = 0; i < a.points.size(); ++i) state_[i] = a.points[i].state;
  internalForce_ = std::move(a.internalForce);
  committed_ = std::move(a.points);
}

DamageSolver::Assembly DamageSolver::assemble(const Vector& u, bool withTangent) const {
  const Mesh& mesh = specimen_.mesh;
  static thread_local std::vector<Eigen::Triplet<double>> trip;
  const GaussData gd = gaussData(mesh);
  Assembly a;
  a.internalForce = Vector::Zero(mesh.dofCount());
  a.points.resize(static_cast<std::size_t>(4 * mesh.elementCount()));
  trip.clear();
  if (withTangent) trip.reserve(static_cast<std::size_t>(64 * mesh.elementCount()));
  for (int e = 0; e < mesh.elementCount(); ++e) {
    const auto ue = gatherElement(mesh, e, u);
    const auto& mat = specimen_.material[static_cast<std::size_t>(e)];
    Eigen::Matrix<double, 8, 8> ke = Eigen::Matrix<double, 8, 8>::Zero();
    Eigen::Matrix<double, 8, 1> fe = Eigen::Matrix<double, 8, 1>::Zero();
    for (int q = 0; q < 4; ++q) {
      const std::size_t gp = static_cast<std::size_t>(4 * e + q);
      a.points[gp] = updatePoint(mat, state_[gp], gd.B[q] * ue);
      fe += gd.weight * gd.B[q].transpose() * a.points[gp].stress;
      if (withTangent) ke += gd.weight * gd.B[q].transpose() * a.points[gp].tangent * gd.B[q];
    }
    const auto& nodes = mesh.element(e);
    for (int i = 0; i < 8; ++i) {
      const int gi = 2 * nodes[i / 2] + i % 2;
      a.internalForce(gi) += fe(i);
      if (withTangent)
        for (int j = 0; j < 8; ++j) trip.emplace_back(gi, 2 * nodes[j / 2] + j % 2, ke(i, j));
    }
  }
  if (withTangent) {
    a.tangent.resize(mesh.dofCount(), mesh.dofCount());
    a.tangent.setFromTriplets(trip.begin(), trip.end());
  }
  return a;
}

DamageSolver::Assembly DamageSolver::solveAt(double factor) {
  ConstraintSet cs = unitConstraints_;
  cs.affine *= factor;
  cs.externalForce *= factor;
  auto fn = [&](const Vector& u, Vector& fint, Eigen::SparseMatrix<double>& K) {
    Assembly a = assemble(u, true);
    fint = std::move(a.internalForce);
    K = std::move(a.tangent);
  };
  const SolveResult sol = newtonSolve(cs, w_, fn, kMaxNewton, kTolerance);
  lastIterations_ = sol.iterations;
  lastResidual_ = sol.reference > 0.0 ? sol.residual / sol.reference : 0.0;
  w_ = sol.w;
  u_ = sol.u;
  return assemble(u_, false);
}

EnergyRecord DamageSolver::advance(double time) {
  if (time < time_) throw DomainError("DamageSolver: time must be non-decreasing");
  const Mesh& mesh = specimen_.mesh;
  const Vector uOld = u_;
  Assembly a = solveAt(interpolateProgram(specimen_.loadProgram, time));

  const GaussData gd = gaussData(mesh);
  double dissipation = 0.0;
  for (int e = 0; e < mesh.elementCount(); ++e) {
    if (!inInterior(mesh, e, specimen_.interiorMargin)) continue;
    const auto& mat = specimen_.material[static_cast<std::size_t>(e)];
    for (int q = 0; q < 4; ++q) {
      const std::size_t gp = static_cast<std::size_t>(4 * e + q);
      const PointResponse& p0 = committed_[gp];
      const PointResponse& p1 = a.points[gp];
      const double s0 = p0.state.hardeningVar, s1 = p1.state.hardeningVar;
      const double dv = 0.5 * (p0.pressure * p1.volStrain - p1.pressure * p0.volStrain) -
                        0.5 * mat.hardeningKd * (s1 * s1 - s0 * s0);
      dissipation += gd.weight * dv;
      if (!mat.isElastic()) {
        const double f = 3.0 * p1.pressure - mat.sigmaF - mat.hardeningKd * s1;
        maxYieldRatio_ = std::max(maxYieldRatio_, f / mat.sigmaF);
      }
    }
  }
  const double work = 0.5 * (internalForce_ + a.internalForce).dot(u_ - uOld);

  for (std::size_t i = 0; i < a.points.size(); ++i) state_[i] = a.points[i].state;
  internalForce_ = std::move(a.internalForce);
  committed_ = std::move(a.points);

  EnergyRecord rec = computeEnergies(specimen_, state_, u_);
  rec.stepIndex = static_cast<int>(records_.size()) + 1;
  rec.time = time;
  rec.loadFactor = interpolateProgram(specimen_.loadProgram, time);
  const EnergyRecord prev = records_.empty() ? EnergyRecord{} : records_.back();
  rec.externalWork = prev.externalWork + work;
  rec.dissipation = prev.dissipation + dissipation;
  records_.push_back(rec);
  time_ = time;
  return rec;
}

DamageRun runDamageProgram(const MesoSpecimen& specimen, int nSteps) {
  if (nSteps < 2) throw DomainError("runDamageProgram: need at least two steps");
  DamageSolver solver(specimen);
  const double t0 = specimen.loadProgram.front().time;
  const double t1 = specimen.loadProgram.back().time;
  for (int k = 1; k <= nSteps; ++k) solver.advance(t0 + (t1 - t0) * k / nSteps);
  DamageRun run;
  run.records = solver.records();
  run.finalState = solver.state();
  run.displacement = solver.displacement();
  run.maxYieldRatio = solver.maxYieldRatio();
  return run;
}

}  // namespace upscale::fem
