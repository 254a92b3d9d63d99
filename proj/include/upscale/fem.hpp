#pragma once

#include "upscale/core.hpp"

#include <Eigen/Sparse>

#include <array>
#include <limits>
#include <cmath>
#include <string>
#include <vector>

namespace upscale::fem {

/// Macro/meso material parameters.
///
/// `bulkK` is the plane-strain (in-plane) bulk modulus k; the kinematics are
/// plane strain with the 3D isotropic law, so the three-dimensional bulk
/// modulus is k - G/3. An infinite `sigmaF` marks a purely elastic material.
struct MaterialParams {
  double bulkK = 1.0;
  double shearG = 1.0;
  double sigmaF = std::numeric_limits<double>::infinity();
  double hardeningKd = 1.0;

  static constexpr int kCount = 4;

  double bulk3D() const { return bulkK - shearG / 3.0; }
  bool isElastic() const { return !std::isfinite(sigmaF); }

  /// Componentwise natural log, ordered (K, G, sigmaF, Kd).
  Eigen::Vector4d logParams() const;
  static MaterialParams fromLog(const Eigen::Vector4d& q);
  Eigen::Vector4d asVector() const { return {bulkK, shearG, sigmaF, hardeningKd}; }
  static MaterialParams fromVector(const Eigen::Vector4d& v) { return {v(0), v(1), v(2), v(3)}; }

  /// Throws DomainError unless all parameters are positive and k > G/3.
  void validate() const;

  static MaterialParams elastic(double bulkK, double shearG) {
    return {bulkK, shearG, std::numeric_limits<double>::infinity(), 1.0};
  }
};

enum class BcKind { LinearDisplacement, Periodic, UniformTension };

const char* toString(BcKind kind);
BcKind bcKindFromString(const std::string& name);

struct LoadPoint {
  double time = 0.0;
  double factor = 0.0;
};

/// Biaxial-compression load program (time, proportional factor).
std::vector<LoadPoint> defaultDamageProgram();

/// Structured quadrilateral grid on the unit square.
class Mesh {
 public:
  Mesh(int nElemX, int nElemY);

  int nElemX() const { return nx_; }
  int nElemY() const { return ny_; }
  int nodeCount() const { return (nx_ + 1) * (ny_ + 1); }
  int elementCount() const { return nx_ * ny_; }
  int dofCount() const { return 2 * nodeCount(); }
  int nodeId(int i, int j) const { return j * (nx_ + 1) + i; }
  const Vector2& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const std::array<int, 4>& element(int e) const { return elements_[static_cast<std::size_t>(e)]; }
  Vector2 midpoint(int e) const;
  std::vector<Vector2> midpoints() const;
  bool onBoundary(int id) const;
  double elementLength() const { return 1.0 / nx_; }

 private:
  int nx_, ny_;
  std::vector<Vector2> nodes_;
  std::vector<std::array<int, 4>> elements_;
};

struct MesoSpecimen {
  Mesh mesh{1, 1};
  std::vector<MaterialParams> material;  // one per element
  BcKind bcKind = BcKind::LinearDisplacement;
  std::vector<LoadPoint> loadProgram{{0.0, 0.0}, {1.0, 1.0}};
  /// Macro strain (LD, PR) or macro stress (UT) reached at load factor 1.
  Matrix2 macroTensor = Matrix2::Zero();
  /// Optional boundary-layer exclusion: energies are integrated only over
  /// elements whose midpoint lies at least this far from the boundary.
  double interiorMargin = 0.0;

  void validate() const;
  static MesoSpecimen homogeneous(int nx, int ny, const MaterialParams& m, BcKind kind);
};

struct DamagePointState {
  double damageStrainVol = 0.0;  // trace of the volumetric damage strain (<= 0)
  double hardeningVar = 0.0;     // varsigma
  double damageCompliance = 0.0; // d, with damage volume strain = d * pressure
};
using DamageState = std::vector<DamagePointState>;  // 4 Gauss points per element

struct EnergyRecord {
  int stepIndex = 0;
  double time = 0.0;
  double loadFactor = 0.0;
  double elasticE = 0.0;
  double damageE = 0.0;
  double hardeningE = 0.0;
  double externalWork = 0.0;  // cumulative
  double dissipation = 0.0;   // cumulative
};

/// Affine displacement parametrization u = affine + T w plus nodal loads.
struct ConstraintSet {
  Eigen::SparseMatrix<double> T;
  Vector affine;
  Vector externalForce;
  BcKind kind = BcKind::LinearDisplacement;
};

/// LD: u = F x on the boundary. PR: periodic fluctuation, corners anchored to
/// F x. UT: tractions sigma n on the boundary with rigid modes pinned at the
/// (0,0) corner (x,y) and the (1,0) corner (y).
ConstraintSet applyBoundaryCondition(BcKind kind, const Matrix2& macroStrainOrStress, const Mesh& mesh);

/// Constitutive point update result. Strain/stress use (xx, yy, engineering xy).
struct PointResponse {
  Eigen::Vector3d stress;
  Eigen::Matrix3d tangent;
  DamagePointState state;
  double pressure = 0.0;   // -tr(sigma)/3
  double volStrain = 0.0;  // -tr(eps)
  double multiplier = 0.0; // damage multiplier increment
};

/// Backward-Euler damage return mapping starting from `committed`.
PointResponse updatePoint(const MaterialParams& m, const DamagePointState& committed,
                          const Eigen::Vector3d& strain);

/// Closed-form consistency multiplier for a trial -tr(sigma) in the loading
/// branch; zero when the trial state is admissible.
double damageMultiplier(const MaterialParams& m, const DamagePointState& committed,
                        double trialMinusTrace);

/// Energy densities of one point: (elastic, damage, hardening).
Eigen::Vector3d energyDensities(const MaterialParams& m, const PointResponse& r,
                                const Eigen::Vector3d& strain);

/// Energies of a converged state.
EnergyRecord computeEnergies(const MesoSpecimen& specimen, const DamageState& state,
                             const Vector& displacement);

struct ElasticSolution {
  Vector displacement;
  EnergyRecord energies;
  /// Stress at every Gauss point (4 per element, rows xx, yy, xy).
  Matrix gaussStress;
  double residualNorm = 0.0;
  double loadNorm = 0.0;
};

/// Global elastic stiffness with every Gauss point at zero damage.
Eigen::SparseMatrix<double> assembleElasticStiffness(const MesoSpecimen& specimen);

/// Linear elastic solve at macro strain (or macro stress for UT).
ElasticSolution assembleAndSolveElastic(const MesoSpecimen& specimen, const Matrix2& macroTensor);

/// Incremental damage solver. One instance owns its state and is confined to
/// one thread.
class DamageSolver {
 public:
  explicit DamageSolver(MesoSpecimen specimen);

  /// Advance to the given time on the load program.
  EnergyRecord advance(double time);

  const DamageState& state() const { return state_; }
  const Vector& displacement() const { return u_; }
  const std::vector<EnergyRecord>& records() const { return records_; }
  const MesoSpecimen& specimen() const { return specimen_; }
  /// Max over steps of the post-return yield function f_d / sigma_f.
  double maxYieldRatio() const { return maxYieldRatio_; }
  int lastIterations() const { return lastIterations_; }
  double lastResidual() const { return lastResidual_; }

  static constexpr int kMaxNewton = 50;
  static constexpr double kTolerance = 1e-10;

 private:
  struct Assembly {
    Vector internalForce;
    Eigen::SparseMatrix<double> tangent;
    std::vector<PointResponse> points;
  };
  Assembly assemble(const Vector& u, bool withTangent) const;
  Assembly solveAt(double factor);

  MesoSpecimen specimen_;
  ConstraintSet unitConstraints_;
  DamageState state_;
  Vector u_;
  Vector w_;
  Vector internalForce_;
  std::vector<PointResponse> committed_;
  std::vector<EnergyRecord> records_;
  double time_ = 0.0;
  double maxYieldRatio_ = -std::numeric_limits<double>::infinity();
  int lastIterations_ = 0;
  double lastResidual_ = 0.0;
};

struct DamageRun {
  std::vector<EnergyRecord> records;
  DamageState finalState;
  Vector displacement;
  double maxYieldRatio = 0.0;
};

/// Runs the specimen's load program in `nSteps` equidistant time steps.
DamageRun runDamageProgram(const MesoSpecimen& specimen, int nSteps);

/// Interpolated load factor of a program at time t.
double interpolateProgram(const std::vector<LoadPoint>& program, double t);

}  // namespace upscale::fem
