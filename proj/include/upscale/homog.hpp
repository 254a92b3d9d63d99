#pragma once

#include "upscale/fem.hpp"
#include "upscale/randfield.hpp"

#include <vector>

namespace upscale::homog {

/// Isotropic phase: K is the in-plane (area) bulk modulus, G the shear modulus.
struct Phase {
  double K = 1.0;
  double G = 1.0;
};

struct ModulusPair {
  double K = 0.0;
  double G = 0.0;
};

struct BoundsReport {
  double voigtK = 0.0, voigtG = 0.0;
  double reussK = 0.0, reussG = 0.0;
  double hsLowerK = 0.0, hsUpperK = 0.0;
  double hsLowerG = 0.0, hsUpperG = 0.0;
  double apparentK = 0.0, apparentG = 0.0;  // zero until set
};

/// Arithmetic (first) and harmonic (second) volume averages.
std::pair<ModulusPair, ModulusPair> voigtReuss(const std::vector<Phase>& phases,
                                               const std::vector<double>& fractions);

/// Two-phase plane Hashin-Shtrikman bounds, (lower, upper). Phases may be
/// given in either order but must be well ordered (stiffer in both moduli).
std::pair<ModulusPair, ModulusPair> hashinShtrikman2D(const std::vector<Phase>& phases,
                                                      const std::vector<double>& fractions);

BoundsReport bounds(const std::vector<Phase>& phases, const std::vector<double>& fractions);

/// Apparent elastic moduli of an elastic specimen by energy matching:
/// equibiaxial loading for K, pure shear for G. The specimen's BC kind
/// selects strain (LD, PR) or stress (UT) control.
ModulusPair deterministicHomogenize(const fem::MesoSpecimen& specimen, double magnitude = 0.01);

/// Elastic two-phase specimen on an n x n grid: elements whose midpoint lies
/// inside an inclusion get the inclusion phase.
fem::MesoSpecimen twoPhaseSpecimen(const randfield::InclusionLayout& layout, int n, const Phase& matrix,
                                   const Phase& inclusion, fem::BcKind kind);

/// Area fraction of the inclusion phase actually resolved by the grid.
double resolvedFraction(const fem::MesoSpecimen& specimen, const Phase& inclusion);

}  // namespace upscale::homog
