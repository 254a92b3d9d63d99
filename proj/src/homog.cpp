#include "upscale/homog.hpp"

#include <cmath>
#include <numeric>

namespace upscale::homog {

namespace {

void checkInput(const std::vector<Phase>& phases, const std::vector<double>& fractions) {
  if (phases.empty() || phases.size() != fractions.size())
    throw DimensionMismatch("homog: one fraction per phase required");
  for (std::size_t i = 0; i < phases.size(); ++i) {
    if (!(phases[i].K > 0.0 && phases[i].G > 0.0)) throw DomainError("homog: moduli must be positive");
    if (!(fractions[i] > 0.0)) throw DomainError("homog: fractions must be positive");
  }
  const double s = std::accumulate(fractions.begin(), fractions.end(), 0.0);
  if (std::abs(s - 1.0) > 1e-12) throw DomainError("homog: fractions must sum to one");
}

// Bound with phase r as the reference medium and o as the other phase.
ModulusPair hsBound(const Phase& r, double fr, const Phase& o, double fo) {
  const double dk = o.K - r.K, dg = o.G - r.G;
  const double kRef = r.K + r.G;
  const double gRef = 2.0 * r.G * (r.K + r.G) / (r.K + 2.0 * r.G);
  return {r.K + fo * dk * kRef / (kRef + fr * dk), r.G + fo * dg * gRef / (gRef + fr * dg)};
}

}  // namespace

std::pair<ModulusPair, ModulusPair> voigtReuss(const std::vector<Phase>& phases,
                                               const std::vector<double>& fractions) {
  checkInput(phases, fractions);
  ModulusPair v, r;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    v.K += fractions[i] * phases[i].K;
    v.G += fractions[i] * phases[i].G;
    r.K += fractions[i] / phases[i].K;
    r.G += fractions[i] / phases[i].G;
  }
  r.K = 1.0 / r.K;
  r.G = 1.0 / r.G;
  return {v, r};
}

std::pair<ModulusPair, ModulusPair> hashinShtrikman2D(const std::vector<Phase>& phases,
                                                      const std::vector<double>& fractions) {
  checkInput(phases, fractions);
  if (phases.size() != 2) throw DimensionMismatch("hashinShtrikman2D: exactly two phases");
  std::size_t soft = 0, hard = 1;
  if (phases[1].K < phases[0].K || (phases[1].K == phases[0].K && phases[1].G < phases[0].G))
    std::swap(soft, hard);
  if (phases[soft].G > phases[hard].G) throw NotWellOrdered("hashinShtrikman2D: phases are not well ordered");
  return {hsBound(phases[soft], fractions[soft], phases[hard], fractions[hard]),
          hsBound(phases[hard], fractions[hard], phases[soft], fractions[soft])};
}

BoundsReport bounds(const std::vector<Phase>& phases, const std::vector<double>& fractions) {
  const auto [v, r] = voigtReuss(phases, fractions);
  const auto [lo, hi] = hashinShtrikman2D(phases, fractions);
  BoundsReport b;
  b.voigtK = v.K;
  b.voigtG = v.G;
  b.reussK = r.K;
  b.reussG = r.G;
  b.hsLowerK = lo.K;
  b.hsLowerG = lo.G;
  b.hsUpperK = hi.K;
  b.hsUpperG = hi.G;
  return b;
}

ModulusPair deterministicHomogenize(const fem::MesoSpecimen& specimen, double magnitude) {
  for (const auto& m : specimen.material)
    if (!m.isElastic()) throw DomainError("deterministicHomogenize: specimen must be elastic");
  if (!(magnitude > 0.0)) throw DomainError("deterministicHomogenize: magnitude must be positive");
  fem::MesoSpecimen s = specimen;
  s.interiorMargin = 0.0;
  const double a = magnitude;
  const Matrix2 bi = a * Matrix2::Identity();
  Matrix2 shear;
  shear << 0.0, 0.5 * a, 0.5 * a, 0.0;
  const double eb = fem::assembleAndSolveElastic(s, bi).energies.elasticE;
  if (s.bcKind == fem::BcKind::UniformTension) shear *= 2.0;
  const double es = fem::assembleAndSolveElastic(s, shear).energies.elasticE;
  if (!(eb > 0.0 && es > 0.0)) throw NonConvergence("deterministicHomogenize: non-positive energy");
  if (s.bcKind == fem::BcKind::UniformTension) return {a * a / (2.0 * eb), a * a / (2.0 * es)};
  return {eb / (2.0 * a * a), 2.0 * es / (a * a)};
}

fem::MesoSpecimen twoPhaseSpecimen(const randfield::InclusionLayout& layout, int n, const Phase& matrix,
                                   const Phase& inclusion, fem::BcKind kind) {
  fem::MesoSpecimen s;
  s.mesh = fem::Mesh(n, n);
  s.bcKind = kind;
  s.material.reserve(static_cast<std::size_t>(s.mesh.elementCount()));
  for (int e = 0; e < s.mesh.elementCount(); ++e) {
    const Phase& p = layout.contains(s.mesh.midpoint(e)) ? inclusion : matrix;
    s.material.push_back(fem::MaterialParams::elastic(p.K, p.G));
  }
  return s;
}

double resolvedFraction(const fem::MesoSpecimen& specimen, const Phase& inclusion) {
  double n = 0.0;
  for (const auto& m : specimen.material)
    if (m.bulkK == inclusion.K && m.shearG == inclusion.G) n += 1.0;
  return n / static_cast<double>(specimen.material.size());
}

}  // namespace upscale::homog
