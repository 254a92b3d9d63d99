#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "upscale/homog.hpp"

using namespace upscale;
using namespace upscale::homog;

namespace {

const Phase kMatrix{4.0, 1.0};
const Phase kInclusion{40.0, 10.0};
const std::vector<double> kFractions{0.6, 0.4};

}  // namespace

TEST_CASE("Voigt and Reuss averages") {
  const auto [v, r] = voigtReuss({kMatrix, kInclusion}, kFractions);
  CHECK(v.K == doctest::Approx(18.4).epsilon(1e-14));
  CHECK(r.K == doctest::Approx(6.25).epsilon(1e-14));
  CHECK(v.G == doctest::Approx(4.6).epsilon(1e-14));
  CHECK(r.G == doctest::Approx(1.5625).epsilon(1e-14));

  const auto [v1, r1] = voigtReuss({kMatrix, kMatrix}, kFractions);
  CHECK(v1.K == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(r1.G == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(voigtReuss({kMatrix, kInclusion}, {0.6, 0.5}), DomainError);
  CHECK_THROWS_AS(voigtReuss({kMatrix}, kFractions), DimensionMismatch);
}

TEST_CASE("Hashin-Shtrikman bounds") {
  const auto [lo, hi] = hashinShtrikman2D({kMatrix, kInclusion}, kFractions);
  CHECK(lo.K > 6.25);
  CHECK(hi.K < 18.4);
  CHECK(lo.K < hi.K);
  CHECK(lo.G > 1.5625);
  CHECK(hi.G < 4.6);
  CHECK(lo.G < hi.G);

  // Matrix-based lower bound written out directly.
  const double kl = 4.0 + 0.4 / (1.0 / 36.0 + 0.6 / 5.0);
  const double gl = 1.0 + 0.4 / (1.0 / 9.0 + 0.6 * 6.0 / (2.0 * 5.0));
  CHECK(lo.K == doctest::Approx(kl).epsilon(1e-13));
  CHECK(lo.G == doctest::Approx(gl).epsilon(1e-13));

  const auto [lo2, hi2] = hashinShtrikman2D({kInclusion, kMatrix}, {0.4, 0.6});
  CHECK(lo2.K == lo.K);
  CHECK(hi2.G == hi.G);

  const auto [lo3, hi3] = hashinShtrikman2D({kMatrix, kMatrix}, kFractions);
  CHECK(lo3.K == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(hi3.G == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_AS(hashinShtrikman2D({{4.0, 10.0}, {40.0, 1.0}}, kFractions), NotWellOrdered);
}

TEST_CASE("homogeneous specimen recovers its moduli") {
  for (auto kind : {fem::BcKind::LinearDisplacement, fem::BcKind::Periodic, fem::BcKind::UniformTension}) {
    const auto s = fem::MesoSpecimen::homogeneous(4, 4, fem::MaterialParams::elastic(4.0, 1.0), kind);
    const auto m = deterministicHomogenize(s);
    CHECK(m.K == doctest::Approx(4.0).epsilon(1e-8));
    CHECK(m.G == doctest::Approx(1.0).epsilon(1e-8));
  }
  auto s = fem::MesoSpecimen::homogeneous(2, 2, fem::MaterialParams{4.0, 1.0, 1.0, 1.0}, fem::BcKind::Periodic);
  CHECK_THROWS_AS(deterministicHomogenize(s), DomainError);
}

TEST_CASE("inclusion specimen lies within the bounds") {
  const auto layout = randfield::placeInclusions(64, 0.4, 3);
  const auto pr = twoPhaseSpecimen(layout, 96, kMatrix, kInclusion, fem::BcKind::Periodic);
  const auto ld = twoPhaseSpecimen(layout, 96, kMatrix, kInclusion, fem::BcKind::LinearDisplacement);
  CHECK(std::abs(resolvedFraction(pr, kInclusion) - 0.4) < 0.02);
  const auto b = bounds({kMatrix, kInclusion}, kFractions);
  const auto mp = deterministicHomogenize(pr);
  const auto ml = deterministicHomogenize(ld);
  CHECK(mp.G >= b.hsLowerG);
  CHECK(mp.G <= b.hsUpperG);
  CHECK(mp.K >= b.hsLowerK);
  CHECK(mp.K <= b.hsUpperK);
  CHECK(ml.G >= mp.G);
  CHECK(ml.K >= mp.K);
  CHECK(b.reussK <= b.hsLowerK);
  CHECK(b.hsUpperK <= b.voigtK);
}
