#include "latro/serialize.hpp"
#include "latro/splines.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace latro;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

SplinePatch quarter_annulus() {
  const double h = std::sqrt(0.5);
  std::vector<Vec> pts;
  std::vector<double> w;
  for (double r : {1.0, 2.0}) {
    pts.push_back(vec2(r, 0.0));
    pts.push_back(vec2(r, r));
    pts.push_back(vec2(0.0, r));
    w.insert(w.end(), {1.0, h, 1.0});
  }
  return SplinePatch({KnotVector::bezier(2), KnotVector::bezier(1)}, pts, w);
}

Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& t, double h) {
  const Vec f0 = f(t);
  Mat J(f0.size(), t.size());
  for (int j = 0; j < t.size(); ++j) {
    Vec tp = t, tm = t;
    tp[j] += h;
    tm[j] -= h;
    J.col(j) = (f(tp) - f(tm)) / (2 * h);
  }
  return J;
}

}  // namespace

TEST(KnotVector, RejectsInvalid) {
  EXPECT_THROW(KnotVector(1, {0, 0.5, 1, 1}), DomainError);
  EXPECT_THROW(KnotVector(1, {0, 0, 0.7, 0.5, 1, 1}), DomainError);
  EXPECT_THROW(KnotVector(2, {0, 0, 0, 0.5, 0.5, 0.5, 1, 1, 1}), DomainError);
  EXPECT_NO_THROW(KnotVector(2, {0, 0, 0, 0.5, 0.5, 1, 1, 1}));
}

TEST(Basis, LinearHat) {
  const auto b = eval_basis(KnotVector(1, {0, 0, 1, 1}), 0.25, 0);
  EXPECT_EQ(b.first, 0);
  EXPECT_DOUBLE_EQ(b(0, 0), 0.75);
  EXPECT_DOUBLE_EQ(b(0, 1), 0.25);
}

TEST(Basis, QuadraticBernsteinMidpoint) {
  const auto b = eval_basis(KnotVector::bezier(2), 0.5, 0);
  EXPECT_DOUBLE_EQ(b(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(b(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(b(0, 2), 0.25);
}

TEST(Basis, OutsideDomainThrows) {
  const auto kv = KnotVector::bezier(2);
  EXPECT_THROW(eval_basis(kv, 1.01, 0), DomainError);
  EXPECT_THROW(eval_basis(kv, -0.2, 1), DomainError);
}

TEST(Basis, CubicDerivativesMatchFiniteDifferences) {
  const KnotVector kv(3, {0, 0, 0, 0, 0.5, 1, 1, 1, 1});
  const double xi = 0.3, h = 1e-7;
  const auto b = eval_basis(kv, xi, 1);
  const auto bp = eval_basis(kv, xi + h, 0);
  const auto bm = eval_basis(kv, xi - h, 0);
  double sum = 0.0;
  for (int j = 0; j <= 3; ++j) {
    EXPECT_NEAR(b(1, j), (bp(0, j) - bm(0, j)) / (2 * h), 1e-6);
    sum += b(1, j);
  }
  EXPECT_NEAR(sum, 0.0, 1e-12);
}

TEST(Basis, SecondDerivativesMatchFiniteDifferences) {
  const KnotVector kv(3, {0, 0, 0, 0, 0.25, 0.6, 1, 1, 1, 1});
  const double xi = 0.41, h = 1e-6;
  const auto b = eval_basis(kv, xi, 2);
  const auto bp = eval_basis(kv, xi + h, 1);
  const auto bm = eval_basis(kv, xi - h, 1);
  for (int j = 0; j <= 3; ++j) EXPECT_NEAR(b(2, j), (bp(1, j) - bm(1, j)) / (2 * h), 1e-5);
}

TEST(Basis, PartitionOfUnityAndDerivativeSum) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<KnotVector> kvs = {
      KnotVector::open_uniform(1, 5), KnotVector::open_uniform(2, 7),
      KnotVector::open_uniform(3, 4), KnotVector(2, {0, 0, 0, 0.3, 0.3, 0.8, 1, 1, 1})};
  for (const auto& kv : kvs) {
    for (int i = 0; i < 1000; ++i) {
      const auto b = eval_basis(kv, u(rng), 1);
      double s0 = 0, s1 = 0;
      for (int j = 0; j <= kv.degree(); ++j) {
        s0 += b(0, j);
        s1 += b(1, j);
      }
      EXPECT_NEAR(s0, 1.0, 1e-13);
      EXPECT_NEAR(s1, 0.0, 1e-10);
    }
  }
}

TEST(Basis, EndpointSpans) {
  const auto kv = KnotVector::open_uniform(2, 3);
  EXPECT_EQ(kv.num_basis(), 5);
  EXPECT_EQ(kv.num_elements(), 3);
  const auto b = eval_basis(kv, 1.0, 0);
  EXPECT_EQ(b.first, 2);
  EXPECT_DOUBLE_EQ(b(0, 2), 1.0);
}

TEST(Patch, IdentityAtGreville) {
  const auto k0 = KnotVector::open_uniform(2, 3);
  const auto k1 = KnotVector::open_uniform(3, 2);
  std::vector<Vec> pts;
  for (int j = 0; j < k1.num_basis(); ++j)
    for (int i = 0; i < k0.num_basis(); ++i) pts.push_back(vec2(k0.greville(i), k1.greville(j)));
  const SplinePatch patch({k0, k1}, pts);
  const auto e = eval_patch(patch, vec2(0.3, 0.7));
  EXPECT_NEAR(e.x[0], 0.3, 1e-14);
  EXPECT_NEAR(e.x[1], 0.7, 1e-14);
  EXPECT_NEAR((e.jacobian - Mat::Identity(2, 2)).norm(), 0.0, 1e-13);
}

TEST(Patch, AffineJacobian) {
  const auto kv = KnotVector::bezier(1);
  const SplinePatch patch({kv, kv}, {vec2(0, 0), vec2(2, 0), vec2(0, 1), vec2(2, 1)});
  for (double a : {0.0, 0.4, 1.0}) {
    const auto e = eval_patch(patch, vec2(a, 1.0 - a));
    EXPECT_NEAR(e.jacobian(0, 0), 2.0, 1e-15);
    EXPECT_NEAR(e.jacobian(1, 1), 1.0, 1e-15);
    EXPECT_NEAR(e.jacobian(0, 1), 0.0, 1e-15);
    EXPECT_NEAR(e.jacobian(1, 0), 0.0, 1e-15);
  }
}

TEST(Patch, QuarterAnnulusIsExactAndJacobianMatchesFd) {
  const auto patch = quarter_annulus();
  ASSERT_TRUE(patch.rational());
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int i = 0; i < 20; ++i) {
    const Vec t = (i == 0) ? vec2(0.5, 0.5) : vec2(u(rng), u(rng));
    const auto e = eval_patch(patch, t);
    EXPECT_NEAR(e.x.norm(), 1.0 + t[1], 1e-13);
    const Mat fd = fd_jacobian([&](const Vec& q) { return eval_patch(patch, q).x; }, t, 1e-6);
    EXPECT_LE((fd - e.jacobian).norm() / e.jacobian.norm(), 1e-6);
  }
}

TEST(Patch, UnitWeightsMatchPolynomial) {
  const auto kv = KnotVector::open_uniform(2, 2);
  std::vector<Vec> pts;
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 16; ++i) pts.push_back(vec2(u(rng), u(rng)));
  const SplinePatch poly({kv, kv}, pts);
  SplinePatch rat({kv, kv}, pts, std::vector<double>(16, 1.0));
  PatchBasisEval a, b;
  for (int i = 0; i < 50; ++i) {
    const Vec t = vec2(u(rng), u(rng));
    eval_patch_basis(poly, t, a);
    eval_patch_basis(rat, t, b);
    for (std::size_t k = 0; k < a.values.size(); ++k) EXPECT_NEAR(a.values[k], b.values[k], 1e-15);
  }
}

TEST(Patch, RationalPartitionOfUnity) {
  const auto patch = quarter_annulus();
  PatchBasisEval be;
  eval_patch_basis(patch, vec2(0.37, 0.81), be);
  double s = 0;
  for (double v : be.values) s += v;
  EXPECT_NEAR(s, 1.0, 1e-14);
  EXPECT_NEAR(be.grad.col(0).sum(), 0.0, 1e-13);
  EXPECT_NEAR(be.grad.col(1).sum(), 0.0, 1e-13);
}

TEST(Patch, RejectsBadInput) {
  const auto kv = KnotVector::bezier(1);
  EXPECT_THROW(SplinePatch({kv, kv}, {vec2(0, 0)}), DomainError);
  EXPECT_THROW(SplinePatch({kv}, {vec2(0, 0), vec2(1, 0)}, {1.0, 0.0}), DomainError);
}

TEST(Composition, IdentityMacroReproducesMicro) {
  const BezierMacroElement id({1, 1}, {vec2(0, 0), vec2(1, 0), vec2(0, 1), vec2(1, 1)});
  const auto kv = KnotVector::bezier(2);
  std::vector<Vec> pts;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) pts.push_back(vec2(0.5 * i, 0.5 * j + 0.05 * i * (2 - i)));
  const SplinePatch micro({kv, kv}, pts);
  const Vec t = vec2(0.21, 0.66);
  const auto a = eval_composed(id, micro, t);
  const auto b = eval_patch(micro, t);
  EXPECT_NEAR((a.x - b.x).norm(), 0.0, 1e-15);
  EXPECT_NEAR((a.jacobian - b.jacobian).norm(), 0.0, 1e-14);
}

TEST(Composition, ScaledMacro) {
  const BezierMacroElement scale({1, 1}, {vec2(0, 0), vec2(2, 0), vec2(0, 2), vec2(2, 2)});
  const auto kv = KnotVector::bezier(1);
  const SplinePatch micro({kv, kv}, {vec2(0, 0), vec2(1, 0), vec2(0, 1), vec2(1, 1)});
  const auto e = eval_composed(scale, micro, vec2(0.4, 0.9));
  EXPECT_NEAR((e.jacobian - 2.0 * Mat::Identity(2, 2)).norm(), 0.0, 1e-14);
}

TEST(Composition, MicroOutsideMacroDomainThrows) {
  const BezierMacroElement id({1, 1}, {vec2(0, 0), vec2(1, 0), vec2(0, 1), vec2(1, 1)});
  const auto kv = KnotVector::bezier(1);
  const SplinePatch micro({kv, kv}, {vec2(0, 0), vec2(1.1, 0), vec2(0, 1), vec2(1.1, 1)});
  EXPECT_THROW(eval_composed(id, micro, vec2(1.0, 0.5)), GeometryError);
  EXPECT_NO_THROW(eval_composed(id, micro, vec2(0.5, 0.5)));
}

TEST(Serialize, PatchRoundTrip) {
  const auto patch = quarter_annulus();
  const auto j = patch_to_json(patch);
  EXPECT_TRUE(j.contains("degree") && j.contains("knots") && j.contains("points") &&
              j.contains("weights"));
  const auto back = patch_from_json(j);
  const Vec t = vec2(0.3, 0.6);
  EXPECT_EQ((eval_patch(back, t).x - eval_patch(patch, t).x).norm(), 0.0);
  EXPECT_THROW(patch_from_json(nlohmann::json::object()), GeometryError);
}
