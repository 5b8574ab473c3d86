#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "bba/rng.hpp"
#include "bba/tensor.hpp"

using namespace bba;

namespace {

PerturbationVector random_vector(const ImageShape& s, Rng& rng) {
  PerturbationVector v(s);
  for (auto& e : v.data()) e = standard_normal(rng);
  return v;
}

ImageTensor random_image(const ImageShape& s, Rng& rng, double lo = 0.0, double hi = 1.0) {
  ImageTensor x(s);
  for (auto& e : x.data()) e = lo + (hi - lo) * uniform01(rng);
  return x;
}

}  // namespace

TEST(ImageShape, RowMajorChannelInnermost) {
  const ImageShape s{3, 4, 2};
  EXPECT_EQ(s.size(), 24u);
  EXPECT_EQ(s.index(0, 0, 1), 1u);
  EXPECT_EQ(s.index(0, 1, 0), 2u);
  EXPECT_EQ(s.index(1, 0, 0), 8u);
  EXPECT_EQ(s.index(2, 3, 1), 23u);
}

TEST(ImageShape, ZeroDimensionRejected) {
  EXPECT_THROW(ImageTensor(ImageShape{0, 3, 1}), ContractViolation);
  EXPECT_THROW(ImageTensor(ImageShape{2, 2, 1}, std::vector<double>(3)), ContractViolation);
}

TEST(L2Distance, MatchesBruteForce) {
  Rng rng = make_rng(11);
  const ImageShape s{5, 7, 3};
  for (int t = 0; t < 50; ++t) {
    const ImageTensor a = random_image(s, rng);
    const ImageTensor b = random_image(s, rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    EXPECT_NEAR(l2_distance(a, b), std::sqrt(acc), 1e-12);
  }
}

TEST(L2Distance, SimpleValues) {
  const ImageShape s{1, 2, 1};
  EXPECT_DOUBLE_EQ(l2_distance(ImageTensor(s, {0.0, 0.0}), ImageTensor(s, {0.3, 0.4})), 0.5);
  EXPECT_DOUBLE_EQ(l2_distance(ImageTensor(s, {0.2, 0.9}), ImageTensor(s, {0.2, 0.9})), 0.0);
}

TEST(L2Distance, ShapeMismatch) {
  EXPECT_THROW(l2_distance(ImageTensor(ImageShape{2, 2, 1}), ImageTensor(ImageShape{1, 4, 1})), ContractViolation);
}

TEST(ProjectOrthogonal, ParallelInputIsDegenerate) {
  Rng rng = make_rng(3);
  const PerturbationVector d = random_vector({4, 4, 1}, rng);
  EXPECT_THROW(project_orthogonal(scaled(d, -2.5), d), DegenerateSample);
}

TEST(ProjectOrthogonal, ZeroSourceIsDegenerateDirection) {
  Rng rng = make_rng(3);
  const PerturbationVector v = random_vector({4, 4, 1}, rng);
  EXPECT_THROW(project_orthogonal(v, PerturbationVector({4, 4, 1})), DegenerateDirection);
}

TEST(ProjectOrthogonal, RandomK100IsOrthogonal) {
  Rng rng = make_rng(5);
  for (int t = 0; t < 100; ++t) {
    const PerturbationVector v = random_vector({10, 10, 1}, rng);
    const PerturbationVector d = random_vector({10, 10, 1}, rng);
    const PerturbationVector p = project_orthogonal(v, d);
    EXPECT_LT(std::abs(dot(p, d)) / (norm(p) * norm(d)), 1e-10);
  }
}

TEST(Renormalize, Examples) {
  const ImageShape s{1, 3, 1};
  const PerturbationVector unit(s, {0.6, 0.0, 0.8});
  EXPECT_EQ(renormalize(unit, 1.0), unit);
  const PerturbationVector five(s, {3.0, 0.0, 4.0});
  const PerturbationVector r = renormalize(five, 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r[i], five[i] / 5.0, 1e-15);
  EXPECT_THROW(renormalize(PerturbationVector(s), 1.0), DegenerateSample);
}

TEST(Renormalize, ArbitraryTarget) {
  Rng rng = make_rng(8);
  for (int t = 0; t < 100; ++t) {
    const PerturbationVector v = random_vector({6, 6, 2}, rng);
    const PerturbationVector r = renormalize(v, 0.37);
    EXPECT_NEAR(norm(r), 0.37, 1e-9);
    EXPECT_NEAR(cosine_similarity(r, v), 1.0, 1e-9);
  }
}

TEST(ClipToValid, Examples) {
  const ImageShape s{1, 4, 1};
  const ImageTensor inside(s, {0.0, 0.25, 0.5, 1.0});
  EXPECT_EQ(clip_to_valid(inside), inside);
  const ImageTensor c = clip_to_valid(ImageTensor(s, {1.5, -0.2, 0.3, 0.7}));
  EXPECT_EQ(c[0], 1.0);
  EXPECT_EQ(c[1], 0.0);
  EXPECT_EQ(c[2], 0.3);
}

TEST(ClipToValid, RandomOutOfRange) {
  Rng rng = make_rng(9);
  const ImageTensor c = clip_to_valid(random_image({8, 8, 3}, rng, -2.0, 3.0));
  EXPECT_GE(*std::min_element(c.data().begin(), c.data().end()), 0.0);
  EXPECT_LE(*std::max_element(c.data().begin(), c.data().end()), 1.0);
}

// Randomized properties over mixed shapes.
TEST(GeometryProperties, ThousandCases) {
  Rng rng = make_rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const ImageShape s{2 + uniform_index(rng, 10), 1 + uniform_index(rng, 10), 1 + uniform_index(rng, 3)};
    const PerturbationVector v = random_vector(s, rng);
    const PerturbationVector d = random_vector(s, rng);
    const PerturbationVector p = project_orthogonal(v, d);
    ASSERT_LE(std::abs(dot(p, d)), 1e-6 * norm(p) * norm(d));
    const PerturbationVector pp = project_orthogonal(p, d);
    for (std::size_t i = 0; i < p.size(); ++i) ASSERT_NEAR(pp[i], p[i], 1e-10);
    ASSERT_NEAR(norm(renormalize(p, 1.0)), 1.0, 1e-9);
    ASSERT_NEAR(cosine_similarity(renormalize(v, 2.0), v), 1.0, 1e-9);
    const ImageTensor a = random_image(s, rng);
    const ImageTensor b = random_image(s, rng);
    const ImageTensor c = random_image(s, rng);
    ASSERT_LE(l2_distance(a, c), l2_distance(a, b) + l2_distance(b, c) + 1e-9);
  }
}

TEST(Rng, DerivedSeedsDifferAndRepeat) {
  EXPECT_EQ(derive_seed(5, 1), derive_seed(5, 1));
  EXPECT_NE(derive_seed(5, 1), derive_seed(5, 2));
  EXPECT_NE(derive_seed(5, 1), derive_seed(6, 1));
  Rng rng = make_rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(uniform_index(rng, 7), 7u);
  }
}
