#include <gtest/gtest.h>

#include <cmath>

#include "rpalab/fuzzy.hpp"
#include "test_util.hpp"

using namespace rpalab;
using rpalab::testing::fd_max_rel_error;
using rpalab::testing::random_tensor;

namespace {

FuzzyParams identity_params(std::size_t d, std::size_t r) {
  Rng rng(1);
  FuzzyParams p("mem", d, r, rng);
  p.proj.weight.value.fill(0.0);
  for (std::size_t i = 0; i < d; ++i) p.proj.weight.value.at(i, i) = 1.0;
  p.proj.bias->value.fill(0.0);
  return p;
}

void expect_simplex_rows(const Tensor& mu, double tol) {
  const std::size_t r = mu.shape().back();
  for (std::size_t i = 0; i < mu.numel() / r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < r; ++j) {
      EXPECT_GE(mu[i * r + j], 0.0);
      s += mu[i * r + j];
    }
    EXPECT_NEAR(s, 1.0, tol);
  }
}

}  // namespace

TEST(Memberships, IdenticalCentersGiveUniform) {
  Rng rng(3);
  FuzzyParams p("mem", 5, 4, rng);
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t d = 0; d < 5; ++d) p.centers.value.at(r, d) = p.centers.value.at(0, d);
  const Tensor mu = memberships(random_tensor(rng, {2, 3, 5}), p);
  for (double v : mu.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Memberships, SingleRegimeIsOne) {
  Rng rng(4);
  FuzzyParams p("mem", 3, 1, rng);
  const Tensor mu = memberships(random_tensor(rng, {2, 4, 3}, -5, 5), p);
  for (double v : mu.data()) EXPECT_EQ(v, 1.0);
}

TEST(Memberships, ClosedFormTwoRegimes) {
  FuzzyParams p = identity_params(1, 2);
  p.centers.value = Tensor({2, 1}, {0.0, 1.0});
  const Tensor mu = memberships(Tensor({1, 1, 1}, 0.0), p);
  // logits (0, -0.5): first weight is the logistic of 0.5
  const double expect = 1.0 / (1.0 + std::exp(-0.5));
  EXPECT_NEAR(mu[0], expect, 1e-12);
  EXPECT_NEAR(mu[1], 1.0 - expect, 1e-12);
  EXPECT_NEAR(mu[0], 0.6225, 1e-4);
  EXPECT_NEAR(mu[1], 0.3775, 1e-4);
}

TEST(Memberships, ZeroRegimesRejected) {
  Rng rng(0);
  EXPECT_THROW(FuzzyParams("mem", 3, 0, rng), std::invalid_argument);
}

TEST(Memberships, HugeInputsStayOnSimplex) {
  Rng rng(5);
  FuzzyParams p("mem", 4, 3, rng);
  for (double scale : {1.0, 1e3, 1e6}) {
    Tensor h = random_tensor(rng, {2, 5, 4});
    for (auto& v : h.data()) v *= scale;
    const Tensor mu = memberships(h, p);
    EXPECT_TRUE(mu.all_finite());
    expect_simplex_rows(mu, 1e-9);
  }
}

TEST(Memberships, PrecisionClampApplies) {
  FuzzyParams p = identity_params(1, 2);
  p.centers.value = Tensor({2, 1}, {0.0, 1.0});
  p.log_sigma.value = Tensor({2}, {-20.0, -20.0});  // exp(40) clamps to 1e3
  const Tensor mu = memberships(Tensor({1, 1, 1}, 0.01), p);
  // logits: -0.5*1e-4*1e3 = -0.05 and -0.5*0.9801*1e3 clamps to -30
  const double a = std::exp(-0.05), b = std::exp(-30.0);
  EXPECT_NEAR(mu[0], a / (a + b), 1e-14);
}

TEST(Memberships, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  const std::vector<Tensor> in = {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {4, 4}, -0.5, 0.5),
                                  random_tensor(rng, {4}, -0.2, 0.2), random_tensor(rng, {3, 4}),
                                  random_tensor(rng, {3}, -0.3, 0.3)};
  const double err =
      fd_max_rel_error([](auto& v) { return memberships(v[0], v[1], v[2], v[3], v[4]); }, in);
  EXPECT_LT(err, 1e-6);
}

TEST(MembershipEntropy, KnownValues) {
  EXPECT_NEAR(membership_entropy(Tensor({1, 1, 4}, 0.25)), std::log(4.0), 1e-15);
  EXPECT_NEAR(membership_entropy(Tensor({1, 2, 3}, {1, 0, 0, 0, 0, 1})), 0.0, 1e-7);
  const double h = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
  EXPECT_NEAR(membership_entropy(Tensor({1, 1, 2}, {0.9, 0.1})), h, 1e-15);
  EXPECT_NEAR(h, 0.3251, 1e-4);
}

TEST(MembershipEntropy, BoundsAndPermutationInvariance) {
  Rng rng(8);
  Tensor mu({2, 5, 4});
  for (std::size_t i = 0; i < 10; ++i) {
    std::vector<double> w(4);
    double s = 0;
    for (auto& x : w) s += (x = rng.uniform());
    for (std::size_t r = 0; r < 4; ++r) mu[i * 4 + r] = w[r] / s;
  }
  Tensor perm = mu;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t r = 0; r < 4; ++r) perm[i * 4 + r] = mu[i * 4 + (r + 1) % 4];
  const double h = membership_entropy(mu);
  EXPECT_GE(h, 0.0);
  EXPECT_LE(h, std::log(4.0));
  EXPECT_NEAR(membership_entropy(perm), h, 1e-14);
  Tape tape;
  EXPECT_NEAR(membership_entropy(tape.constant(mu)).value().item(), h, 1e-14);
}

TEST(MembershipEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  const Tensor mu = random_tensor(rng, {2, 3, 3}, 0.05, 0.9);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return membership_entropy(v[0]); }, {mu}), 1e-6);
}

TEST(SaturationFraction, Counts) {
  EXPECT_EQ(saturation_fraction(Tensor({1, 3, 4}, 0.25), 0.9), 0.0);
  EXPECT_EQ(saturation_fraction(Tensor({1, 2, 2}, {1, 0, 0, 1}), 0.9), 1.0);
  Tensor half({1, 4, 4}, 0.25);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t r = 0; r < 4; ++r) half.at(0, t, r) = r == t ? 1.0 : 0.0;
  EXPECT_EQ(saturation_fraction(half, 0.9), 0.5);
}
