#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "rpalab/context_game.hpp"

using namespace rpalab;

namespace {

double simplex_error(const std::vector<double>& q) {
  return std::abs(std::accumulate(q.begin(), q.end(), 0.0) - 1.0);
}

// congestion game: u_i = a_i - q_i; interior equilibrium has q_i = a_i - v with v set by sum q = 1
std::vector<double> congestion(const std::vector<double>& a, const std::vector<double>& q) {
  std::vector<double> u(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) u[i] = a[i] - q[i];
  return u;
}

std::vector<double> congestion_equilibrium(const std::vector<double>& a) {
  const double n = static_cast<double>(a.size());
  const double v = (std::accumulate(a.begin(), a.end(), 0.0) - 1.0) / n;
  std::vector<double> q;
  for (double ai : a) q.push_back(ai - v);
  return q;
}

}  // namespace

TEST(Utility, Examples) {
  const UtilityConfig cfg{1.0, 0.9, 0.2, 2.0};
  EXPECT_NEAR(context_utility(1.0, 0.95, 1.0, cfg), -0.95, 1e-15);
  EXPECT_DOUBLE_EQ(context_utility(1.0, 0.85, 0.0, cfg), -1.0);
  EXPECT_DOUBLE_EQ(context_utility(2.5, 0.99, 1.7, {0.0, 0.9, 0.0, 1.0}), -2.5);
  EXPECT_THROW(context_utility(1.0, 0.5, 0.5, {1.0, 0.9, 0.2, 0.0}), std::invalid_argument);
}

TEST(ContextMixture, StartsUniform) {
  ContextMixture m({32, 64, 128});
  for (double v : m.q()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  EXPECT_EQ(m.largest(), 128u);
  EXPECT_THROW(ContextMixture({}), std::invalid_argument);
}

TEST(ContextMixture, EqualUtilitiesDoNotMove) {
  ContextMixture m({32, 64, 128});
  m.update({1.0, 2.0, 0.5});
  const auto q0 = m.q();
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const double u = 10.0 * rng.normal();
    m.update({u, u, u});
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(std::abs(m.q()[i] - q0[i]), 1e-12);
}

TEST(ContextMixture, ZeroStepDoesNotMove) {
  ContextMixture m({32, 64}, 0.0);
  m.update({5.0, -3.0});
  EXPECT_DOUBLE_EQ(m.q()[0], 0.5);
  EXPECT_DOUBLE_EQ(m.q()[1], 0.5);
}

TEST(ContextMixture, DominantContextTakesOver) {
  // after n updates the best-to-other weight ratio is exp(eta * n * gap)
  ContextMixture m({16, 32, 64}, 0.5);
  int reached = -1;
  for (int n = 1; n <= 200; ++n) {
    m.update({-2.0, -1.0, -2.0});
    const double closed = 1.0 / (1.0 + 2.0 * std::exp(-0.5 * n));
    ASSERT_NEAR(m.q()[1], closed, 1e-12) << n;
    if (reached < 0 && m.q()[1] > 0.99) reached = n;
  }
  EXPECT_GT(reached, 0);
  EXPECT_LE(reached, 200);
  EXPECT_EQ(reached, static_cast<int>(std::ceil(2.0 * std::log(2.0 * 99.0))));
}

TEST(ContextMixture, StaysOnPositiveSimplex) {
  ContextMixture m({8, 16, 32, 64}, 0.5);
  Rng rng(2);
  for (int t = 0; t < 5000; ++t) {
    std::vector<double> u(4);
    for (auto& v : u) v = 200.0 * (rng.uniform() - 0.5) + (t % 7 == 0 ? 1e4 : 0.0);
    m.update(u);
    for (double v : m.q()) ASSERT_GT(v, 0.0);
    ASSERT_LT(simplex_error(m.q()), 1e-12);
  }
}

TEST(ContextMixture, NonFiniteUtilityRejected) {
  ContextMixture m({8, 16});
  EXPECT_THROW(m.update({0.0, std::nan("")}), std::invalid_argument);
  EXPECT_THROW(m.update({0.0}), std::invalid_argument);
}

TEST(ContextMixture, PermutationEquivariant) {
  ContextMixture a({10, 20, 30}, 0.5), b({30, 10, 20}, 0.5);
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const double u0 = rng.normal(), u1 = rng.normal(), u2 = rng.normal();
    a.update({u0, u1, u2});
    b.update({u2, u0, u1});
    ASSERT_DOUBLE_EQ(a.q()[0], b.q()[1]);
    ASSERT_DOUBLE_EQ(a.q()[1], b.q()[2]);
    ASSERT_DOUBLE_EQ(a.q()[2], b.q()[0]);
  }
}

TEST(ContextMixture, ConvergesToCongestionEquilibrium) {
  for (const auto& a : {std::vector<double>{1.0, 0.5}, std::vector<double>{1.0, 0.8, 0.6}}) {
    const auto target = congestion_equilibrium(a);
    std::vector<std::size_t> ctx(a.size());
    std::iota(ctx.begin(), ctx.end(), 1);
    ContextMixture m(ctx, 0.5);
    for (int t = 0; t < 2000; ++t) m.update(congestion(a, m.q()));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(m.q()[i], target[i], 1e-9) << a.size() << " " << i;
    // at the equilibrium every supported context earns the same utility
    const auto u = congestion(a, m.q());
    for (std::size_t i = 1; i < u.size(); ++i) EXPECT_NEAR(u[i], u[0], 1e-9);
  }
}

TEST(ContextMixture, StationaryOnlyWhenUtilitiesEqual) {
  ContextMixture m({1, 2, 3}, 0.5);
  m.update({0.3, 0.1, 0.0});
  const auto q0 = m.q();
  ContextMixture moved = m;
  moved.update({0.0, 0.0, 1e-3});
  double change = 0.0;
  for (std::size_t i = 0; i < 3; ++i) change += std::abs(moved.q()[i] - q0[i]);
  EXPECT_GT(change, 1e-5);
  m.update({0.7, 0.7, 0.7});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(m.q()[i], q0[i], 1e-15);
}

TEST(SampleContext, FrequenciesAndDeterminism) {
  ContextMixture m({32, 64});
  Rng rng(4);
  std::map<std::size_t, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[m.sample(rng)];
  EXPECT_LT(std::abs(counts[32] / static_cast<double>(n) - 0.5), 0.01);

  Rng r1(5), r2(5);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(m.sample(r1), m.sample(r2));
}

TEST(SampleContext, PointMassAlwaysChosen) {
  ContextMixture m({32, 64, 128}, 1.0);
  m.update({-1e6, 0.0, -1e6});
  Rng rng(6);
  for (int i = 0; i < 10000; ++i) ASSERT_EQ(m.sample(rng), 64u);
}
