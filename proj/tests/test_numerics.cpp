#include <gtest/gtest.h>

#include <cmath>

#include "rpalab/autodiff.hpp"
#include "rpalab/rng.hpp"
#include "rpalab/tensor.hpp"
#include "test_util.hpp"

using namespace rpalab;
using rpalab::testing::fd_max_rel_error;
using rpalab::testing::random_tensor;

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(Tensor({1, 1, 1, 1, 1}), std::invalid_argument);
}

TEST(Contract, IdentityTimesVector) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from({3.5, -2.0});
  Tensor out = contract(eye, v, "ij,j->i");
  EXPECT_EQ(out[0], 3.5);
  EXPECT_EQ(out[1], -2.0);
}

TEST(Contract, UniformMembershipAgainstIdentityBasis) {
  // sum_t mu[0,t,r] * I[t,k] = mu[0,k,r] = 0.5 for every (r,k)
  Tensor mu({1, 2, 2}, 0.5);
  Tensor phi({2, 2}, {1, 0, 0, 1});
  Tensor s = contract(mu, phi, "btr,tk->rk");
  ASSERT_EQ(s.shape(), (Shape{2, 2}));
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Contract, ZeroOperandGivesZero) {
  Rng rng(1);
  Tensor a({3, 4}, 0.0);
  Tensor b = random_tensor(rng, {4, 5});
  EXPECT_EQ(max_abs(contract(a, b, "ij,jk->ik")), 0.0);
}

TEST(Contract, MatchesMatmulAndDiagonal) {
  Rng rng(2);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {4, 5});
  EXPECT_LT(max_abs_diff(contract(a, b, "ij,jk->ik"), matmul(a, b)), 1e-14);
  Tensor sq = random_tensor(rng, {3, 3});
  Tensor ones({3}, 1.0);
  Tensor diag = contract(sq, ones, "ii,i->i");
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(diag[i], sq.at(i, i));
}

TEST(Contract, ShapeMismatchIsDescriptive) {
  Tensor a({2, 3});
  Tensor b({4, 5});
  try {
    contract(a, b, "ij,jk->ik");
    FAIL() << "expected throw";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("'j'"), std::string::npos);
  }
  EXPECT_THROW(contract(a, b, "ij,kl->iz"), std::invalid_argument);
  EXPECT_THROW(contract(a, b, "ijk,kl->il"), std::invalid_argument);
}

TEST(Softmax, KnownValues) {
  Tensor x({1, 2}, {0.0, 0.0});
  Tensor y = softmax_rows(x);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
  Tensor z = softmax_rows(Tensor({1, 2}, {0.0, -0.5}));
  EXPECT_NEAR(z[0], 0.6225, 1e-4);
  EXPECT_NEAR(z[1], 0.3775, 1e-4);
}

TEST(Softmax, ShiftByHundredIsBitIdentical) {
  Tensor x({1, 1}, {0.37});
  Tensor y({1, 1}, {100.37});
  EXPECT_TRUE(softmax_rows(x).bit_equal(softmax_rows(y)));
  // exactly representable shifts of dyadic rows give identical bits
  Rng rng(3);
  for (int c = 0; c < 50; ++c) {
    Tensor r({4, 7});
    for (auto& v : r.data()) v = static_cast<double>(static_cast<int>(rng.below(4096)) - 2048) / 256.0;
    Tensor shifted = r;
    for (std::size_t i = 0; i < 4; ++i) {
      const double shift = static_cast<double>(static_cast<int>(rng.below(200)) - 100);
      for (std::size_t j = 0; j < 7; ++j) shifted.at(i, j) += shift;
    }
    EXPECT_TRUE(softmax_rows(r).bit_equal(softmax_rows(shifted)));
  }
}

TEST(Softmax, RowsOnSimplex) {
  Rng rng(4);
  for (int c = 0; c < 20; ++c) {
    Tensor x = random_tensor(rng, {5, 9}, -50, 50);
    Tensor y = softmax_rows(x);
    for (double s : row_sums(y)) EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Rng, SeededStreamsAreIdenticalAndForksDiffer) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Tensor ta = Rng(9).normal_tensor({3, 3});
  Tensor tb = Rng(9).normal_tensor({3, 3});
  EXPECT_TRUE(ta.bit_equal(tb));
  EXPECT_NE(Rng(1).fork("data").next_u64(), Rng(1).fork("model").next_u64());
  EXPECT_EQ(Rng(1).fork("data").next_u64(), Rng(1).fork("data").next_u64());
}

TEST(Rng, NormalMomentsAndCategorical) {
  Rng rng(5);
  double s = 0.0, ss = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    s += z;
    ss += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(ss / n, 1.0, 0.02);
  EXPECT_EQ(rng.categorical({0.0, 1.0, 0.0}), 1u);
  EXPECT_THROW(rng.categorical({}), std::invalid_argument);
}

TEST(Backward, SquareAtThree) {
  Tape tape;
  Var th = tape.leaf(Tensor::scalar(3.0));
  Var loss = square(th);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.grad(th)[0], 6.0);
}

TEST(Backward, CrossEntropyTwoClass) {
  Tape tape;
  Var logits = tape.leaf(Tensor({1, 2}, {0.0, 0.0}));
  Var loss = cross_entropy_sum(logits, {0});
  tape.backward(loss);
  Tensor g = tape.grad(logits);
  EXPECT_DOUBLE_EQ(g[0], -0.5);
  EXPECT_DOUBLE_EQ(g[1], 0.5);
  EXPECT_NEAR(loss.value().item(), std::log(2.0), 1e-15);
}

TEST(Backward, Errors) {
  Tape tape;
  Var c = tape.constant(Tensor::scalar(1.0));
  EXPECT_THROW(tape.backward(c), std::invalid_argument);
  Var v = tape.leaf(Tensor::from({1.0, 2.0}));
  EXPECT_THROW(tape.backward(v), std::invalid_argument);
  Var d = detach(v);
  EXPECT_FALSE(d.requires_grad());
  EXPECT_THROW(tape.backward(sum(d)), std::invalid_argument);
}

TEST(Backward, ParameterAccumulates) {
  Parameter p("w", Tensor::from({1.0, -2.0}));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    Var w = tape.param(p);
    tape.backward(sum(square(w)));
  }
  EXPECT_DOUBLE_EQ(p.grad[0], 4.0);
  EXPECT_DOUBLE_EQ(p.grad[1], -8.0);
}

TEST(Backward, DetachStopsGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(2.0));
  Var y = add(mul(x, x), detach(mul(x, 10.0)));
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 4.0);
}

// Finite-difference oracle on every differentiable op.
class GradCheck : public ::testing::Test {
 protected:
  Rng rng{11};
  static constexpr double kTol = 1e-3;
};

TEST_F(GradCheck, ElementwiseBroadcast) {
  auto a = random_tensor(rng, {2, 3, 4});
  auto b = random_tensor(rng, {3, 1});
  auto c = random_tensor(rng, {2, 3, 4}, 0.5, 2.0);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return add(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return sub(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return mul(v[0], v[1]); }, {a, b}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return div(v[0], v[1]); }, {a, c}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return div(v[1], v[0]); }, {c, b}), kTol);
}

TEST_F(GradCheck, Unary) {
  auto a = random_tensor(rng, {3, 5}, -2, 2);
  auto pos = random_tensor(rng, {3, 5}, 0.2, 3);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return exp(v[0]); }, {a}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return log(v[0]); }, {pos}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return sqrt(v[0]); }, {pos}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return sigmoid(v[0]); }, {a}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return tanh(v[0]); }, {a}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return gelu(v[0]); }, {a}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return relu(v[0]); }, {a}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return clamp(v[0], -1.0, 1.0); }, {a}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return mul(add(square(v[0]), 0.5), -3.0); }, {a}), kTol);
}

TEST_F(GradCheck, Reductions) {
  auto a = random_tensor(rng, {2, 3, 4});
  for (std::size_t ax = 0; ax < 3; ++ax) {
    EXPECT_LT(fd_max_rel_error([ax](auto& v) { return sum_axis(v[0], ax, ax % 2 == 0); }, {a}), kTol);
    EXPECT_LT(fd_max_rel_error([ax](auto& v) { return mean_axis(v[0], ax, true); }, {a}), kTol);
  }
  EXPECT_LT(fd_max_rel_error([](auto& v) { return stddev(v[0]); }, {a}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return mean(v[0]); }, {a}), kTol);
}

TEST_F(GradCheck, LinearAlgebra) {
  auto x = random_tensor(rng, {2, 3, 4});
  auto w = random_tensor(rng, {4, 5});
  EXPECT_LT(fd_max_rel_error([](auto& v) { return matmul(v[0], v[1]); }, {x, w}), kTol);
  auto p = random_tensor(rng, {2, 2, 3, 4});
  auto q = random_tensor(rng, {2, 2, 4, 3});
  EXPECT_LT(fd_max_rel_error([](auto& v) { return bmm(v[0], v[1]); }, {p, q}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return permute(v[0], {0, 2, 1, 3}); }, {p}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return transpose_last2(v[0]); }, {p}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return reshape(v[0], {6, 4}); }, {x}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return slice_last(v[0], 2); }, {x}), kTol);
  auto mu = random_tensor(rng, {2, 3, 2}, 0, 1);
  auto phi = random_tensor(rng, {3, 4}, 0, 1);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return contract(v[0], v[1], "btr,tk->rk"); }, {mu, phi}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return contract(v[0], v[0], "btr,bsr->ts"); }, {mu}), kTol);
}

TEST_F(GradCheck, FusedOps) {
  auto s = random_tensor(rng, {2, 4, 4}, -3, 3);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return softmax_last(v[0]); }, {s}), kTol);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return softmax_last(v[0], true); }, {s}), kTol);
  auto x = random_tensor(rng, {3, 6});
  auto g = random_tensor(rng, {6}, 0.5, 1.5);
  auto b = random_tensor(rng, {6});
  EXPECT_LT(fd_max_rel_error([](auto& v) { return layer_norm(v[0], v[1], v[2]); }, {x, g, b}), kTol);
  auto table = random_tensor(rng, {5, 3});
  EXPECT_LT(fd_max_rel_error([](auto& v) { return embedding(v[0], {4, 0, 4, 2}, {2, 2}); }, {table}), kTol);
  auto z = random_tensor(rng, {2, 3, 4});
  auto c = random_tensor(rng, {3, 4});
  EXPECT_LT(fd_max_rel_error([](auto& v) { return sq_dist(v[0], v[1]); }, {z, c}), kTol);
  auto logits = random_tensor(rng, {4, 6}, -2, 2);
  EXPECT_LT(fd_max_rel_error([](auto& v) { return cross_entropy_sum(v[0], {1, 5, 0, 3}, 0.1); }, {logits}), kTol);
}

TEST(Autodiff, CausalSoftmaxMasksFuture) {
  Tape tape;
  Rng rng(3);
  Var s = tape.constant(random_tensor(rng, {3, 3}, -5, 5));
  const Tensor& y = softmax_last(s, true).value();
  EXPECT_EQ(y.at(0, 0), 1.0);
  EXPECT_EQ(y.at(0, 1), 0.0);
  EXPECT_EQ(y.at(1, 2), 0.0);
  for (double r : row_sums(y)) EXPECT_NEAR(r, 1.0, 1e-12);
}

TEST(Autodiff, LabelSmoothingMatchesDefinition) {
  Tape tape;
  Var logits = tape.constant(Tensor({1, 4}, 0.0));
  EXPECT_NEAR(cross_entropy_sum(logits, {2}, 0.0).value().item(), std::log(4.0), 1e-15);
  EXPECT_NEAR(cross_entropy_sum(logits, {2}, 0.3).value().item(), std::log(4.0), 1e-15);
  EXPECT_THROW(cross_entropy_sum(logits, {4}), std::out_of_range);
}
