#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mse/app/gradcheck_suite.hpp"
#include "mse/diffmath/gradcheck.hpp"
#include "mse/diffmath/ops.hpp"
#include "support.hpp"

namespace {

using namespace mse::diffmath;
using testing_support::max_abs_diff;
using testing_support::to_mat;
using testing_support::to_tensor;

std::vector<double> as_vector(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

TEST(Matmul, IdentityLeavesColumnUnchanged) {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor col = Tensor::matrix(2, 1, {5, 7});
  EXPECT_EQ(as_vector(matmul(eye, col)), (std::vector<double>{5, 7}));
}

TEST(Matmul, OneByOne) {
  EXPECT_EQ(matmul(Tensor::matrix(1, 1, {2}), Tensor::matrix(1, 1, {3})).item(), 6.0);
}

TEST(Matmul, RandomMatchesTripleLoop) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_mat(rng, 3, 4);
    const auto b = oracle::random_mat(rng, 4, 2);
    const Tensor got = matmul(to_tensor(a), to_tensor(b));
    EXPECT_LE(max_abs_diff(got.values(), oracle::matmul(a, b).v), 1e-12);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected a dimension error";
  } catch (const mse::DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, NtMatchesExplicitTranspose) {
  std::mt19937_64 rng(12);
  const auto a = oracle::random_mat(rng, 3, 4);
  const auto b = oracle::random_mat(rng, 5, 4);
  const Tensor got = matmul_nt(to_tensor(a), to_tensor(b));
  EXPECT_LE(max_abs_diff(got.values(), matmul(to_tensor(a), transpose(to_tensor(b))).values()), 1e-15);
}

TEST(Hadamard, OnesAndZeros) {
  const Tensor a = Tensor::matrix(2, 2, {1.5, -2, 3, 0.25});
  EXPECT_EQ(as_vector(hadamard(a, Tensor::ones({2, 2}))), as_vector(a));
  EXPECT_EQ(as_vector(hadamard(a, Tensor::zeros({2, 2}))), (std::vector<double>(4, 0.0)));
}

TEST(Hadamard, Elementwise) {
  const Tensor got = hadamard(Tensor::constant({3}, {1, 2, 3}), Tensor::constant({3}, {4, 5, 6}));
  EXPECT_EQ(as_vector(got), (std::vector<double>{4, 10, 18}));
}

TEST(Hadamard, ShapeMismatch) {
  EXPECT_THROW(hadamard(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), mse::DimensionError);
}

TEST(Unary, CentersAndGeluOracle) {
  EXPECT_EQ(gelu(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  for (double x : {1.0, -1.0, 0.3, 2.5, -4.0}) {
    EXPECT_NEAR(gelu(Tensor::scalar(x)).item(), static_cast<double>(oracle::gelu(x)), 1e-12) << x;
  }
  EXPECT_NEAR(tanh(Tensor::scalar(0.7)).item(), std::tanh(0.7), 1e-15);
  EXPECT_NEAR(exp(Tensor::scalar(1.0)).item(), std::numbers::e, 1e-15);
}

TEST(Unary, LogOfNonPositiveIsDomainError) {
  EXPECT_THROW(log(Tensor::scalar(0.0)), mse::DomainError);
  EXPECT_THROW(log(Tensor::constant({2}, {1.0, -1.0})), mse::DomainError);
}

TEST(ReduceMeanRows, Examples) {
  EXPECT_EQ(as_vector(reduce_mean_rows(Tensor::matrix(3, 2, {4, 5, 4, 5, 4, 5}))), (std::vector<double>{4, 5}));
  EXPECT_EQ(as_vector(reduce_mean_rows(Tensor::matrix(2, 2, {0, 2, 2, 0}))), (std::vector<double>{1, 1}));
  EXPECT_EQ(as_vector(reduce_mean_rows(Tensor::matrix(1, 3, {1, 2, 3}))), (std::vector<double>{1, 2, 3}));
}

TEST(ReduceMeanRows, EmptyInputRejected) {
  EXPECT_THROW(Tensor::zeros({0, 3}), mse::DimensionError);
}

TEST(SoftmaxCrossEntropy, UniformAndTwoClass) {
  EXPECT_NEAR(softmax_cross_entropy(Tensor::zeros({16}), 3).item(), std::log(16.0), 1e-14);
  // -log(e^10 / (e^10 + e^-10)) = log1p(e^-20)
  EXPECT_NEAR(softmax_cross_entropy(Tensor::constant({2}, {10, -10}), 0).item(), std::log1p(std::exp(-20.0)), 1e-22);
}

TEST(SoftmaxCrossEntropy, TargetOutOfRange) {
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({4}), 4), mse::IndexError);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  const Tensor x = tape.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  backward(sum(x));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), std::vector<double>(6, 1.0));
}

TEST(Backward, QuadraticGivesTwiceInput) {
  Tape tape;
  const Tensor x = tape.leaf({3}, {1.5, -2, 0.25});
  backward(sum(hadamard(x, x)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{3, -4, 0.5}));
}

TEST(Backward, UnreachableLeafUntouched) {
  Tape tape;
  const Tensor x = tape.leaf({2}, {1, 2});
  const Tensor y = tape.leaf({2}, {3, 4});
  backward(sum(x));
  EXPECT_FALSE(y.has_grad());
}

TEST(Backward, SecondBackwardIsStateError) {
  Tape tape;
  const Tensor x = tape.leaf({2}, {1, 2});
  const Tensor root = sum(x);
  backward(root);
  EXPECT_THROW(backward(root), mse::StateError);
  EXPECT_THROW(sum(x), mse::StateError);
}

TEST(Backward, NonScalarRootRejected) {
  Tape tape;
  const Tensor x = tape.leaf({2}, {1, 2});
  EXPECT_THROW(backward(scale(x, 2.0)), mse::DimensionError);
}

TEST(Backward, ConstantRootRejected) { EXPECT_THROW(backward(Tensor::scalar(1.0)), mse::StateError); }

TEST(Backward, LinearityOverFreshTapes) {
  std::mt19937_64 rng(3);
  const auto xs = oracle::random_vector(rng, 6);
  const auto ws = oracle::random_vector(rng, 6);
  auto f = [&](const Tensor& x) { return sum(tanh(hadamard(x, Tensor::constant({2, 3}, ws)))); };
  auto g = [&](const Tensor& x) { return sum(hadamard(x, x)); };
  auto grad_of = [&](auto&& fn) {
    Tape tape;
    const Tensor x = tape.leaf({2, 3}, xs);
    backward(fn(x));
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto both = grad_of([&](const Tensor& x) { return add(f(x), g(x)); });
  const auto gf = grad_of(f);
  const auto gg = grad_of(g);
  for (std::size_t i = 0; i < both.size(); ++i) EXPECT_NEAR(both[i], gf[i] + gg[i], 1e-15);
}

TEST(Determinism, IdenticalValuesAndGradients) {
  auto run = [] {
    std::mt19937_64 rng(5);
    Tape tape;
    const Tensor a = tape.leaf({3, 4}, oracle::random_vector(rng, 12));
    const Tensor b = tape.leaf({4, 2}, oracle::random_vector(rng, 8));
    const Tensor root = sum(gelu(matmul(a, b)));
    backward(root);
    std::vector<double> out = {root.item()};
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Plumbing, SlicesConcatTranspose) {
  const Tensor x = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(as_vector(slice_rows(x, 1, 2)), (std::vector<double>{3, 4, 5, 6}));
  EXPECT_EQ(as_vector(slice_cols(x, 1, 1)), (std::vector<double>{2, 4, 6}));
  EXPECT_EQ(as_vector(transpose(x)), (std::vector<double>{1, 3, 5, 2, 4, 6}));
  const Tensor c = concat_rows({slice_rows(x, 0, 1), slice_rows(x, 1, 2)});
  EXPECT_EQ(as_vector(c), as_vector(x));
  const Tensor s = stack_columns({Tensor::matrix(2, 1, {1, 2}), Tensor::matrix(2, 1, {3, 4})});
  EXPECT_EQ(s.shape(), (Shape{2, 2}));
  EXPECT_EQ(as_vector(s), (std::vector<double>{1, 3, 2, 4}));
  EXPECT_THROW(slice_rows(x, 2, 2), mse::IndexError);
  EXPECT_THROW(concat_rows({x, Tensor::zeros({1, 3})}), mse::DimensionError);
}

TEST(Plumbing, EmbeddingLookupAndGradientScatter) {
  Tape tape;
  const Tensor table = tape.leaf({3, 2}, {1, 2, 3, 4, 5, 6});
  const int ids[] = {2, 0, 2};
  const Tensor rows = embedding_lookup(table, ids);
  EXPECT_EQ(as_vector(rows), (std::vector<double>{5, 6, 1, 2, 5, 6}));
  backward(sum(rows));
  EXPECT_EQ(std::vector<double>(table.grad().begin(), table.grad().end()), (std::vector<double>{1, 1, 0, 0, 2, 2}));
  const int bad[] = {3};
  EXPECT_THROW(embedding_lookup(table, bad), mse::IndexError);
}

TEST(Plumbing, CausalAttentionMasksFuture) {
  std::mt19937_64 rng(8);
  const Tensor q = Tensor::matrix(4, 3, oracle::random_vector(rng, 12));
  const Tensor k = Tensor::matrix(4, 3, oracle::random_vector(rng, 12));
  const Tensor w = causal_attention_weights(q, k, 0.5);
  for (std::size_t i = 0; i < 4; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      if (j > i) {
        EXPECT_EQ(w.at(i, j), 0.0);
      }
      row += w.at(i, j);
    }
    EXPECT_NEAR(row, 1.0, 1e-15);
  }
  EXPECT_EQ(w.at(0, 0), 1.0);
}

TEST(Finite, NonFiniteIsDetected) {
  const Tensor t = Tensor::constant({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(check_finite(t, "probe"), mse::NumericError);
}

TEST(GradCheck, EveryPrimitiveWithinOneInAMillion) {
  const auto rows = mse::app::check_primitives(1111, 1e-6);
  ASSERT_FALSE(rows.empty());
  for (const auto& r : rows) EXPECT_TRUE(r.passed()) << r.group << " " << r.name << " rel " << r.max_rel_error;
}

TEST(GradCheck, SoftmaxCrossEntropyAgainstCentralDifferences) {
  ParameterSet p;
  p.add("z", {1, 5}, {0.3, -1.2, 2.0, 0.1, -0.4});
  const auto entries =
      gradient_check(p, [](const BoundParameters& w) { return softmax_cross_entropy(w["z"], 2); });
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_LE(entries[0].max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // exp() evaluated through a hand-built node whose backward is off by 10%.
  ParameterSet p;
  p.add("x", {3}, {0.1, 0.5, -0.3});
  auto broken = [](const BoundParameters& w) {
    const Tensor& x = w["x"];
    std::vector<double> v(3);
    for (std::size_t i = 0; i < 3; ++i) v[i] = std::exp(x[i]);
    if (x.tape() == nullptr) return sum(Tensor::constant({3}, v));
    const Tensor y = x.tape()->record({3}, v, [x, v](const std::vector<double>& g) {
      for (std::size_t i = 0; i < 3; ++i) x.node().grad_buffer()[i] += 1.1 * g[i] * v[i];
    });
    return sum(y);
  };
  const auto entries = gradient_check(p, broken);
  EXPECT_GT(entries[0].max_rel_error, 0.05);
}

}  // namespace
