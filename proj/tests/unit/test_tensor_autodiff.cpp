// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "est/errors.hpp"
#include "est/ops.hpp"
#include "est/random.hpp"
#include "gradcheck.hpp"

namespace {

using namespace est;

Tensor random_tensor(Shape shape, std::uint64_t key) {
  auto rng = keyed_rng(key, 3, 0);
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = static_cast<Real>(standard_normal(rng));
  return t;
}

TEST(Tensor, ShapeAndSize) {
  Tensor t({2, 3, 4}, Real(1.5));
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 12u);
  EXPECT_FALSE(t.has_grad());
  t.ensure_grad();
  EXPECT_EQ(t.grad().size(), t.size());
  t.clear_grad();
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<Real>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError);
}

TEST(Matmul, IdentityTimesIdentity) {
  Tape tape;
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  Var c = matmul(tape.constant(eye), tape.constant(eye));
  EXPECT_EQ(c.value().shape(), (Shape{2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(c.value()[i], eye[i]);
}

TEST(Matmul, HandArithmetic) {
  Tape tape;
  Var c = matmul(tape.constant(Tensor::matrix({{1, 2}, {3, 4}})), tape.constant(Tensor::matrix({{1}, {1}})));
  ASSERT_EQ(c.value().shape(), (Shape{2, 1}));
  EXPECT_EQ(c.value()[0], 3);
  EXPECT_EQ(c.value()[1], 7);
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape tape;
  try {
    matmul(tape.constant(Tensor({3, 4})), tape.constant(Tensor({5, 2})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[3x4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[5x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, NtMatchesExplicitTranspose) {
  const Tensor a = random_tensor({3, 5}, 1), b = random_tensor({4, 5}, 2);
  Tensor bt({5, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) bt.at(j, i) = b.at(i, j);
  }
  Tape tape;
  Var x = matmul_nt(tape.constant(a), tape.constant(b));
  Var y = matmul(tape.constant(a), tape.constant(bt));
  for (std::size_t i = 0; i < x.value().size(); ++i) EXPECT_NEAR(x.value()[i], y.value()[i], 1e-5);
}

TEST(Softmax, SymmetricRow) {
  Tape tape;
  Var s = softmax_rows(tape.constant(Tensor::matrix({{0, 0}})));
  EXPECT_DOUBLE_EQ(s.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(s.value()[1], 0.5);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  Tape tape;
  Var s = softmax_rows(tape.constant(Tensor::matrix({{1000, 0}})));
  EXPECT_NEAR(s.value()[0], 1.0, 1e-12);
  EXPECT_NEAR(s.value()[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOne) {
  Tape tape;
  Var s = softmax_rows(tape.constant(random_tensor({4, 4}, 3)));
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 4; ++c) total += s.value().at(r, c);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Softmax, NanIsRejected) {
  Tape tape;
  EXPECT_THROW(softmax_rows(tape.constant(Tensor::matrix({{1, std::nan("")}}))), NumericalError);
}

TEST(LayerNorm, ConstantRowNormalisesToZero) {
  Tape tape;
  Var y = layer_norm(tape.constant(Tensor::matrix({{3, 3, 3, 3}})), tape.constant(Tensor({4}, Real(1))),
                     tape.constant(Tensor({4}, Real(0))));
  for (Real v : y.value().data()) EXPECT_EQ(v, 0);
}

TEST(LayerNorm, AlreadyNormalisedRow) {
  Tape tape;
  Var y = layer_norm(tape.constant(Tensor::matrix({{1, -1}})), tape.constant(Tensor({2}, Real(1))),
                     tape.constant(Tensor({2}, Real(0))));
  // epsilon 1e-5 inside the square root: 1/sqrt(1 + 1e-5)
  EXPECT_NEAR(y.value()[0], 1.0, 1e-5);
  EXPECT_NEAR(y.value()[1], -1.0, 1e-5);
  EXPECT_NEAR(y.value()[0], 1.0 / std::sqrt(1.0 + 1e-5), 1e-6);
}

TEST(LayerNorm, GainShapeChecked) {
  Tape tape;
  EXPECT_THROW(layer_norm(tape.constant(Tensor({2, 4})), tape.constant(Tensor({3})), tape.constant(Tensor({4}))),
               DimensionError);
}

TEST(Gelu, KnownValues) {
  EXPECT_EQ(gelu_value(0), 0);
  EXPECT_NEAR(gelu_value(10), 10.0, 1e-6);
  EXPECT_NEAR(gelu_value(-10), 0.0, 1e-6);
  // tanh approximation at 1: 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715))
  EXPECT_NEAR(gelu_value(1), 0.8411919906, 1e-6);
}

TEST(Embedding, GathersRows) {
  Tape tape;
  const Tensor table = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  const std::vector<TokenId> ids{2, 0, 2};
  Var e = embedding(tape.constant(table), ids);
  ASSERT_EQ(e.value().shape(), (Shape{3, 2}));
  EXPECT_EQ(e.value().at(0, 0), 5);
  EXPECT_EQ(e.value().at(1, 1), 2);
  EXPECT_EQ(e.value().at(2, 1), 6);
}

TEST(Embedding, OutOfRangeIdNamesPosition) {
  Tape tape;
  const std::vector<TokenId> ids{0, 1, 9};
  try {
    embedding(tape.constant(Tensor({3, 2})), ids);
    FAIL() << "expected IndexError";
  } catch (const IndexError& e) {
    EXPECT_NE(std::string(e.what()).find("position 2"), std::string::npos) << e.what();
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  Tape tape;
  const std::vector<TokenId> targets{0, 3, 6};
  Var loss = cross_entropy(tape.constant(Tensor({3, 7}, Real(0.25))), targets);
  EXPECT_NEAR(loss.value()[0], std::log(7.0), 1e-6);
}

TEST(CrossEntropy, ConfidentCorrectLogitsGiveNearZero) {
  Tensor logits({2, 4}, Real(0));
  logits.at(0, 1) = 60;
  logits.at(1, 3) = 60;
  Tape tape;
  const std::vector<TokenId> targets{1, 3};
  EXPECT_LT(cross_entropy(tape.constant(logits), targets).value()[0], 1e-12);
}

TEST(CrossEntropy, MatchesDirectLogSoftmax) {
  const Tensor logits = random_tensor({3, 5}, 4);
  const std::vector<TokenId> targets{4, 0, 2};
  double expected = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(static_cast<double>(logits.at(r, c)));
    expected -= static_cast<double>(logits.at(r, targets[r])) - std::log(z);
  }
  expected /= 3;
  Tape tape;
  EXPECT_NEAR(cross_entropy(tape.constant(logits), targets).value()[0], expected, 1e-6);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.variable(random_tensor({2, 3}, 5));
  tape.backward(sum(x));
  for (Real g : x.grad()) EXPECT_EQ(g, 1);
}

TEST(Backward, SquaredNormGivesTwiceX) {
  Tape tape;
  const Tensor xv = random_tensor({1, 4}, 6);
  Var x = tape.variable(xv);
  tape.backward(matmul_nt(x, x));  // x x^T, a 1x1 scalar
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x.grad()[i], 2 * xv[i], 1e-6);
}

TEST(Backward, ConsumedTapeRejectsSecondCall) {
  Tape tape;
  Var x = tape.variable(Tensor({2}, Real(1)));
  Var loss = sum(x);
  tape.backward(loss);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss), StateError);
  EXPECT_THROW(tape.variable(Tensor({1})), StateError);
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.variable(Tensor({2}, Real(1)));
  EXPECT_THROW(tape.backward(x), DimensionError);
}

TEST(Backward, ParameterGradientsAccumulateAcrossReuse) {
  Tensor w = random_tensor({3, 3}, 7);
  Tape tape;
  Var a = tape.parameter(w);
  Var b = tape.parameter(w);
  EXPECT_EQ(a.id(), b.id());
  tape.backward(sum(add(a, b)));
  for (Real g : w.grad()) EXPECT_EQ(g, 2);
}

TEST(Backward, VisitsNodesInReverseRecordingOrder) {
  Tape tape;
  std::vector<std::size_t> order;
  Var x = tape.variable(Tensor({1}, Real(1)));
  Var prev = x;
  for (int i = 0; i < 4; ++i) {
    Var ins[] = {prev};
    prev = tape.record(Tensor({1}, Real(1)), ins, [&order, i, id = prev.id()](Tape& t, const Tensor&, std::span<const Real> g) {
      order.push_back(static_cast<std::size_t>(i));
      t.grad(id)[0] += g[0];
    });
  }
  tape.backward(prev);
  EXPECT_EQ(order, (std::vector<std::size_t>{3, 2, 1, 0}));
  EXPECT_EQ(x.grad()[0], 1);
}

TEST(Backward, ForeignTapeOperandRejected) {
  Tape a, b;
  EXPECT_THROW(add(a.constant(Tensor({1})), b.constant(Tensor({1}))), StateError);
}

TEST(Determinism, RepeatedComputationIsBitwiseEqual) {
  Tensor w = random_tensor({6, 6}, 8);
  const Tensor x = random_tensor({5, 6}, 9);
  std::vector<Real> first_grad;
  Real first_value = 0;
  for (int run = 0; run < 2; ++run) {
    w.clear_grad();
    Tape tape;
    Var loss = sum(gelu(matmul(tape.constant(x), tape.parameter(w))));
    tape.backward(loss);
    if (run == 0) {
      first_value = loss.value()[0];
      first_grad.assign(w.grad().begin(), w.grad().end());
    } else {
      EXPECT_EQ(loss.value()[0], first_value);
      EXPECT_TRUE(std::equal(first_grad.begin(), first_grad.end(), w.grad().begin()));
    }
  }
}

TEST(GatherOps, ScatterGradientsToSelectedEntriesOnly) {
  Tensor w = random_tensor({3, 5}, 10);
  Tape tape;
  const std::vector<std::size_t> cols{1, 4};
  tape.backward(sum(gather_cols(tape.parameter(w), cols)));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(w.grad()[r * 5 + c], (c == 1 || c == 4) ? 1 : 0);
  }
}

TEST(GatherOps, OutOfRangeIndexRejected) {
  Tape tape;
  const std::vector<std::size_t> cols{5};
  EXPECT_THROW(gather_cols(tape.constant(Tensor({3, 5})), cols), IndexError);
  EXPECT_THROW(gather_rows(tape.constant(Tensor({3, 5})), cols), IndexError);
}

TEST(CausalAttention, FirstPositionCopiesItsValue) {
  const Tensor q = random_tensor({4, 2}, 11), k = random_tensor({4, 2}, 12), v = random_tensor({4, 2}, 13);
  Tape tape;
  Var out = causal_attention(tape.constant(q), tape.constant(k), tape.constant(v), 2, 2, 1, 2);
  // position 0 of each sequence attends only to itself
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_NEAR(out.value().at(0, c), v.at(0, c), 1e-6);
    EXPECT_NEAR(out.value().at(2, c), v.at(2, c), 1e-6);
  }
}

TEST(CausalAttention, FutureTokensDoNotInfluenceThePast) {
  Tensor q = random_tensor({6, 4}, 14), k = random_tensor({6, 4}, 15), v = random_tensor({6, 4}, 16);
  auto run = [&] {
    Tape tape;
    return causal_attention(tape.constant(q), tape.constant(k), tape.constant(v), 1, 6, 2, 2).value();
  };
  const Tensor before = run();
  for (std::size_t c = 0; c < 4; ++c) {
    k.at(5, c) += 3;
    v.at(5, c) -= 2;
  }
  const Tensor after = run();
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(before.at(r, c), after.at(r, c));
  }
}

// Finite-difference checks of every primitive in both precisions.
TEST(GradientCheck, PrimitivesFp32) {
  for (const auto& r : est_test::primitive_gradchecks_fp32()) {
    EXPECT_LE(r.max_rel_error, 1e-3) << r.name << " (" << r.checked << " entries)";
  }
}

TEST(GradientCheck, PrimitivesFp64) {
  for (const auto& r : est_test::primitive_gradchecks_fp64()) {
    EXPECT_LE(r.max_rel_error, 1e-6) << r.name << " (" << r.checked << " entries)";
  }
}

double max_error_for(const std::vector<est_test::GradcheckResult>& results, const std::string& name) {
  for (const auto& r : results) {
    if (r.name == name) return r.max_rel_error;
  }
  ADD_FAILURE() << "no gradcheck case named " << name;
  return 1.0;
}

TEST(GradientCheck, MatmulThreeByFourTimesFourByTwo) {
  EXPECT_LE(max_error_for(est_test::primitive_gradchecks_fp32(), "matmul"), 1e-4);
  EXPECT_LE(max_error_for(est_test::primitive_gradchecks_fp64(), "matmul"), 1e-7);
}

TEST(GradientCheck, LayerNormAndGeluFp32) {
  const auto results = est_test::primitive_gradchecks_fp32();
  EXPECT_LE(max_error_for(results, "layer_norm"), 1e-4);
  EXPECT_LE(max_error_for(results, "gelu"), 1e-4);
}

TEST(GradientCheck, TinyModelFp32) {
  for (bool sampled : {false, true}) {
    const auto r = est_test::model_gradcheck_fp32(20, 31, sampled);
    EXPECT_EQ(r.checked, 20u);
    EXPECT_LE(r.max_rel_error, 1e-3) << r.name;
  }
}

TEST(GradientCheck, TinyModelFp64) {
  for (bool sampled : {false, true}) {
    const auto r = est_test::model_gradcheck_fp64(20, 31, sampled);
    EXPECT_LE(r.max_rel_error, 1e-6) << r.name;
  }
}

}  // namespace
