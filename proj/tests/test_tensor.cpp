#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "mtsgl/ops.hpp"

namespace mtsgl {
namespace {

using testing::check_gradients;
using testing::random_nonzero;
using testing::random_tensor;

TEST(Ops, ElementwiseAdd) {
  const Tensor c = ops::add(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4}));
  EXPECT_EQ(c[0], 4);
  EXPECT_EQ(c[1], 6);
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  const Tensor s = ops::softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(s[i], 1.0 / 3);
}

TEST(Ops, ConvOfOnesCountsTheWindow) {
  const Tensor x = Tensor::from({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  const Tensor w = Tensor::from({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  const Tensor y = ops::conv2d(x, w, Tensor::zeros({1}), 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(y[4], 9);
  EXPECT_EQ(y[0], 4);
  EXPECT_EQ(y[1], 6);
}

TEST(Ops, ScalarOperandBroadcasts) {
  const Tensor y = ops::mul(Tensor::from({3}, {1, 2, 3}), Tensor::scalar(2));
  EXPECT_EQ(y[2], 6);
}

TEST(Ops, ShapeMismatchNamesPrimitiveAndExtents) {
  try {
    ops::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), Error);
  EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}),
                           Tensor::zeros({1}), 1, 1),
               Error);
  EXPECT_THROW(ops::concat_channels({Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 2, 2})}),
               Error);
  EXPECT_THROW(ops::reshape(Tensor::zeros({6}), {4}), Error);
}

TEST(Tape, SquareGradient) {
  Tensor x = Tensor::scalar(3, true);
  Tape tape;
  tape.backward(ops::mul(x, x));
  EXPECT_EQ(x.grad()[0], 6);
}

TEST(Tape, SoftmaxCrossEntropyMatchesFiniteDifference) {
  Tensor logits = Tensor::from({2}, {1, 0}, true);
  auto f = [](const std::vector<Tensor>& v) {
    return ops::gather_sum(ops::log_softmax(v[0], 0), {0}, {-1.0});
  };
  EXPECT_LT(check_gradients({logits}, f).max_rel, 1e-6);
}

TEST(Tape, UnreachableLeafGetsZeroGrad) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = Tensor::from({2}, {3, 4}, true);
  Tape tape;
  const Tensor unused = ops::scale(x, 2);
  tape.backward(ops::sum(y));
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad()[0], 0);
  EXPECT_EQ(x.grad()[1], 0);
  EXPECT_EQ(y.grad()[0], 1);
}

TEST(Tape, RejectsNonScalarLoss) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  EXPECT_THROW(tape.backward(ops::scale(x, 2)), Error);
}

TEST(Tape, RejectsSecondBackwardUntilReset) {
  Tensor x = Tensor::scalar(2, true);
  Tape tape;
  const Tensor l = ops::mul(x, x);
  tape.backward(l);
  EXPECT_THROW(tape.backward(l), Error);
  tape.reset();
  tape.backward(l);
  EXPECT_EQ(x.grad()[0], 4);  // not accumulated across passes
}

TEST(Tape, ReplayVisitsOpsInReverseOrder) {
  // A diamond: both branches must be complete before their common input
  // propagates further.
  Tensor x = Tensor::scalar(1.5, true);
  Tape tape;
  const Tensor a = ops::exp(x);
  const Tensor b = ops::mul(a, a);
  const Tensor c = ops::add(a, b);
  tape.backward(ops::log(c));
  const double e = std::exp(1.5);
  EXPECT_NEAR(x.grad()[0], (e + 2 * e * e) / (e + e * e), 1e-12);
}

TEST(GradSnapshot, FlattensInOrder) {
  Tensor a = Tensor::from({2}, {1, 2}, true);
  Tensor b = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  Tape tape;
  tape.backward(ops::add(ops::sum(ops::scale(a, 2)), ops::sum(ops::mul(b, b))));
  const std::vector<Tensor> ps{a, b};
  const auto g = grad_snapshot(ps);
  ASSERT_EQ(g.size(), 6u);
  EXPECT_EQ(g, (std::vector<double>{2, 2, 2, 4, 6, 8}));
}

TEST(GradSnapshot, ZeroLossGivesZeroVector) {
  Tensor a = Tensor::from({3}, {1, 2, 3}, true);
  Tape tape;
  tape.backward(ops::scale(ops::sum(a), 0));
  const std::vector<Tensor> ps{a};
  for (double v : grad_snapshot(ps)) EXPECT_EQ(v, 0);
}

TEST(GradSnapshot, NamesParameterWithoutGrad) {
  Tensor a = Tensor::from({1}, {1}, true);
  a.set_name("enc.w");
  const std::vector<Tensor> ps{a};
  try {
    grad_snapshot(ps);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("enc.w"), std::string::npos);
  }
}

// Finite-difference checks for every primitive on random shapes.
class PrimitiveGradients : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradients, MatchFiniteDifferences) {
  Rng rng(derive_seed(77, GetParam()));
  const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), h = 4 + 2 * rng.below(2);
  const Shape img{n, c, h, h};
  Tensor w0 = random_tensor(rng, {n * c * h * h});  // weights for a scalar readout
  w0 = Tensor::from(img, std::vector<double>(w0.data().begin(), w0.data().end()));
  auto readout = [](const Tensor& y, Rng r) {
    std::vector<std::size_t> idx(y.numel());
    std::vector<double> w(y.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i, w[i] = r.uniform(-1, 1);
    return ops::gather_sum(y, idx, w);
  };
  const std::uint64_t rs = rng.below(1u << 30);
  struct Case {
    const char* name;
    std::vector<Tensor> leaves;
    std::function<Tensor(const std::vector<Tensor>&)> f;
  };
  const std::size_t k = 1 + 2 * rng.below(2), stride = 1 + rng.below(2), co = 1 + rng.below(3);
  std::vector<Case> cases = {
      {"add", {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})},
       [&](auto& v) { return readout(ops::add(v[0], v[1]), Rng(rs)); }},
      {"sub", {random_tensor(rng, {5}), random_tensor(rng, {1})},
       [&](auto& v) { return readout(ops::sub(v[0], v[1]), Rng(rs)); }},
      {"mul", {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})},
       [&](auto& v) { return readout(ops::mul(v[0], v[1]), Rng(rs)); }},
      {"div", {random_tensor(rng, {4}), random_tensor(rng, {4}, 0.5, 2)},
       [&](auto& v) { return readout(ops::div(v[0], v[1]), Rng(rs)); }},
      {"relu", {random_nonzero(rng, {2, 5})}, [&](auto& v) { return readout(ops::relu(v[0]), Rng(rs)); }},
      {"exp", {random_tensor(rng, {6})}, [&](auto& v) { return readout(ops::exp(v[0]), Rng(rs)); }},
      {"log", {random_tensor(rng, {6}, 0.2, 3)}, [&](auto& v) { return readout(ops::log(v[0]), Rng(rs)); }},
      {"sqrt", {random_tensor(rng, {6}, 0.2, 3)}, [&](auto& v) { return readout(ops::sqrt(v[0]), Rng(rs)); }},
      {"matmul", {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})},
       [&](auto& v) { return readout(ops::matmul(v[0], v[1]), Rng(rs)); }},
      {"transpose", {random_tensor(rng, {3, 5})},
       [&](auto& v) { return readout(ops::transpose(v[0]), Rng(rs)); }},
      {"reshape", {random_tensor(rng, {2, 6})},
       [&](auto& v) { return readout(ops::reshape(v[0], {3, 4}), Rng(rs)); }},
      {"mean", {random_tensor(rng, {7})}, [&](auto& v) { return ops::mean(v[0]); }},
      {"linear", {random_tensor(rng, {3, 4}), random_tensor(rng, {2, 4}), random_tensor(rng, {2})},
       [&](auto& v) { return readout(ops::linear(v[0], v[1], v[2]), Rng(rs)); }},
      {"conv2d", {random_tensor(rng, img), random_tensor(rng, {co, c, k, k}), random_tensor(rng, {co})},
       [&](auto& v) { return readout(ops::conv2d(v[0], v[1], v[2], stride, k / 2), Rng(rs)); }},
      {"upsample2x", {random_tensor(rng, img)},
       [&](auto& v) { return readout(ops::upsample2x(v[0]), Rng(rs)); }},
      {"max_pool2d", {random_tensor(rng, img)},
       [&](auto& v) { return readout(ops::max_pool2d(v[0], 2, 2), Rng(rs)); }},
      {"avg_pool2d", {random_tensor(rng, img)},
       [&](auto& v) { return readout(ops::avg_pool2d(v[0], 2, 2), Rng(rs)); }},
      {"global_avg_pool", {random_tensor(rng, img)},
       [&](auto& v) { return readout(ops::global_avg_pool(v[0]), Rng(rs)); }},
      {"concat_channels", {random_tensor(rng, img), random_tensor(rng, {n, 2, h, h})},
       [&](auto& v) { return readout(ops::concat_channels({v[0], v[1]}), Rng(rs)); }},
      {"select", {random_tensor(rng, img)}, [&](auto& v) { return readout(ops::select(v[0], n - 1), Rng(rs)); }},
      {"softmax", {random_tensor(rng, {3, 4, 2})},
       [&](auto& v) { return readout(ops::softmax(v[0], 1), Rng(rs)); }},
      {"log_softmax", {random_tensor(rng, {3, 4})},
       [&](auto& v) { return readout(ops::log_softmax(v[0], 0), Rng(rs)); }},
      {"normalize_l2", {random_tensor(rng, {4, 3})},
       [&](auto& v) { return readout(ops::normalize_l2(v[0], GetParam() % 2, 1e-8), Rng(rs)); }},
  };
  for (auto& cs : cases) {
    const auto r = check_gradients(cs.leaves, cs.f);
    EXPECT_LT(r.max_rel, 1e-4) << cs.name;
    EXPECT_GT(r.checked, 0u) << cs.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Randomized, PrimitiveGradients, ::testing::Range(0, 6));

TEST(Tape, BackwardIsLinearInTheLoss) {
  Rng rng(5);
  Tensor x = random_tensor(rng, {4, 3});
  Tensor w = random_tensor(rng, {3, 2});
  auto l1 = [&] { return ops::sum(ops::exp(ops::matmul(x, w))); };
  auto l2 = [&] { return ops::mean(ops::mul(x, x)); };
  auto grads = [&](auto make) {
    Tape tape;
    tape.backward(make());
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const double alpha = 0.7, beta = -2.5;
  const auto g1 = grads(l1), g2 = grads(l2);
  const auto g = grads([&] { return ops::add(ops::scale(l1(), alpha), ops::scale(l2(), beta)); });
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], alpha * g1[i] + beta * g2[i], 1e-10);
}

TEST(Tape, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(9);
    Tensor x = random_tensor(rng, {1, 2, 6, 6});
    Tensor w = random_tensor(rng, {3, 2, 3, 3});
    Tensor b = random_tensor(rng, {3});
    Tape tape;
    const Tensor y = ops::relu(ops::conv2d(x, w, b, 2, 1));
    tape.backward(ops::sum(ops::mul(y, y)));
    std::vector<double> out(y.data().begin(), y.data().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, OpsOutsideATapeRecordNothing) {
  Tensor x = Tensor::scalar(2, true);
  const Tensor y = ops::mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

}  // namespace
}  // namespace mtsgl
