#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "moledit/numerics.hpp"

using namespace moledit;
using namespace moledit::num;

namespace {

Tensor param(Shape shape, Rng& rng, double sd = 1.0) {
  return Tensor::randn(std::move(shape), sd, rng, true);
}

// Values bounded away from zero so relu kinks stay outside the fd step.
Tensor param_off_zero(Shape shape, Rng& rng) {
  auto t = Tensor::randn(std::move(shape), 1.0, rng, true);
  for (auto& v : t.mutable_data()) v = v >= 0 ? v + 0.1 : v - 0.1;
  return t;
}

// Projects a tensor to a scalar with fixed random weights so that every
// output coordinate contributes a distinct gradient.
Tensor project(const Tensor& t, std::uint64_t seed = 99) {
  Rng rng(seed);
  const auto w = Tensor::randn(t.shape(), 1.0, rng);
  return sum_all(mul(t, w));
}

}  // namespace

TEST(Ops, Basics) {
  const auto sm = softmax(Tensor::zeros({3}), 0);
  for (double v : sm.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  Rng rng(1);
  const auto a = Tensor::randn({2, 3}, 1.0, rng);
  const auto ia = matmul(Tensor::identity(2), a);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(ia.at(i), a.at(i));

  const std::size_t target[] = {0};
  EXPECT_NEAR(cross_entropy(Tensor::zeros({1, 2}), target).item(), std::log(2.0), 1e-15);
}

TEST(Ops, ShapeErrorsReportBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const ShapeMismatch& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeMismatch);
  EXPECT_THROW(backward(Tensor::zeros({2}, true)), NonScalarLoss);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(2);
  const auto x = Tensor::randn({5, 7}, 10.0, rng);
  const auto s = softmax(x, 1);
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GT(s.at(r, c), 0.0);
      sum += s.at(r, c);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  const auto cols = softmax(x, 0);
  double sum = 0.0;
  for (std::size_t r = 0; r < 5; ++r) sum += cols.at(r, 3);
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Ops, ShiftAndPrefixMean) {
  const auto x = Tensor::from({3, 1}, {1, 2, 3});
  const auto down = shift_rows(x, 1);
  EXPECT_EQ(std::vector<double>(down.data().begin(), down.data().end()),
            (std::vector<double>{0, 1, 2}));
  const auto up = shift_rows(x, -1);
  EXPECT_EQ(std::vector<double>(up.data().begin(), up.data().end()),
            (std::vector<double>{2, 3, 0}));
  const auto pm = prefix_mean_rows(x);
  EXPECT_DOUBLE_EQ(pm.at(2), 2.0);
  EXPECT_DOUBLE_EQ(pm.at(1), 1.5);
}

TEST(Backward, SimpleGradients) {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  backward(sum_all(scale(x, 2.5)));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.5);

  auto y = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  backward(mean_all(y));
  for (double g : y.grad()) EXPECT_DOUBLE_EQ(g, 0.25);

  // Gradients accumulate across uses.
  auto z = Tensor::from({2}, {1, 1}, true);
  backward(sum_all(add(z, z)));
  for (double g : z.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  const auto y = scale(x, 3.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Graph, RecordIsTopological) {
  auto x = Tensor::from({2}, {1, 2}, true);
  const auto y = sum_all(mul(relu(x), x));
  const auto recs = record_graph(y);
  ASSERT_FALSE(recs.empty());
  EXPECT_EQ(recs.back().op, "sum_all");
  for (std::size_t i = 0; i < recs.size(); ++i)
    for (auto in : recs[i].inputs) EXPECT_LT(in, i);
}

// ---------------------------------------------------------------------------
// Gradient checks, one per differentiable op.

class GradCheck : public ::testing::Test {
 protected:
  void expect_ok(const std::function<Tensor()>& f, std::vector<Tensor> params,
                 double tol = 1e-6) {
    EXPECT_LE(fd_check(f, params), tol);
  }
  Rng rng{7};
};

TEST_F(GradCheck, Matmul) {
  auto a = param({3, 4}, rng), b = param({4, 2}, rng);
  expect_ok([&] { return project(matmul(a, b)); }, {a, b});
}

TEST_F(GradCheck, Transpose) {
  auto a = param({3, 4}, rng);
  expect_ok([&] { return project(transpose(a)); }, {a});
}

TEST_F(GradCheck, AddSubMulAndBias) {
  auto a = param({3, 4}, rng), b = param({3, 4}, rng), bias = param({4}, rng);
  expect_ok([&] { return project(mul(sub(add(a, bias), b), a)); }, {a, b, bias});
}

TEST_F(GradCheck, ScaleAndScaleBy) {
  auto a = param({2, 3}, rng), s = param({1}, rng);
  expect_ok([&] { return project(scale_by(scale(a, -1.7), s)); }, {a, s});
}

TEST_F(GradCheck, Relu) {
  auto a = param_off_zero({4, 4}, rng);
  expect_ok([&] { return project(relu(a)); }, {a});
}

TEST_F(GradCheck, SoftmaxBothAxes) {
  auto a = param({3, 5}, rng);
  expect_ok([&] { return project(softmax(a, 1)); }, {a});
  expect_ok([&] { return project(softmax(a, 0)); }, {a});
}

TEST_F(GradCheck, LayerNorm) {
  auto x = param({3, 6}, rng), g = param({6}, rng), b = param({6}, rng);
  expect_ok([&] { return project(layer_norm(x, g, b)); }, {x, g, b});
}

TEST_F(GradCheck, EmbeddingAndIndexAdd) {
  auto table = param({6, 3}, rng), base = param({4, 3}, rng), src = param({3, 3}, rng);
  const std::size_t ids[] = {1, 4, 1, 0};
  const std::size_t rows[] = {0, 3, 0};
  expect_ok([&] { return project(embedding_lookup(table, ids)); }, {table});
  expect_ok([&] { return project(index_add_rows(base, src, rows)); }, {base, src});
}

TEST_F(GradCheck, MeansAndSums) {
  auto a = param({3, 4}, rng);
  expect_ok([&] { return project(mean(a, 0)); }, {a});
  expect_ok([&] { return project(mean(a, 1)); }, {a});
  expect_ok([&] { return scale(mean_all(mul(a, a)), 3.0); }, {a});
}

TEST_F(GradCheck, ConcatBothAxes) {
  auto a = param({2, 3}, rng), b = param({2, 3}, rng);
  expect_ok([&] {
    const Tensor parts[] = {a, b};
    return project(concat(parts, 0));
  }, {a, b});
  expect_ok([&] {
    const Tensor parts[] = {a, b};
    return project(concat(parts, 1));
  }, {a, b});
}

TEST_F(GradCheck, ShiftPrefixPick) {
  auto a = param({4, 3}, rng);
  expect_ok([&] { return project(shift_rows(a, 1)); }, {a});
  expect_ok([&] { return project(shift_rows(a, -2)); }, {a});
  expect_ok([&] { return project(prefix_mean_rows(a)); }, {a});
  expect_ok([&] { return scale(pick(a, 5), 2.0); }, {a});
  expect_ok([&] { return project(slice_rows(a, 1, 3)); }, {a});
}

TEST_F(GradCheck, CrossEntropy) {
  auto logits = param({4, 6}, rng);
  const std::size_t targets[] = {0, 5, 2, 2};
  expect_ok([&] { return cross_entropy(logits, targets); }, {logits});
}

TEST_F(GradCheck, ThreeLayerMlp) {
  auto x = param({5, 4}, rng);
  auto w1 = param({4, 8}, rng, 0.5), b1 = param({8}, rng);
  auto w2 = param({8, 8}, rng, 0.5), b2 = param({8}, rng);
  auto w3 = param({8, 3}, rng, 0.5);
  const std::size_t targets[] = {0, 1, 2, 1, 0};
  auto f = [&] {
    const auto h1 = relu(add(matmul(x, w1), b1));
    const auto h2 = relu(add(matmul(h1, w2), b2));
    return cross_entropy(matmul(h2, w3), targets);
  };
  std::vector<Tensor> params{w1, b1, w2, b2, w3};
  EXPECT_LE(fd_check(f, params), 1e-4);
}

TEST(FdCheck, AnalyticCases) {
  Rng rng(3);
  std::vector<Tensor> xs{Tensor::randn({6}, 1.0, rng, true)};
  EXPECT_LE(fd_check([&] { return sum_all(mul(xs[0], xs[0])); }, xs), 1e-6);
  xs[0].zero_grad();
  backward(sum_all(mul(xs[0], xs[0])));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(xs[0].grad()[i], 2.0 * xs[0].at(i));
  EXPECT_EQ(fd_check([&] { return Tensor::scalar(3.0); }, xs), 0.0);
}

// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradLeavesParams) {
  auto p = Tensor::from({2}, {1.0, -1.0}, true);
  p.zero_grad();
  Adam adam({.lr = 0.1});
  std::vector<Tensor> ps{p};
  adam.step(ps);
  EXPECT_DOUBLE_EQ(p.at(0), 1.0);
  EXPECT_DOUBLE_EQ(p.at(1), -1.0);
}

TEST(Adam, FirstStepHandFormula) {
  auto p = Tensor::from({2}, {1.0, 1.0}, true);
  backward(sum_all(mul(p, Tensor::from({2}, {3.0, -0.5}))));
  Adam adam({.lr = 0.01});
  std::vector<Tensor> ps{p};
  adam.step(ps);
  // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  EXPECT_NEAR(p.at(0), 1.0 - 0.01 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.at(1), 1.0 + 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
  const double after_one = p.at(0);
  adam.step(ps);
  EXPECT_LT(p.at(0), after_one);
}

TEST(Determinism, SameSeedSameTrajectory) {
  auto run = [] {
    Rng rng(42);
    auto w = Tensor::randn({3, 3}, 1.0, rng, true);
    const auto x = Tensor::randn({4, 3}, 1.0, rng);
    const std::size_t t[] = {0, 1, 2, 0};
    Adam adam({.lr = 0.05});
    std::vector<Tensor> ps{w};
    for (int i = 0; i < 20; ++i) {
      w.zero_grad();
      backward(cross_entropy(matmul(x, w), t));
      adam.step(ps);
    }
    return std::vector<double>(w.data().begin(), w.data().end());
  };
  EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripAndLayout) {
  Rng rng(4);
  NamedTensors tensors = {{"enc/w", Tensor::randn({2, 3}, 1.0, rng)},
                          {"bias", Tensor::from({1}, {0.5})}};
  std::stringstream buf;
  write_checkpoint(buf, tensors);
  const std::string bytes = buf.str();
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(0, 4), "MEKT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // version, little-endian
  // 8 header + (4 + 5 + 4 + 8 + 48) + (4 + 4 + 4 + 4 + 8)
  EXPECT_EQ(bytes.size(), 8u + 69u + 24u);

  std::stringstream in(bytes);
  const auto back = read_checkpoint(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].first, "enc/w");
  EXPECT_EQ(back[0].second.shape(), (Shape{2, 3}));
  EXPECT_EQ(checksum(back), checksum(tensors));

  tensors[1].second.mutable_data()[0] = 0.25;
  EXPECT_NE(checksum(back), checksum(tensors));
}

TEST(Checkpoint, RejectsBadMagic) {
  std::stringstream in("NOPE\x01\x00\x00\x00");
  EXPECT_THROW(read_checkpoint(in), Error);
}
