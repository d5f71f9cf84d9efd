#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "drbert/autodiff.hpp"
#include "drbert/optim.hpp"
#include "drbert/rng.hpp"
#include "drbert/tensor.hpp"

using namespace drbert;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum with fixed random weights so every output entry matters.
ad::Var probe(const ad::Var& y, std::uint64_t seed) {
  Rng rng(seed, 99);
  return ad::sum(ad::mul(y, ad::constant(random_tensor(y->value.shape(), rng))));
}

}  // namespace

TEST(Tensor, RejectsZeroDimension) { EXPECT_THROW(Tensor(Shape{3, 0}), DimensionError); }

TEST(Tensor, RejectsMismatchedData) { EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError); }

TEST(Tensor, RaggedLiteral) { EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError); }

TEST(Tensor, ItemNeedsOneElement) {
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.5).item(), 4.5);
  EXPECT_THROW(Tensor::vector({1, 2}).item(), DimensionError);
}

TEST(Tensor, RowAccess) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.row(1)[2], 6.0);
  EXPECT_EQ(m.at(0, 1), 2.0);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SplitDoesNotDisturbParent) {
  Rng a(7), b(7);
  Rng child = a.split(3);
  (void)child.next_u64();
  EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(Rng(7).split(1).next_u64(), Rng(7).split(2).next_u64());
}

TEST(Rng, BelowStaysInRange) {
  Rng r(1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    auto v = r.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_EQ(r.below(1), 0u);
}

TEST(Rng, ShuffleIsDeterministicPermutation) {
  std::vector<int> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  b = a;
  Rng(3).split(1).shuffle(a);
  Rng(3).split(1).shuffle(b);
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Rng, UniformMoments) {
  Rng r(11);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sq += u * u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
  EXPECT_NEAR(sq / n - 0.25, 1.0 / 12.0, 0.002);
}

// ---------------------------------------------------------------------------

TEST(Autodiff, MatmulValues) {
  auto a = ad::constant(Tensor::matrix({{1, 2}, {3, 4}}));
  auto b = ad::constant(Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(ad::matmul(a, b)->value, Tensor::matrix({{19, 22}, {43, 50}}));
  auto v = ad::constant(Tensor::vector({1, 1}));
  EXPECT_EQ(ad::matmul(v, b)->value, Tensor::vector({12, 14}));
  EXPECT_EQ(ad::matmul(a, v)->value, Tensor::vector({3, 7}));
  EXPECT_THROW(ad::matmul(v, v), DimensionError);
  EXPECT_THROW(ad::matmul(a, ad::constant(Tensor(Shape{3, 2}))), DimensionError);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Rng rng(5);
  auto x = ad::constant(random_tensor({4, 6}, rng, -5, 5));
  auto y = ad::softmax(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (double v : y->value.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Autodiff, SoftmaxMaskZeroesEntries) {
  auto x = ad::constant(Tensor::vector({3.0, 1.0, 2.0}));
  std::vector<std::uint8_t> mask{0, 1, 1};
  auto y = ad::softmax(x, &mask);
  EXPECT_EQ(y->value[0], 0.0);
  EXPECT_NEAR(y->value[1] + y->value[2], 1.0, 1e-12);
  EXPECT_NEAR(y->value[2] / y->value[1], std::exp(1.0), 1e-12);
}

TEST(Autodiff, SoftmaxLargeLogitsStayFinite) {
  auto y = ad::softmax(ad::constant(Tensor::vector({1000.0, 0.0, -1000.0})));
  EXPECT_TRUE(y->value.all_finite());
  EXPECT_NEAR(y->value[0], 1.0, 1e-15);
}

TEST(Autodiff, MaxRowsTiesPickLowestIndex) {
  auto x = ad::parameter(Tensor::matrix({{1, 5}, {3, 5}, {3, 0}}));
  std::vector<std::size_t> arg;
  auto m = ad::max_rows(x, nullptr, &arg);
  EXPECT_EQ(m->value, Tensor::vector({3, 5}));
  EXPECT_EQ(arg, (std::vector<std::size_t>{1, 0}));
  ad::backward(ad::sum(m));
  EXPECT_EQ(x->grad, Tensor::matrix({{0, 1}, {1, 0}, {0, 0}}));
}

TEST(Autodiff, FanOutAccumulates) {
  auto x = ad::parameter(Tensor::scalar(3.0));
  auto y = ad::add(ad::mul(x, x), x);
  ad::backward(y);
  EXPECT_DOUBLE_EQ(x->grad.item(), 7.0);
}

TEST(Autodiff, LeafGradientsAccumulateAcrossCalls) {
  auto x = ad::parameter(Tensor::scalar(2.0));
  auto y = ad::mul(x, x);
  ad::backward(y);
  ad::backward(y);
  EXPECT_DOUBLE_EQ(x->grad.item(), 8.0);
  x->zero_grad();
  ad::backward(y);
  EXPECT_DOUBLE_EQ(x->grad.item(), 4.0);
}

TEST(Autodiff, BackwardNeedsScalarRoot) {
  auto x = ad::parameter(Tensor::vector({1, 2}));
  EXPECT_THROW(ad::backward(ad::tanh(x)), DimensionError);
}

TEST(Autodiff, NonFiniteValueNamesNode) {
  auto x = ad::parameter(Tensor::vector({1.0, NAN}), "bad.weight");
  try {
    ad::backward(ad::sum(x));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.weight"), std::string::npos);
  }
}

TEST(Autodiff, ConstantsGetNoGradient) {
  auto c = ad::constant(Tensor::vector({1, 2}));
  auto p = ad::parameter(Tensor::vector({3, 4}));
  ad::backward(ad::sum(ad::mul(c, p)));
  EXPECT_TRUE(c->grad.empty());
  EXPECT_EQ(p->grad, Tensor::vector({1, 2}));
}

TEST(Autodiff, LogClampedFloor) {
  auto y = ad::log_clamped(ad::constant(Tensor::vector({0.0, 1.0})));
  EXPECT_NEAR(y->value[0], std::log(1e-12), 1e-9);
  EXPECT_EQ(y->value[1], 0.0);
}

TEST(Autodiff, LayerNormNormalizesRows) {
  Rng rng(2);
  auto x = ad::constant(random_tensor({3, 8}, rng, -3, 3));
  auto g = ad::constant(Tensor(Shape{8}, 1.0));
  auto b = ad::constant(Tensor(Shape{8}, 0.0));
  auto y = ad::layer_norm(x, g, b);
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (double v : y->value.row(r)) mean += v / 8;
    for (double v : y->value.row(r)) var += (v - mean) * (v - mean) / 8;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Autodiff, ConcatAndSliceRoundTrip) {
  auto a = ad::constant(Tensor::matrix({{1, 2}, {3, 4}}));
  auto b = ad::constant(Tensor::matrix({{5}, {6}}));
  auto c = ad::concat({a, b}, 1);
  EXPECT_EQ(c->value, Tensor::matrix({{1, 2, 5}, {3, 4, 6}}));
  EXPECT_EQ(ad::slice_cols(c, 2, 3)->value, b->value);
  EXPECT_EQ(ad::concat({a, a}, 0)->value.shape(), (Shape{4, 2}));
  EXPECT_EQ(ad::transpose(a)->value, Tensor::matrix({{1, 3}, {2, 4}}));
}

// One gradient check per primitive, on random inputs with a random probe.
struct OpCase {
  const char* name;
  std::vector<Shape> inputs;
  std::function<ad::Var(const std::vector<ad::Var>&)> build;
  double lo = -1.0, hi = 1.0;
};

void PrintTo(const OpCase& c, std::ostream* os) { *os << c.name; }


class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const OpCase& c = GetParam();
  Rng rng(17);
  std::vector<ad::Var> params;
  for (const auto& s : c.inputs) params.push_back(ad::parameter(random_tensor(s, rng, c.lo, c.hi)));
  auto loss = [&] { return probe(c.build(params), 23); };
  EXPECT_LT(finite_difference_check(loss, params), 1e-6) << c.name;
}

const std::vector<std::uint8_t> kMask4{1, 0, 1, 1};

INSTANTIATE_TEST_SUITE_P(
    Ops, OpGradient,
    ::testing::Values(
        OpCase{"matmul_mm", {{3, 4}, {4, 2}}, [](auto& v) { return ad::matmul(v[0], v[1]); }},
        OpCase{"matmul_vm", {{4}, {4, 2}}, [](auto& v) { return ad::matmul(v[0], v[1]); }},
        OpCase{"matmul_mv", {{3, 4}, {4}}, [](auto& v) { return ad::matmul(v[0], v[1]); }},
        OpCase{"add_same", {{2, 3}, {2, 3}}, [](auto& v) { return ad::add(v[0], v[1]); }},
        OpCase{"add_broadcast", {{4, 3}, {3}}, [](auto& v) { return ad::add(v[0], v[1]); }},
        OpCase{"sub", {{2, 3}, {2, 3}}, [](auto& v) { return ad::sub(v[0], v[1]); }},
        OpCase{"mul_same", {{2, 3}, {2, 3}}, [](auto& v) { return ad::mul(v[0], v[1]); }},
        OpCase{"mul_broadcast", {{4, 3}, {3}}, [](auto& v) { return ad::mul(v[0], v[1]); }},
        OpCase{"scale", {{5}}, [](auto& v) { return ad::scale(v[0], -2.5); }},
        OpCase{"tanh", {{2, 3}}, [](auto& v) { return ad::tanh(v[0]); }, -2, 2},
        OpCase{"sigmoid", {{2, 3}}, [](auto& v) { return ad::sigmoid(v[0]); }, -3, 3},
        OpCase{"relu", {{2, 3}}, [](auto& v) { return ad::relu(v[0]); }, 0.1, 1.0},
        OpCase{"relu_negative", {{2, 3}}, [](auto& v) { return ad::relu(v[0]); }, -1.0, -0.1},
        OpCase{"log", {{2, 3}}, [](auto& v) { return ad::log_clamped(v[0]); }, 0.2, 2.0},
        OpCase{"softmax", {{3, 4}}, [](auto& v) { return ad::softmax(v[0]); }, -2, 2},
        OpCase{"softmax_masked", {{2, 4}}, [](auto& v) { return ad::softmax(v[0], &kMask4); }, -2, 2},
        OpCase{"max_rows", {{4, 3}}, [](auto& v) { return ad::max_rows(v[0]); }},
        OpCase{"max_rows_masked", {{4, 3}}, [](auto& v) { return ad::max_rows(v[0], &kMask4); }},
        OpCase{"mean_rows", {{4, 3}}, [](auto& v) { return ad::mean_rows(v[0]); }},
        OpCase{"concat_rows", {{2, 3}, {1, 3}}, [](auto& v) { return ad::concat({v[0], v[1]}, 0); }},
        OpCase{"concat_cols", {{2, 3}, {2, 1}}, [](auto& v) { return ad::concat({v[0], v[1]}, 1); }},
        OpCase{"concat_vec", {{3}, {2}}, [](auto& v) { return ad::concat({v[0], v[1]}, 0); }},
        OpCase{"transpose", {{2, 3}}, [](auto& v) { return ad::transpose(v[0]); }},
        OpCase{"slice_cols", {{3, 5}}, [](auto& v) { return ad::slice_cols(v[0], 1, 4); }},
        OpCase{"gather_rows", {{4, 2}}, [](auto& v) { return ad::gather_rows(v[0], {3, 0, 3}); }},
        OpCase{"reshape", {{2, 3}}, [](auto& v) { return ad::reshape(v[0], Shape{3, 2}); }},
        OpCase{"sum", {{2, 3}}, [](auto& v) { return ad::mul(ad::sum(v[0]), ad::sum(v[0])); }},
        OpCase{"layer_norm", {{3, 5}, {5}, {5}},
               [](auto& v) { return ad::layer_norm(v[0], v[1], v[2]); }}),
    [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });

// ---------------------------------------------------------------------------

TEST(Init, UniformFanInBoundsAndMean) {
  Rng rng(0);
  Tensor t = seeded_init({64, 64}, InitScheme::kUniformFanIn, rng);
  double sum = 0.0;
  for (double v : t.data()) {
    ASSERT_LE(std::abs(v), 0.125);
    sum += v;
  }
  EXPECT_NEAR(sum / t.size(), 0.0, 0.01);
}

TEST(Init, ZerosAndDeterminism) {
  Rng a(4), b(4);
  EXPECT_EQ(seeded_init({3, 3}, InitScheme::kUniformFanIn, a), seeded_init({3, 3}, InitScheme::kUniformFanIn, b));
  Rng c(4);
  Tensor z = seeded_init({5}, InitScheme::kZeros, c);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(seeded_init({}, InitScheme::kZeros, c), ValidationError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto w = ad::parameter(Tensor::vector({1.0, -2.0}));
  Adam opt(AdamOptions{0.01});
  ad::backward(ad::sum(ad::mul(w, ad::constant(Tensor::vector({3.0, -0.5})))));
  opt.step({w});
  EXPECT_NEAR(w->value[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(w->value[1], -2.0 + 0.01, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  auto w = ad::parameter(Tensor::vector({0.5}));
  Adam opt;
  w->grad = Tensor(Shape{1});
  opt.step({w});
  EXPECT_EQ(w->value[0], 0.5);
  auto untouched = ad::parameter(Tensor::vector({0.25}));
  Adam opt2;
  opt2.step({untouched});
  EXPECT_EQ(untouched->value[0], 0.25);
}

TEST(Adam, MinimizesQuadratic) {
  auto w = ad::parameter(Tensor::scalar(1.0));
  Adam opt(AdamOptions{0.1});
  for (int i = 0; i < 100; ++i) {
    zero_grads({w});
    ad::backward(ad::mul(w, w));
    opt.step({w});
  }
  EXPECT_LT(std::abs(w->value.item()), 0.1);
}

TEST(Adam, ShapeChangeRejected) {
  auto w = ad::parameter(Tensor::vector({1.0}));
  Adam opt;
  ad::backward(ad::sum(w));
  opt.step({w});
  EXPECT_THROW(opt.step({w, w}), DimensionError);
}

TEST(FiniteDifference, DetectsWrongGradient) {
  auto w = ad::parameter(Tensor::vector({0.3, -0.7}));
  // A hand-made node whose backward doubles the true gradient.
  auto wrong = [&] {
    auto n = std::make_shared<ad::Node>();
    n->op = "wrong";
    n->value = Tensor::scalar(w->value[0] * w->value[0] + w->value[1]);
    n->requires_grad = true;
    n->inputs = {w};
    n->backward_fn = [w](ad::Node& self) {
      double g = self.grad.item();
      auto& wg = w->grad_buffer();
      wg[0] += 4.0 * w->value[0] * g;
      wg[1] += 2.0 * g;
    };
    return ad::Var(n);
  };
  EXPECT_GT(finite_difference_check(wrong, {w}), 0.4);
  auto right = [&] { return ad::add(ad::mul(ad::slice_cols(ad::reshape(w, {1, 2}), 0, 1),
                                            ad::slice_cols(ad::reshape(w, {1, 2}), 0, 1)),
                                    ad::slice_cols(ad::reshape(w, {1, 2}), 1, 2)); };
  EXPECT_LT(finite_difference_check([&] { return ad::sum(right()); }, {w}), 1e-8);
  EXPECT_THROW(finite_difference_check(wrong, {w}, 0.0), ValidationError);
}
