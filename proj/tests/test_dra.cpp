#include <gtest/gtest.h>

#include <cmath>

#include "drbert/dra.hpp"
#include "drbert/optim.hpp"

using namespace drbert;

namespace {

Tensor rand_t(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

DraParams random_dra(std::size_t d_model, std::size_t d_gru, std::size_t d_attn, std::size_t steps,
                     std::uint64_t seed, double lambda = 1.0) {
  Rng rng(seed);
  auto p = [&](const Shape& s, double scale = 1.0) { return ad::parameter(rand_t(s, rng, -scale, scale)); };
  DraParams d;
  d.w_s = p({d_model, d_attn});
  d.w_d = p({d_gru, d_attn});
  d.w_a = p({d_model, d_attn});
  d.omega = p({d_attn});
  d.proj_w = p({d_model, d_gru});
  d.proj_b = p({d_gru}, 0.1);
  d.gru_z = p({d_gru + d_model, d_gru});
  d.gru_r = p({d_gru + d_model, d_gru});
  d.gru_h = p({d_gru + d_model, d_gru});
  d.lambda = lambda;
  d.steps = steps;
  return d;
}

std::vector<ad::Var> dra_params(const DraParams& d) {
  return {d.w_s, d.w_d, d.w_a, d.omega, d.proj_w, d.proj_b, d.gru_z, d.gru_r, d.gru_h};
}

double entropy(const Tensor& p) {
  double h = 0;
  for (double v : p.data())
    if (v > 0) h -= v * std::log(v);
  return h;
}

}  // namespace

TEST(ReweightLogits, ZeroOmegaGivesZeroScores) {
  DraParams d = random_dra(4, 3, 5, 1, 1);
  d.omega = ad::constant(Tensor(Shape{5}));
  Rng rng(2);
  auto m = reweight_logits(ad::constant(rand_t({6, 4}, rng)), ad::constant(rand_t({3}, rng)),
                           ad::constant(rand_t({4}, rng)), d);
  for (double v : m->value.data()) EXPECT_EQ(v, 0.0);
}

TEST(ReweightLogits, ZeroWsMakesScoresEqual) {
  DraParams d = random_dra(4, 3, 5, 1, 1);
  d.w_s = ad::constant(Tensor(Shape{4, 5}));
  Rng rng(3);
  auto m = reweight_logits(ad::constant(rand_t({6, 4}, rng)), ad::constant(rand_t({3}, rng)),
                           ad::constant(rand_t({4}, rng)), d);
  for (double v : m->value.data()) EXPECT_NEAR(v, m->value[0], 1e-15);
}

TEST(ReweightLogits, MatchesTokenByTokenLoop) {
  const std::size_t l = 7, dm = 5, dg = 4, da = 6;
  DraParams d = random_dra(dm, dg, da, 1, 7);
  Rng rng(8);
  Tensor S = rand_t({l, dm}, rng), h = rand_t({dg}, rng), a = rand_t({dm}, rng);
  Tensor m = reweight_logits(ad::constant(S), ad::constant(h), ad::constant(a), d)->value;
  const Tensor &Ws = d.w_s->value, &Wd = d.w_d->value, &Wa = d.w_a->value, &om = d.omega->value;
  for (std::size_t i = 0; i < l; ++i) {
    double mi = 0;
    for (std::size_t k = 0; k < da; ++k) {
      double pre = 0;
      for (std::size_t j = 0; j < dm; ++j) pre += S.at(i, j) * Ws.at(j, k) + a[j] * Wa.at(j, k);
      for (std::size_t j = 0; j < dg; ++j) pre += h[j] * Wd.at(j, k);
      mi += om[k] * std::tanh(pre);
    }
    EXPECT_NEAR(m[i], mi, 1e-12) << "token " << i;
  }
}

TEST(SoftSelect, SmallLambdaAveragesRows) {
  auto S = ad::constant(Tensor::matrix({{1, 2}, {3, 6}, {5, 1}}));
  auto m = ad::constant(Tensor::vector({2, 1, 0}));
  Tensor a = soft_select(S, m, 1e-12, {1, 1, 1})->value;
  EXPECT_NEAR(a[0], 3.0, 1e-9);
  EXPECT_NEAR(a[1], 3.0, 1e-9);
}

TEST(SoftSelect, LargeLambdaPicksTop) {
  auto S = ad::constant(Tensor::matrix({{1, 2}, {3, 6}, {5, 1}}));
  auto m = ad::constant(Tensor::vector({2, 1, 0}));
  ad::Var alpha;
  Tensor a = soft_select(S, m, 100.0, {1, 1, 1}, &alpha)->value;
  EXPECT_GE(alpha->value[0], 1.0 - 3e-44);
  EXPECT_NEAR(a[0], 1.0, 1e-12);
  EXPECT_NEAR(a[1], 2.0, 1e-12);
}

TEST(SoftSelect, MaskExcludesPositions) {
  auto S = ad::constant(Tensor::matrix({{1, 2}, {3, 6}, {5, 1}}));
  auto m = ad::constant(Tensor::vector({9, 1, 0}));
  ad::Var alpha;
  soft_select(S, m, 100.0, {0, 1, 1}, &alpha);
  EXPECT_EQ(alpha->value[0], 0.0);
  EXPECT_NEAR(alpha->value[1], 1.0, 1e-12);
}

TEST(SoftSelect, Errors) {
  auto S = ad::constant(Tensor::matrix({{1, 2}, {3, 6}}));
  EXPECT_THROW(soft_select(S, ad::constant(Tensor::vector({1, 2})), 0.0, {1, 1}), ValidationError);
  EXPECT_THROW(soft_select(S, ad::constant(Tensor::vector({1, 2, 3})), 1.0, {1, 1}), DimensionError);
}

TEST(SoftSelect, EntropyNonIncreasingInLambda) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto S = ad::constant(rand_t({6, 3}, rng));
    auto m = ad::constant(rand_t({6}, rng));
    std::vector<std::uint8_t> mask(6, 1);
    double prev = INFINITY;
    for (double lambda : {0.1, 1.0, 10.0, 100.0}) {
      ad::Var alpha;
      soft_select(S, m, lambda, mask, &alpha);
      double h = entropy(alpha->value);
      EXPECT_LE(h, prev + 1e-12);
      prev = h;
    }
  }
}

TEST(SoftSelect, ArgmaxInvariantToLambdaAndShift) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto S = ad::constant(rand_t({5, 2}, rng));
    Tensor mv = rand_t({5}, rng);
    std::size_t best = 0;
    for (std::size_t i = 1; i < 5; ++i)
      if (mv[i] > mv[best]) best = i;
    for (double lambda : {0.1, 1.0, 10.0, 100.0}) {
      for (double shift : {0.0, 3.5, -20.0}) {
        Tensor shifted = mv;
        for (auto& v : shifted.data()) v += shift;
        ad::Var alpha;
        soft_select(S, ad::constant(shifted), lambda, std::vector<std::uint8_t>(5, 1), &alpha);
        auto w = alpha->value.values();
        EXPECT_EQ(static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin()), best);
      }
    }
  }
}

TEST(SoftSelect, SharpBoundWithGap) {
  // Top-two gap 0.2 and 50 candidates: top weight >= 1 - 50 e^-20.
  Tensor m(Shape{50});
  for (std::size_t i = 0; i < 50; ++i) m[i] = -0.2 - 0.01 * static_cast<double>(i);
  m[17] = 0.0;
  auto S = ad::constant(Tensor(Shape{50, 1}, 1.0));
  ad::Var alpha;
  soft_select(S, ad::constant(m), 100.0, std::vector<std::uint8_t>(50, 1), &alpha);
  EXPECT_GE(alpha->value[17], 1.0 - 1e-6);
}

TEST(Gru, ZeroWeightsHalveState) {
  DraParams d;
  d.gru_z = d.gru_r = d.gru_h = ad::constant(Tensor(Shape{5, 3}));
  Tensor h = gru_step(ad::constant(Tensor::vector({1, 2})), ad::constant(Tensor::vector({0.4, -2, 6})), d)->value;
  EXPECT_EQ(h, Tensor::vector({0.2, -1, 3}));
}

TEST(Gru, ClosedUpdateGateKeepsState) {
  Rng rng(6);
  DraParams d = random_dra(2, 3, 2, 1, 9);
  // Row 3 reads a_t[0]; a large negative weight drives z to 0.
  Tensor wz(Shape{5, 3});
  for (std::size_t j = 0; j < 3; ++j) wz.at(3, j) = -1e3;
  d.gru_z = ad::constant(wz);
  Tensor hp = rand_t({3}, rng);
  Tensor h = gru_step(ad::constant(Tensor::vector({1, 0})), ad::constant(hp), d)->value;
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(h[i], hp[i], 1e-12);
}

TEST(Gru, StateStaysBounded) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    DraParams d = random_dra(3, 4, 2, 1, 100 + trial);
    for (auto* w : {&d.gru_z, &d.gru_r, &d.gru_h}) *w = ad::constant(rand_t({7, 4}, rng, -3, 3));
    Tensor hp = rand_t({4}, rng, -2, 2);
    Tensor h = gru_step(ad::constant(rand_t({3}, rng, -2, 2)), ad::constant(hp), d)->value;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_LE(std::abs(h[i]), std::max(std::abs(hp[i]), 1.0) + 1e-12);
  }
}

TEST(Gru, GradientCheck) {
  DraParams d = random_dra(3, 4, 2, 1, 12);
  Rng rng(13);
  auto a = ad::parameter(rand_t({3}, rng));
  auto h = ad::parameter(rand_t({4}, rng));
  auto loss = [&] { return ad::sum(ad::mul(gru_step(a, h, d), ad::constant(Tensor::vector({1, -2, 0.5, 3})))); };
  EXPECT_LT(finite_difference_check(loss, {a, h, d.gru_z, d.gru_r, d.gru_h}), 1e-6);
}

TEST(Rollout, OneStepEqualsManualComposition) {
  DraParams d = random_dra(4, 3, 5, 1, 14, 100.0);
  Rng rng(15);
  auto S = ad::constant(rand_t({6, 4}, rng));
  auto hs = ad::constant(rand_t({4}, rng));
  auto a = ad::constant(rand_t({4}, rng));
  std::vector<std::uint8_t> sel{0, 1, 1, 1, 1, 0};
  Tensor got = dra_rollout(S, sel, hs, a, d)->value;
  auto h0 = ad::add(ad::matmul(hs, d.proj_w), d.proj_b);
  auto a1 = soft_select(S, reweight_logits(S, h0, a, d), d.lambda, sel);
  EXPECT_EQ(got, gru_step(a1, h0, d)->value);
}

TEST(Rollout, TraceHasOneSimplexPerStep) {
  DraParams d = random_dra(4, 3, 5, 4, 16, 100.0);
  Rng rng(17);
  auto S = ad::constant(rand_t({6, 4}, rng));
  std::vector<std::uint8_t> sel{0, 1, 1, 1, 1, 0};
  DraTrace trace;
  Tensor h = dra_rollout(S, sel, ad::constant(rand_t({4}, rng)), ad::constant(rand_t({4}, rng)), d, &trace)->value;
  ASSERT_EQ(trace.steps.size(), 4u);
  for (const auto& st : trace.steps) {
    double s = 0;
    for (double v : st.alpha.data()) s += v;
    EXPECT_NEAR(s, 1.0, 1e-6);
    EXPECT_EQ(st.alpha[0], 0.0);
    EXPECT_EQ(st.alpha[5], 0.0);
    EXPECT_TRUE(sel[st.selected]);
  }
  EXPECT_EQ(trace.steps.back().state, h);
}

TEST(Rollout, Deterministic) {
  DraParams d = random_dra(4, 3, 5, 3, 18, 100.0);
  Rng rng(19);
  auto S = ad::constant(rand_t({5, 4}, rng));
  auto hs = ad::constant(rand_t({4}, rng));
  auto a = ad::constant(rand_t({4}, rng));
  std::vector<std::uint8_t> sel(5, 1);
  EXPECT_EQ(dra_rollout(S, sel, hs, a, d)->value, dra_rollout(S, sel, hs, a, d)->value);
}

TEST(Rollout, RejectsZeroSteps) {
  DraParams d = random_dra(2, 2, 2, 0, 20);
  auto S = ad::constant(Tensor(Shape{2, 2}, 1.0));
  EXPECT_THROW(dra_rollout(S, {1, 1}, ad::constant(Tensor(Shape{2})), ad::constant(Tensor(Shape{2})), d),
               ValidationError);
}

TEST(Rollout, GradientCheckThreeSteps) {
  // A moderate lambda keeps the finite-difference probe off the flat tails.
  DraParams d = random_dra(4, 3, 5, 3, 21, 2.0);
  Rng rng(22);
  auto S = ad::parameter(rand_t({5, 4}, rng));
  auto hs = ad::parameter(rand_t({4}, rng));
  auto a = ad::parameter(rand_t({4}, rng));
  std::vector<std::uint8_t> sel{0, 1, 1, 1, 0};
  auto params = dra_params(d);
  params.insert(params.end(), {S, hs, a});
  auto loss = [&] { return ad::sum(ad::mul(dra_rollout(S, sel, hs, a, d), ad::constant(Tensor::vector({1, -1, 2})))); };
  EXPECT_LT(finite_difference_check(loss, params), 1e-4);
}

TEST(Rollout, NoHardArgmaxOnValuePath) {
  // Nudging a non-top logit changes the output, so selection stays soft.
  DraParams d = random_dra(3, 2, 4, 1, 23, 1.0);
  Rng rng(24);
  auto S = ad::parameter(rand_t({4, 3}, rng));
  std::vector<std::uint8_t> sel(4, 1);
  auto hs = ad::constant(rand_t({3}, rng));
  auto a = ad::constant(rand_t({3}, rng));
  zero_grads({S});
  ad::backward(ad::sum(dra_rollout(S, sel, hs, a, d)));
  int nonzero_rows = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    double n = 0;
    for (double v : S->grad.row(r)) n += std::abs(v);
    nonzero_rows += n > 0;
  }
  EXPECT_EQ(nonzero_rows, 4);
}
