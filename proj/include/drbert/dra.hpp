#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drbert/autodiff.hpp"
#include "drbert/error.hpp"

namespace drbert {

/// Dynamic re-weighting adapter parameters. Matrices follow the x*W
/// convention: a row vector times W maps the input width to the output
/// width.
struct DraParams {
  ad::Var w_s;      // d_model x d_attn, scores sentence words
  ad::Var w_d;      // d_gru x d_attn, scores the previous state
  ad::Var w_a;      // d_model x d_attn, scores the aspect
  ad::Var omega;    // d_attn
  ad::Var proj_w;   // d_model x d_gru, h_s -> h_0
  ad::Var proj_b;   // d_gru
  ad::Var gru_z;    // (d_gru + d_model) x d_gru
  ad::Var gru_r;    // (d_gru + d_model) x d_gru
  ad::Var gru_h;    // (d_gru + d_model) x d_gru
  double lambda = 100.0;
  std::size_t steps = 7;
};

struct DraStep {
  Tensor alpha;            // selection weights over all l positions (zero where masked)
  std::size_t selected;    // argmax of alpha
  Tensor state;            // h_t
};

struct DraTrace {
  std::vector<DraStep> steps;
};

/// m = omega^T tanh(S W_s + (h_prev W_d + a W_a) broadcast over tokens).
inline ad::Var reweight_logits(const ad::Var& S, const ad::Var& h_prev, const ad::Var& aspect, const DraParams& p) {
  if (S->value.rank() != 2) throw DimensionError("reweight_logits: S must be rank 2, got " + shape_str(S->value.shape()));
  ad::Var query = ad::add(ad::matmul(h_prev, p.w_d), ad::matmul(aspect, p.w_a));
  ad::Var M = ad::add(ad::matmul(S, p.w_s), query);
  return ad::matmul(ad::tanh(M), p.omega);
}

/// Sharpened softmax selection: a_t = sum_i softmax(lambda m)_i s_i, with
/// positions where `mask` is zero excluded. `alpha` receives the weights.
inline ad::Var soft_select(const ad::Var& S, const ad::Var& logits, double lambda,
                           const std::vector<std::uint8_t>& mask, ad::Var* alpha = nullptr) {
  if (!(lambda > 0.0)) throw ValidationError("soft_select: lambda must be positive");
  if (logits->value.rank() != 1 || S->value.rank() != 2 || logits->value.dim(0) != S->value.dim(0)) {
    throw DimensionError("soft_select: logits " + shape_str(logits->value.shape()) + " vs S " +
                         shape_str(S->value.shape()));
  }
  ad::Var weights = ad::softmax(ad::scale(logits, lambda), &mask);
  if (alpha) *alpha = weights;
  return ad::matmul(weights, S);
}

/// z = sig([h,a] Wz); r = sig([h,a] Wr); h~ = tanh([r*h, a] W); h' = (1-z)*h + z*h~.
inline ad::Var gru_step(const ad::Var& a_t, const ad::Var& h_prev, const DraParams& p) {
  ad::Var x = ad::concat({h_prev, a_t}, 0);
  ad::Var z = ad::sigmoid(ad::matmul(x, p.gru_z));
  ad::Var r = ad::sigmoid(ad::matmul(x, p.gru_r));
  ad::Var candidate = ad::tanh(ad::matmul(ad::concat({ad::mul(r, h_prev), a_t}, 0), p.gru_h));
  return ad::add(h_prev, ad::mul(z, ad::sub(candidate, h_prev)));
}

/// Projects h_s into the recurrent width, then runs `steps` rounds of
/// score -> select -> GRU. Returns h_T.
inline ad::Var dra_rollout(const ad::Var& S, const std::vector<std::uint8_t>& selectable, const ad::Var& h_s,
                           const ad::Var& aspect, const DraParams& p, DraTrace* trace = nullptr) {
  if (p.steps == 0) throw ValidationError("dra_rollout: re-weighting length must be at least 1");
  if (S->value.rank() != 2 || S->value.dim(0) == 0) throw DimensionError("dra_rollout: empty sentence");
  ad::Var h = ad::add(ad::matmul(h_s, p.proj_w), p.proj_b);
  for (std::size_t t = 0; t < p.steps; ++t) {
    ad::Var logits = reweight_logits(S, h, aspect, p);
    ad::Var alpha;
    ad::Var a_t = soft_select(S, logits, p.lambda, selectable, &alpha);
    h = gru_step(a_t, h, p);
    if (trace) {
      const auto& w = alpha->value;
      std::size_t best = 0;
      for (std::size_t i = 1; i < w.size(); ++i)
        if (w[i] > w[best]) best = i;
      trace->steps.push_back({w, best, h->value});
    }
  }
  return h;
}

}  // namespace drbert
