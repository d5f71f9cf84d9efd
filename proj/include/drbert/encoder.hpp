#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "drbert/autodiff.hpp"
#include "drbert/error.hpp"
#include "drbert/rng.hpp"

namespace drbert {

/// Dropout is active only when `training` is set and a stream is supplied.
struct ForwardMode {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

/// Inverted dropout: kept entries are scaled by 1/(1-p).
inline ad::Var dropout(const ad::Var& x, const ForwardMode& mode) {
  if (!mode.training || mode.dropout <= 0.0 || mode.rng == nullptr) return x;
  Tensor keep(x->value.shape());
  double scale = 1.0 / (1.0 - mode.dropout);
  for (auto& v : keep.data()) v = mode.rng->uniform() < mode.dropout ? 0.0 : scale;
  return ad::mul(x, ad::constant(std::move(keep)));
}

struct EncoderLayerParams {
  ad::Var wq, wk, wv, wo;  // d_model x d_model; head h owns columns [h*dk, (h+1)*dk)
  ad::Var w1, b1;          // d_model x d_ff, d_ff
  ad::Var w2, b2;          // d_ff x d_model, d_model
  ad::Var ln1_gain, ln1_bias;
  ad::Var ln2_gain, ln2_bias;
  std::size_t n_heads = 1;
};

namespace detail {

inline void require_unmasked(const std::vector<std::uint8_t>& mask, const char* op) {
  for (auto m : mask)
    if (m) return;
  throw ValidationError(std::string(op) + ": every position is masked");
}

}  // namespace detail

/// Scaled dot-product attention per head with masked keys, heads
/// concatenated and projected by wo. x is l x d_model.
inline ad::Var multi_head_self_attention(const ad::Var& x, const std::vector<std::uint8_t>& mask,
                                         const EncoderLayerParams& p,
                                         std::vector<Tensor>* attention = nullptr) {
  const Shape& s = x->value.shape();
  if (s.size() != 2) throw DimensionError("multi_head_self_attention: expected rank 2, got " + shape_str(s));
  if (mask.size() != s[0]) {
    throw DimensionError("multi_head_self_attention: mask length " + std::to_string(mask.size()) +
                         " for sequence of " + std::to_string(s[0]));
  }
  detail::require_unmasked(mask, "multi_head_self_attention");
  std::size_t d_model = s[1];
  if (p.n_heads == 0 || d_model % p.n_heads != 0) {
    throw DimensionError("multi_head_self_attention: d_model " + std::to_string(d_model) +
                         " not divisible by n_heads " + std::to_string(p.n_heads));
  }
  std::size_t dk = d_model / p.n_heads;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  ad::Var q = ad::matmul(x, p.wq);
  ad::Var k = ad::matmul(x, p.wk);
  ad::Var v = ad::matmul(x, p.wv);
  std::vector<ad::Var> heads;
  for (std::size_t h = 0; h < p.n_heads; ++h) {
    std::size_t lo = h * dk, hi = lo + dk;
    ad::Var qh = ad::slice_cols(q, lo, hi);
    ad::Var kh = ad::slice_cols(k, lo, hi);
    ad::Var vh = ad::slice_cols(v, lo, hi);
    ad::Var logits = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    ad::Var weights = ad::softmax(logits, &mask);
    if (attention) attention->push_back(weights->value);
    heads.push_back(ad::matmul(weights, vh));
  }
  ad::Var joined = heads.size() == 1 ? heads[0] : ad::concat(heads, 1);
  return ad::matmul(joined, p.wo);
}

/// max(0, m W1 + b1) W2 + b2, row by row.
inline ad::Var position_wise_ffn(const ad::Var& m, const EncoderLayerParams& p) {
  ad::Var hidden = ad::relu(ad::add(ad::matmul(m, p.w1), p.b1));
  return ad::add(ad::matmul(hidden, p.w2), p.b2);
}

/// Per-dimension maximum over unmasked positions.
inline ad::Var max_pool_sentence(const ad::Var& f, const std::vector<std::uint8_t>& mask) {
  detail::require_unmasked(mask, "max_pool_sentence");
  return ad::max_rows(f, &mask);
}

struct EncoderOutput {
  ad::Var features;  // f: l x d_model
  ad::Var pooled;    // h_s: d_model
};

/// Post-norm layer: u = LN(x + MHSA(x)); f = LN(u + FFN(u)); h_s = maxpool(f).
inline EncoderOutput encoder_layer(const ad::Var& x, const std::vector<std::uint8_t>& mask,
                                   const EncoderLayerParams& p, const ForwardMode& mode = {}) {
  ad::Var attn = dropout(multi_head_self_attention(x, mask, p), mode);
  ad::Var u = ad::layer_norm(ad::add(x, attn), p.ln1_gain, p.ln1_bias);
  ad::Var ff = dropout(position_wise_ffn(u, p), mode);
  ad::Var f = ad::layer_norm(ad::add(u, ff), p.ln2_gain, p.ln2_bias);
  return {f, max_pool_sentence(f, mask)};
}

}  // namespace drbert
