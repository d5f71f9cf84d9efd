#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drbert/autodiff.hpp"
#include "drbert/dra.hpp"
#include "drbert/embedding.hpp"
#include "drbert/encoder.hpp"
#include "drbert/error.hpp"
#include "drbert/optim.hpp"
#include "drbert/rng.hpp"
#include "json.hpp"

namespace drbert {

inline constexpr std::size_t kNumClasses = 3;

struct ModelConfig {
  std::size_t vocab_size = kNumReserved;
  std::size_t n_layers = 2;
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t d_ff = 64;
  std::size_t d_gru = 256;
  std::size_t d_attn = 32;
  std::size_t T = 7;
  double lambda = 100.0;
  std::size_t mlp_depth = 3;   // hidden ReLU layers before the output layer; 0 = linear head
  std::size_t mlp_hidden = 0;  // 0 means d_model
  std::size_t num_classes = kNumClasses;
  double dropout = 0.2;
  bool freeze_encoder = false;
  bool share_dra = false;
  bool chain_fused = true;      // layer n+1 reads e^n (true) or f^n (false)
  std::size_t dra_layers = 0;   // adapters on the top k layers; 0 means all layers
  bool use_dra = true;          // false removes every adapter
  std::size_t max_len = 64;
  double position_scale = 1.0;    // amplitude of the sin/cos position init
  double aspect_init_gain = 1.0;  // multiplier on the fan-in bound of each w_a

  std::size_t hidden_width() const { return mlp_hidden == 0 ? d_model : mlp_hidden; }

  /// True when layer `n` (0-based) carries an adapter.
  bool has_dra(std::size_t n) const {
    if (!use_dra) return false;
    std::size_t k = dra_layers == 0 ? n_layers : dra_layers;
    return n + k >= n_layers;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ValidationError(std::string("model config: ") + name + " must be positive");
    };
    positive(n_layers, "n_layers");
    positive(d_model, "d_model");
    positive(n_heads, "n_heads");
    positive(d_ff, "d_ff");
    positive(d_gru, "d_gru");
    positive(d_attn, "d_attn");
    positive(T, "T");
    positive(max_len, "max_len");
    if (vocab_size <= kNumReserved) throw ValidationError("model config: vocab_size must exceed the 4 reserved tokens");
    if (num_classes != kNumClasses) throw ValidationError("model config: num_classes must be 3");
    if (d_model % n_heads != 0) throw ValidationError("model config: d_model must be divisible by n_heads");
    if (!(lambda > 0.0)) throw ValidationError("model config: lambda must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("model config: dropout must be in [0, 1)");
    if (dra_layers > n_layers) {
      throw ValidationError("model config: dra_layers " + std::to_string(dra_layers) + " exceeds n_layers " +
                            std::to_string(n_layers));
    }
    if (!(position_scale > 0.0 && std::isfinite(position_scale))) {
      throw ValidationError("model config: position_scale must be positive");
    }
    if (!(aspect_init_gain > 0.0 && std::isfinite(aspect_init_gain))) {
      throw ValidationError("model config: aspect_init_gain must be positive");
    }
    if (max_len < 3) throw ValidationError("model config: max_len must allow [CLS] w [SEP]");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size}, {"n_layers", c.n_layers},   {"d_model", c.d_model},
                     {"n_heads", c.n_heads},       {"d_ff", c.d_ff},           {"d_gru", c.d_gru},
                     {"d_attn", c.d_attn},         {"T", c.T},                 {"lambda", c.lambda},
                     {"mlp_depth", c.mlp_depth},   {"mlp_hidden", c.mlp_hidden}, {"num_classes", c.num_classes},
                     {"dropout", c.dropout},       {"freeze_encoder", c.freeze_encoder},
                     {"share_dra", c.share_dra},   {"chain_fused", c.chain_fused},
                     {"dra_layers", c.dra_layers}, {"use_dra", c.use_dra},     {"max_len", c.max_len},
                     {"position_scale", c.position_scale}, {"aspect_init_gain", c.aspect_init_gain}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ValidationError("model config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
      else if (key == "n_layers") c.n_layers = value.get<std::size_t>();
      else if (key == "d_model") c.d_model = value.get<std::size_t>();
      else if (key == "n_heads") c.n_heads = value.get<std::size_t>();
      else if (key == "d_ff") c.d_ff = value.get<std::size_t>();
      else if (key == "d_gru") c.d_gru = value.get<std::size_t>();
      else if (key == "d_attn") c.d_attn = value.get<std::size_t>();
      else if (key == "T") c.T = value.get<std::size_t>();
      else if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "mlp_depth") c.mlp_depth = value.get<std::size_t>();
      else if (key == "mlp_hidden") c.mlp_hidden = value.get<std::size_t>();
      else if (key == "num_classes") c.num_classes = value.get<std::size_t>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "freeze_encoder") c.freeze_encoder = value.get<bool>();
      else if (key == "share_dra") c.share_dra = value.get<bool>();
      else if (key == "chain_fused") c.chain_fused = value.get<bool>();
      else if (key == "dra_layers") c.dra_layers = value.get<std::size_t>();
      else if (key == "use_dra") c.use_dra = value.get<bool>();
      else if (key == "max_len") c.max_len = value.get<std::size_t>();
      else if (key == "position_scale") c.position_scale = value.get<double>();
      else if (key == "aspect_init_gain") c.aspect_init_gain = value.get<double>();
      else throw ValidationError("model config: unknown field '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("model config: bad value for '" + key + "': " + e.what());
    }
  }
}

/// One sentence-aspect pair ready for the network. `aspect_start` indexes
/// sentence tokens (0 = first word, not [CLS]).
struct AspectInput {
  TokenSequence seq;
  std::size_t aspect_start = 0;
  std::size_t aspect_len = 1;
};

/// Adapter trace for one record and one adapter-bearing layer.
struct LayerTrace {
  std::size_t layer = 0;
  DraTrace dra;
};

struct ForwardResult {
  ad::Var logits;  // B x C
  ad::Var probs;   // B x C
  std::vector<std::vector<LayerTrace>> traces;  // [record][adapter layer], when requested
};

struct FusionParams {
  ad::Var w_e;  // d_model x d_model
  ad::Var u_e;  // d_gru x d_model; absent when the layer has no adapter
  ad::Var b_e;  // d_model
};

/// e_i = f_i W_e + h_T U_e + b_e for every position i. A null h_T drops
/// the adapter term.
inline ad::Var fuse_layer_output(const ad::Var& f, const ad::Var& h_T, const FusionParams& p) {
  ad::Var bias = p.b_e;
  if (h_T) {
    if (!p.u_e) throw DimensionError("fuse_layer_output: adapter state given to a layer without U_e");
    bias = ad::add(ad::matmul(h_T, p.u_e), p.b_e);
  }
  return ad::add(ad::matmul(f, p.w_e), bias);
}

/// -sum_i log(probs[i, y_i]) + beta * sum of squares of `regularized`.
/// The log argument is floored at 1e-12.
inline ad::Var loss(const ad::Var& probs, const std::vector<std::size_t>& labels,
                    const std::vector<ad::Var>& regularized, double beta) {
  const Shape& s = probs->value.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw DimensionError("loss: probabilities " + shape_str(s) + " for " + std::to_string(labels.size()) + " labels");
  }
  if (beta < 0.0) throw ValidationError("loss: beta must be non-negative");
  Tensor onehot(s);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= s[1]) throw ValidationError("loss: label " + std::to_string(labels[i]) + " out of range");
    onehot.at(i, labels[i]) = -1.0;
  }
  ad::Var total = ad::sum(ad::mul(ad::log_clamped(probs), ad::constant(std::move(onehot))));
  if (beta > 0.0) {
    for (const auto& p : regularized) total = ad::add(total, ad::scale(ad::sum(ad::mul(p, p)), beta));
  }
  return total;
}

struct NamedParam {
  std::string name;
  ad::Var var;
  bool trainable = true;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)) {
    cfg_.validate();
    build(seed);
  }

  // Parameters are shared graph nodes; a copy would alias them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::vector<NamedParam>& parameters() const noexcept { return params_; }

  std::vector<ad::Var> trainable() const {
    std::vector<ad::Var> out;
    for (const auto& p : params_)
      if (p.trainable) out.push_back(p.var);
    return out;
  }

  std::vector<ad::Var> all_vars() const {
    std::vector<ad::Var> out;
    for (const auto& p : params_) out.push_back(p.var);
    return out;
  }

  ad::Var find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.var;
    return nullptr;
  }

  /// Per-record masks over the padded sequence.
  static std::vector<std::uint8_t> selectable_mask(const TokenSequence& seq) {
    std::vector<std::uint8_t> sel(seq.length(), 0);
    for (std::size_t i = 1; i < seq.length(); ++i)
      sel[i] = seq.mask[i] && seq.ids[i] != kSepId && seq.ids[i] != kClsId ? 1 : 0;
    return sel;
  }

  ForwardResult forward(const std::vector<AspectInput>& batch, const ForwardMode& mode = {},
                        bool want_trace = false) const {
    if (batch.empty()) throw ValidationError("forward: empty batch");
    std::size_t padded = 0;
    for (const auto& in : batch) {
      if (in.seq.length() > cfg_.max_len) {
        throw ValidationError("forward: sequence length " + std::to_string(in.seq.length()) + " exceeds max_len " +
                              std::to_string(cfg_.max_len));
      }
      std::size_t words = 0;
      for (std::size_t i = 0; i < in.seq.length(); ++i)
        if (in.seq.mask[i] && in.seq.ids[i] != kClsId && in.seq.ids[i] != kSepId) ++words;
      if (in.aspect_len == 0 || in.aspect_start + in.aspect_len > words) {
        throw ValidationError("forward: aspect span [" + std::to_string(in.aspect_start) + ", " +
                              std::to_string(in.aspect_start + in.aspect_len) + ") outside sentence of " +
                              std::to_string(words) + " tokens");
      }
      padded = std::max(padded, in.seq.length());
    }

    ForwardResult result;
    std::vector<ad::Var> rows;
    for (const auto& in : batch) {
      TokenSequence seq = in.seq;
      pad_to(seq, padded);
      std::vector<LayerTrace> traces;
      rows.push_back(forward_one(seq, in.aspect_start, in.aspect_len, mode, want_trace ? &traces : nullptr));
      if (want_trace) result.traces.push_back(std::move(traces));
    }
    result.logits = rows.size() == 1 ? rows[0] : ad::concat(rows, 0);
    result.probs = ad::softmax(result.logits);
    return result;
  }

  /// Class with the highest probability per row.
  static std::vector<std::size_t> predictions(const ForwardResult& r) {
    const Tensor& p = r.probs->value;
    std::vector<std::size_t> out(p.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto row = p.row(i);
      out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
  }

  /// Replaces parameter values (e.g. from a checkpoint or a saved best state).
  void assign(const std::vector<Tensor>& values) {
    if (values.size() != params_.size()) throw DimensionError("assign: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].shape() != params_[i].var->value.shape()) {
        throw DimensionError("assign: " + params_[i].name + " expects " + shape_str(params_[i].var->value.shape()) +
                             ", got " + shape_str(values[i].shape()));
      }
      params_[i].var->value = values[i];
    }
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    for (const auto& p : params_) out.push_back(p.var->value);
    return out;
  }

  const EmbeddingTable& embedding() const noexcept { return embedding_; }
  const EncoderLayerParams& encoder(std::size_t n) const { return encoders_.at(n); }
  const DraParams& dra(std::size_t n) const { return dras_.at(cfg_.share_dra ? 0 : n); }
  const FusionParams& fusion(std::size_t n) const { return fusions_.at(n); }

 private:
  ad::Var add_param(const std::string& name, const Shape& shape, InitScheme scheme, Rng& root, bool trainable,
                    double fill = 0.0) {
    Rng stream = root.split(params_.size());
    Tensor value = seeded_init(shape, scheme, stream);
    if (fill != 0.0) value.fill(fill);
    ad::Var v = trainable ? ad::parameter(std::move(value), name) : ad::constant(std::move(value), name);
    params_.push_back({name, v, trainable});
    return v;
  }

  DraParams make_dra(const std::string& prefix, Rng& root) {
    const auto W = InitScheme::kUniformFanIn;
    DraParams d;
    d.w_s = add_param(prefix + "w_s", {cfg_.d_model, cfg_.d_attn}, W, root, true);
    d.w_d = add_param(prefix + "w_d", {cfg_.d_gru, cfg_.d_attn}, W, root, true);
    d.w_a = add_param(prefix + "w_a", {cfg_.d_model, cfg_.d_attn}, W, root, true);
    for (auto& v : d.w_a->value.data()) v *= cfg_.aspect_init_gain;
    d.omega = add_param(prefix + "omega", {cfg_.d_attn}, InitScheme::kZeros, root, true);
    d.proj_w = add_param(prefix + "proj_w", {cfg_.d_model, cfg_.d_gru}, W, root, true);
    d.proj_b = add_param(prefix + "proj_b", {cfg_.d_gru}, InitScheme::kZeros, root, true);
    d.gru_z = add_param(prefix + "gru_z", {cfg_.d_gru + cfg_.d_model, cfg_.d_gru}, W, root, true);
    d.gru_r = add_param(prefix + "gru_r", {cfg_.d_gru + cfg_.d_model, cfg_.d_gru}, W, root, true);
    d.gru_h = add_param(prefix + "gru_h", {cfg_.d_gru + cfg_.d_model, cfg_.d_gru}, W, root, true);
    d.lambda = cfg_.lambda;
    d.steps = cfg_.T;
    return d;
  }

  // Token rows start at U[-0.5, 0.5]; positions use fixed-frequency sin/cos.
  static constexpr double kTokenInitBound = 0.5;

  static void sinusoid_positions(Tensor& P, double amplitude) {
    const std::size_t len = P.shape()[0], d = P.shape()[1];
    for (std::size_t pos = 0; pos < len; ++pos) {
      for (std::size_t i = 0; i < d; ++i) {
        double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
        double angle = static_cast<double>(pos) * freq;
        P.at(pos, i) = amplitude * (i % 2 == 0 ? std::sin(angle) : std::cos(angle));
      }
    }
  }

  void build(std::uint64_t seed) {
    Rng root(seed);
    const auto W = InitScheme::kUniformFanIn;
    const auto Z = InitScheme::kZeros;
    const bool enc = !cfg_.freeze_encoder;
    const std::size_t d = cfg_.d_model;

    embedding_.token = add_param("embedding.token", {cfg_.vocab_size, d}, W, root, enc);
    embedding_.position = add_param("embedding.position", {cfg_.max_len, d}, W, root, enc);
    for (auto& v : embedding_.token->value.data()) v *= kTokenInitBound * std::sqrt(double(cfg_.vocab_size));
    sinusoid_positions(embedding_.position->value, cfg_.position_scale);

    for (std::size_t n = 0; n < cfg_.n_layers; ++n) {
      std::string pre = "layers." + std::to_string(n) + ".";
      EncoderLayerParams e;
      e.n_heads = cfg_.n_heads;
      e.wq = add_param(pre + "attn.wq", {d, d}, W, root, enc);
      e.wk = add_param(pre + "attn.wk", {d, d}, W, root, enc);
      e.wv = add_param(pre + "attn.wv", {d, d}, W, root, enc);
      e.wo = add_param(pre + "attn.wo", {d, d}, W, root, enc);
      e.w1 = add_param(pre + "ffn.w1", {d, cfg_.d_ff}, W, root, enc);
      e.b1 = add_param(pre + "ffn.b1", {cfg_.d_ff}, Z, root, enc);
      e.w2 = add_param(pre + "ffn.w2", {cfg_.d_ff, d}, W, root, enc);
      e.b2 = add_param(pre + "ffn.b2", {d}, Z, root, enc);
      e.ln1_gain = add_param(pre + "ln1.gain", {d}, Z, root, enc, 1.0);
      e.ln1_bias = add_param(pre + "ln1.bias", {d}, Z, root, enc);
      e.ln2_gain = add_param(pre + "ln2.gain", {d}, Z, root, enc, 1.0);
      e.ln2_bias = add_param(pre + "ln2.bias", {d}, Z, root, enc);
      encoders_.push_back(std::move(e));
    }

    bool any_dra = false;
    for (std::size_t n = 0; n < cfg_.n_layers; ++n) any_dra = any_dra || cfg_.has_dra(n);
    if (cfg_.share_dra && any_dra) {
      dras_.push_back(make_dra("dra.shared.", root));
    } else {
      for (std::size_t n = 0; n < cfg_.n_layers; ++n) {
        dras_.push_back(cfg_.has_dra(n) ? make_dra("layers." + std::to_string(n) + ".dra.", root) : DraParams{});
      }
    }

    for (std::size_t n = 0; n < cfg_.n_layers; ++n) {
      std::string pre = "layers." + std::to_string(n) + ".fuse.";
      FusionParams f;
      f.w_e = add_param(pre + "w_e", {d, d}, W, root, true);
      if (cfg_.has_dra(n)) f.u_e = add_param(pre + "u_e", {cfg_.d_gru, d}, W, root, true);
      f.b_e = add_param(pre + "b_e", {d}, Z, root, true);
      fusions_.push_back(std::move(f));
    }

    std::size_t in = d;
    for (std::size_t l = 0; l < cfg_.mlp_depth; ++l) {
      std::string pre = "head.mlp." + std::to_string(l) + ".";
      mlp_w_.push_back(add_param(pre + "w", {in, cfg_.hidden_width()}, W, root, true));
      mlp_b_.push_back(add_param(pre + "b", {cfg_.hidden_width()}, Z, root, true));
      in = cfg_.hidden_width();
    }
    out_w_ = add_param("head.out.w", {in, cfg_.num_classes}, W, root, true);
    out_b_ = add_param("head.out.b", {cfg_.num_classes}, Z, root, true);
  }

  ad::Var forward_one(const TokenSequence& seq, std::size_t aspect_start, std::size_t aspect_len,
                      const ForwardMode& mode, std::vector<LayerTrace>* traces) const {
    ad::Var S = embed_sentence(seq, embedding_);
    ad::Var aspect = aspect_embedding(S, aspect_start, aspect_len);
    std::vector<std::uint8_t> selectable = selectable_mask(seq);

    ad::Var x = S;
    ad::Var e;
    for (std::size_t n = 0; n < cfg_.n_layers; ++n) {
      EncoderOutput out = encoder_layer(x, seq.mask, encoders_[n], mode);
      ad::Var h_T;
      if (cfg_.has_dra(n)) {
        LayerTrace lt;
        lt.layer = n;
        h_T = dra_rollout(S, selectable, out.pooled, aspect, dra(n), traces ? &lt.dra : nullptr);
        if (traces) traces->push_back(std::move(lt));
      }
      e = fuse_layer_output(out.features, h_T, fusions_[n]);
      x = cfg_.chain_fused ? e : out.features;
    }

    ad::Var r = max_pool_sentence(e, seq.mask);
    for (std::size_t l = 0; l < mlp_w_.size(); ++l) r = ad::relu(ad::add(ad::matmul(r, mlp_w_[l]), mlp_b_[l]));
    ad::Var logits = ad::add(ad::matmul(r, out_w_), out_b_);
    return ad::reshape(logits, Shape{1, cfg_.num_classes});
  }

  ModelConfig cfg_;
  std::vector<NamedParam> params_;
  EmbeddingTable embedding_;
  std::vector<EncoderLayerParams> encoders_;
  std::vector<DraParams> dras_;
  std::vector<FusionParams> fusions_;
  std::vector<ad::Var> mlp_w_, mlp_b_;
  ad::Var out_w_, out_b_;
};

}  // namespace drbert
