#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "drbert/checkpoint.hpp"
#include "drbert/dataset.hpp"
#include "drbert/embedding.hpp"
#include "drbert/error.hpp"
#include "drbert/metrics.hpp"
#include "drbert/model.hpp"
#include "drbert/optim.hpp"
#include "drbert/rng.hpp"
#include "json.hpp"

namespace drbert {

struct TrainConfig {
  std::uint64_t seed = 0;
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 60;
  std::size_t patience = 10;
  double dev_fraction = 0.1;
  double beta = 0.8;

  void validate() const {
    if (!(lr > 0.0)) throw ValidationError("train config: lr must be positive");
    if (batch_size != 16 && batch_size != 32 && batch_size != 64 && batch_size != 128) {
      throw ValidationError("train config: batch_size must be one of 16, 32, 64, 128");
    }
    if (epochs == 0) throw ValidationError("train config: epochs must be positive");
    if (patience == 0) throw ValidationError("train config: patience must be positive");
    if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw ValidationError("train config: dev_fraction must be in (0, 1)");
    if (!(beta >= 0.0)) throw ValidationError("train config: beta must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"seed", c.seed},         {"lr", c.lr},
                     {"batch_size", c.batch_size}, {"epochs", c.epochs},
                     {"patience", c.patience}, {"dev_fraction", c.dev_fraction},
                     {"beta", c.beta}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ValidationError("train config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "patience") c.patience = value.get<std::size_t>();
      else if (key == "dev_fraction") c.dev_fraction = value.get<double>();
      else if (key == "beta") c.beta = value.get<double>();
      else throw ValidationError("train config: unknown field '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("train config: bad value for '" + key + "': " + e.what());
    }
  }
}

/// Config file layout: {"model": {...ModelConfig}, "train": {...TrainConfig}}.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
};

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config: malformed JSON in " + path + ": " + e.what());
  }
  ExperimentConfig cfg;
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "model") cfg.model = value.get<ModelConfig>();
    else if (key == "train") cfg.train = value.get<TrainConfig>();
    else throw ValidationError("config: unknown section '" + key + "'");
  }
  cfg.train.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

inline AspectInput to_input(const DatasetRecord& r, const Vocab& vocab) {
  r.validate();
  return {tokenize(r.tokens, vocab), r.aspect_start, r.aspect_len};
}

inline std::vector<AspectInput> to_inputs(const std::vector<DatasetRecord>& records, const Vocab& vocab) {
  std::vector<AspectInput> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(to_input(r, vocab));
  return out;
}

/// Predicted class per record, in evaluation mode.
inline std::vector<std::size_t> predict(const Model& model, const std::vector<AspectInput>& inputs,
                                        std::size_t batch_size = 64) {
  std::vector<std::size_t> out;
  for (std::size_t begin = 0; begin < inputs.size(); begin += batch_size) {
    std::size_t end = std::min(inputs.size(), begin + batch_size);
    std::vector<AspectInput> batch(inputs.begin() + begin, inputs.begin() + end);
    auto p = Model::predictions(model.forward(batch));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

inline Metrics evaluate(const Model& model, const Vocab& vocab, const std::vector<DatasetRecord>& records) {
  if (records.empty()) throw ValidationError("evaluate: empty dataset");
  if (vocab.size() != model.config().vocab_size) {
    throw ValidationError("evaluate: vocabulary has " + std::to_string(vocab.size()) + " entries, model expects " +
                          std::to_string(model.config().vocab_size));
  }
  std::vector<std::size_t> gold;
  for (const auto& r : records) gold.push_back(r.label);
  return compute_metrics(gold, predict(model, to_inputs(records, vocab)));
}

/// Mean per-record cross-entropy in evaluation mode.
inline double mean_loss(const Model& model, const std::vector<AspectInput>& inputs,
                        const std::vector<std::size_t>& labels, std::size_t batch_size = 64) {
  double total = 0.0;
  for (std::size_t begin = 0; begin < inputs.size(); begin += batch_size) {
    std::size_t end = std::min(inputs.size(), begin + batch_size);
    std::vector<AspectInput> batch(inputs.begin() + begin, inputs.begin() + end);
    std::vector<std::size_t> y(labels.begin() + begin, labels.begin() + end);
    total += loss(model.forward(batch).probs, y, {}, 0.0)->value.item();
  }
  return inputs.empty() ? 0.0 : total / static_cast<double>(inputs.size());
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per record, regularizer included
  double train_accuracy = 0.0;
  std::optional<double> dev_accuracy;
  std::optional<double> dev_macro_f1;
  std::optional<double> dev_loss;  // mean cross-entropy, no regularizer
};

inline nlohmann::json to_json(const EpochLog& e) {
  nlohmann::json j = {{"epoch", e.epoch}, {"loss", e.train_loss}, {"train_accuracy", e.train_accuracy}};
  j["dev_accuracy"] = e.dev_accuracy ? nlohmann::json(*e.dev_accuracy) : nlohmann::json(nullptr);
  j["dev_macro_f1"] = e.dev_macro_f1 ? nlohmann::json(*e.dev_macro_f1) : nlohmann::json(nullptr);
  j["dev_loss"] = e.dev_loss ? nlohmann::json(*e.dev_loss) : nlohmann::json(nullptr);
  return j;
}

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

/// Splits `records` into (train, dev) with a seeded shuffle; dev receives
/// round(fraction * n) records, at least one when n > 1.
inline std::pair<std::vector<DatasetRecord>, std::vector<DatasetRecord>> split_dev(
    const std::vector<DatasetRecord>& records, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng(seed, 0x5eed).shuffle(idx);
  std::size_t n_dev = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(records.size())));
  if (records.size() > 1) n_dev = std::clamp<std::size_t>(n_dev, 1, records.size() - 1);
  else n_dev = 0;
  std::vector<DatasetRecord> train, dev;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_dev ? dev : train).push_back(records[idx[i]]);
  return {train, dev};
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Sets the output bias to the log class frequencies of `labels`, floored at 0.01.
inline void init_output_bias(Model& model, const std::vector<std::size_t>& labels) {
  ad::Var b = model.find("head.out.b");
  if (!b || labels.empty()) return;
  std::vector<double> count(b->value.size(), 0.0);
  for (auto y : labels) count.at(y) += 1.0;
  for (std::size_t k = 0; k < count.size(); ++k) {
    b->value[k] = std::log(std::max(count[k] / static_cast<double>(labels.size()), 0.01));
  }
}

/// Mini-batch Adam on the summed cross-entropy plus beta * ||trainable||^2.
/// The model state with the best dev accuracy is returned, ties going to the
/// lower dev loss; training stops after `patience` epochs without
/// improvement. An empty dev set keeps the last epoch.
inline TrainResult train(const TrainConfig& tc, ModelConfig mc, const Vocab& vocab,
                         const std::vector<DatasetRecord>& train_set, const std::vector<DatasetRecord>& dev_set,
                         const EpochCallback& on_epoch = {}) {
  tc.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  mc.vocab_size = vocab.size();
  Model model(mc, tc.seed);
  std::vector<ad::Var> params = model.trainable();
  Adam adam(AdamOptions{tc.lr});

  std::vector<AspectInput> inputs = to_inputs(train_set, vocab);
  std::vector<std::size_t> labels;
  for (const auto& r : train_set) labels.push_back(r.label);
  init_output_bias(model, labels);

  Rng shuffle_rng = Rng(tc.seed).split(101);
  Rng dropout_rng = Rng(tc.seed).split(202);
  ForwardMode mode{true, mc.dropout, &dropout_rng};

  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  std::vector<Tensor> best = model.snapshot();
  double best_dev = -1.0;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<AspectInput> dev_inputs = to_inputs(dev_set, vocab);
  std::vector<std::size_t> dev_labels;
  for (const auto& r : dev_set) dev_labels.push_back(r.label);

  std::vector<std::size_t> order(inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double total_loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
      std::size_t end = std::min(order.size(), begin + tc.batch_size);
      std::vector<AspectInput> batch;
      std::vector<std::size_t> batch_labels;
      for (std::size_t k = begin; k < end; ++k) {
        batch.push_back(inputs[order[k]]);
        batch_labels.push_back(labels[order[k]]);
      }
      ForwardResult fr = model.forward(batch, mode);
      ad::Var L = loss(fr.probs, batch_labels, params, tc.beta);
      double value = L->value.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("train: loss became " + std::to_string(value) + " at epoch " + std::to_string(epoch) +
                              ", batch starting at " + std::to_string(begin));
      }
      total_loss += value;
      auto pred = Model::predictions(fr);
      for (std::size_t k = 0; k < pred.size(); ++k) correct += pred[k] == batch_labels[k];
      zero_grads(params);
      try {
        ad::backward(L);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string("train: ") + e.what() + " at epoch " + std::to_string(epoch));
      }
      adam.step(params);
    }
    zero_grads(params);

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = total_loss / static_cast<double>(inputs.size());
    entry.train_accuracy = static_cast<double>(correct) / static_cast<double>(inputs.size());
    bool improved = dev_set.empty();
    if (!dev_set.empty()) {
      Metrics dm = evaluate(model, vocab, dev_set);
      double dl = mean_loss(model, dev_inputs, dev_labels);
      entry.dev_accuracy = dm.accuracy;
      entry.dev_macro_f1 = dm.macro_f1;
      entry.dev_loss = dl;
      improved = dm.accuracy > best_dev || (dm.accuracy == best_dev && dl < best_dev_loss);
      if (improved) {
        best_dev = dm.accuracy;
        best_dev_loss = dl;
      }
    }
    if (improved) {
      best = model.snapshot();
      best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (since_best >= tc.patience) break;
  }
  model.assign(best);
  return TrainResult{std::move(model), std::move(log), best_epoch};
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

struct SweepRow {
  std::size_t T = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

inline constexpr const char* kSweepCsvHeader = "T,accuracy,macro_f1";

/// One independently seeded model per T, trained on `train_set` and scored
/// on `test_set`.
inline std::vector<SweepRow> ablate_T(const TrainConfig& tc, const ModelConfig& mc, const Vocab& vocab,
                                      const std::vector<DatasetRecord>& train_set,
                                      const std::vector<DatasetRecord>& dev_set,
                                      const std::vector<DatasetRecord>& test_set, const std::vector<std::size_t>& Ts) {
  if (Ts.empty()) throw ValidationError("ablate_T: no T values given");
  std::vector<SweepRow> rows;
  for (std::size_t T : Ts) {
    if (T == 0) throw ValidationError("ablate_T: T must be at least 1");
    ModelConfig cfg = mc;
    cfg.T = T;
    TrainResult tr = train(tc, cfg, vocab, train_set, dev_set);
    Metrics m = evaluate(tr.model, vocab, test_set);
    rows.push_back({T, m.accuracy, m.macro_f1});
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << kSweepCsvHeader << '\n';
  for (const auto& r : rows) os << r.T << ',' << r.accuracy << ',' << r.macro_f1 << '\n';
  return os.str();
}

struct Variant {
  std::string name;
  ModelConfig config;
};

/// Component variants in the order: encoder with a linear head, +MLP,
/// +DRA (linear head), DRA on the top k layers for each k, and the full model.
inline std::vector<Variant> component_variants(const ModelConfig& base, const std::vector<std::size_t>& top_ks) {
  base.validate();
  std::vector<Variant> out;
  ModelConfig c = base;
  c.use_dra = false;
  c.dra_layers = 0;
  c.mlp_depth = 0;
  out.push_back({"encoder", c});
  c.mlp_depth = base.mlp_depth;
  out.push_back({"+mlp", c});
  c = base;
  c.use_dra = true;
  c.dra_layers = 0;
  c.mlp_depth = 0;
  out.push_back({"+dra", c});
  for (std::size_t k : top_ks) {
    if (k == 0 || k > base.n_layers) {
      throw ValidationError("ablate_components: top-k value " + std::to_string(k) + " must be in [1, " +
                            std::to_string(base.n_layers) + "]");
    }
    c = base;
    c.use_dra = true;
    c.dra_layers = k;
    out.push_back({"+dra-top-" + std::to_string(k), c});
  }
  c = base;
  c.use_dra = true;
  c.dra_layers = 0;
  out.push_back({"full", c});
  return out;
}

struct VariantResult {
  std::string name;
  Metrics test;
  double paired_accuracy = 0.0;  // accuracy restricted to paired test records
  std::size_t paired_count = 0;
};

inline VariantResult run_variant(const Variant& v, const TrainConfig& tc, const Vocab& vocab,
                                 const std::vector<DatasetRecord>& train_set,
                                 const std::vector<DatasetRecord>& dev_set,
                                 const std::vector<DatasetRecord>& test_set) {
  TrainResult tr = train(tc, v.config, vocab, train_set, dev_set);
  auto pred = predict(tr.model, to_inputs(test_set, vocab));
  std::vector<std::size_t> gold;
  for (const auto& r : test_set) gold.push_back(r.label);
  VariantResult out{v.name, compute_metrics(gold, pred), 0.0, 0};
  auto paired = paired_indices(test_set);
  std::size_t hit = 0;
  for (auto i : paired) hit += pred[i] == gold[i];
  out.paired_count = paired.size();
  out.paired_accuracy = paired.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(paired.size());
  return out;
}

inline std::vector<VariantResult> ablate_components(const TrainConfig& tc, const ModelConfig& mc, const Vocab& vocab,
                                                    const std::vector<DatasetRecord>& train_set,
                                                    const std::vector<DatasetRecord>& dev_set,
                                                    const std::vector<DatasetRecord>& test_set,
                                                    const std::vector<std::size_t>& top_ks) {
  ModelConfig base = mc;
  base.vocab_size = vocab.size();
  std::vector<VariantResult> out;
  for (const auto& v : component_variants(base, top_ks)) out.push_back(run_variant(v, tc, vocab, train_set, dev_set, test_set));
  return out;
}

inline constexpr const char* kComponentsCsvHeader = "variant,accuracy,macro_f1,paired_accuracy";

inline std::string components_csv(const std::vector<VariantResult>& rows) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << kComponentsCsvHeader << '\n';
  for (const auto& r : rows) os << r.name << ',' << r.test.accuracy << ',' << r.test.macro_f1 << ',' << r.paired_accuracy << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Re-weighting traces
// ---------------------------------------------------------------------------

inline constexpr const char* kTraceSchema = "drbert-trace/1";

/// One entry per (record, adapter layer). Alpha vectors cover the sentence
/// tokens only ([CLS]/[SEP] dropped); chosen_index indexes those tokens.
inline nlohmann::json emit_trace(const Model& model, const Vocab& vocab, const std::vector<DatasetRecord>& records) {
  const ModelConfig& cfg = model.config();
  if (vocab.size() != cfg.vocab_size) {
    throw ValidationError("trace: vocabulary has " + std::to_string(vocab.size()) + " entries but checkpoint expects " +
                          std::to_string(cfg.vocab_size));
  }
  nlohmann::json out = {{"schema", kTraceSchema}, {"T", cfg.T}, {"n_layers", cfg.n_layers}, {"lambda", cfg.lambda},
                        {"labels", {"negative", "neutral", "positive"}}};
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t id = 0; id < records.size(); ++id) {
    const auto& rec = records[id];
    AspectInput in = to_input(rec, vocab);
    ForwardResult fr = model.forward({in}, {}, true);
    std::size_t pred = Model::predictions(fr)[0];
    std::size_t l_s = rec.tokens.size();
    for (const auto& lt : fr.traces[0]) {
      nlohmann::json steps = nlohmann::json::array();
      for (std::size_t t = 0; t < lt.dra.steps.size(); ++t) {
        const DraStep& st = lt.dra.steps[t];
        std::vector<double> alpha(st.alpha.values().begin() + 1, st.alpha.values().begin() + 1 + l_s);
        std::size_t chosen = st.selected - 1;
        steps.push_back({{"step", t + 1},
                         {"alpha", alpha},
                         {"chosen_index", chosen},
                         {"chosen_token", vocab.token(in.seq.ids[st.selected])},
                         {"chosen_word", rec.tokens[chosen]}});
      }
      entries.push_back({{"record_id", id},
                         {"layer", lt.layer},
                         {"tokens", rec.tokens},
                         {"aspect_start", rec.aspect_start},
                         {"aspect_len", rec.aspect_len},
                         {"steps", steps},
                         {"prediction", label_name(pred)},
                         {"gold", label_name(rec.label)}});
    }
  }
  out["records"] = entries;
  return out;
}

}  // namespace drbert
