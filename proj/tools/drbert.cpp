// Command-line front end: data preparation, training, evaluation,
// re-weighting traces, and ablation sweeps.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "drbert/drbert.hpp"

namespace fs = std::filesystem;
using namespace drbert;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct DataDir {
  std::vector<DatasetRecord> train, dev, test;
};

// train.jsonl is required; dev.jsonl falls back to a seeded split of train.
DataDir load_data_dir(const std::string& dir, const TrainConfig& tc, bool need_test) {
  DataDir d;
  std::string train_path = dir + "/train.jsonl";
  if (!fs::exists(train_path)) throw ValidationError("data: " + train_path + " not found");
  d.train = load_jsonl(train_path);
  if (fs::exists(dir + "/dev.jsonl")) {
    d.dev = load_jsonl(dir + "/dev.jsonl");
  } else {
    auto [tr, dv] = split_dev(d.train, tc.dev_fraction, tc.seed);
    d.train = std::move(tr);
    d.dev = std::move(dv);
  }
  if (fs::exists(dir + "/test.jsonl")) d.test = load_jsonl(dir + "/test.jsonl");
  if (need_test && d.test.empty()) throw ValidationError("data: " + dir + "/test.jsonl is missing or empty");
  return d;
}

Vocab vocab_for(const std::vector<DatasetRecord>& records) {
  std::vector<std::vector<std::string>> sentences;
  for (const auto& r : records) sentences.push_back(r.tokens);
  return Vocab::build(sentences);
}

std::string vocab_path_for(const std::string& ckpt, const std::string& explicit_path) {
  return explicit_path.empty() ? ckpt + ".vocab" : explicit_path;
}

// Accepts "2..10", "3", or "2,4,6".
std::vector<std::size_t> parse_int_list(const std::string& spec) {
  std::vector<std::size_t> out;
  auto dots = spec.find("..");
  try {
    if (dots != std::string::npos) {
      std::size_t lo = std::stoul(spec.substr(0, dots));
      std::size_t hi = std::stoul(spec.substr(dots + 2));
      if (lo > hi) throw ValidationError("range '" + spec + "' is empty");
      for (std::size_t v = lo; v <= hi; ++v) out.push_back(v);
    } else {
      std::size_t pos = 0;
      while (pos <= spec.size()) {
        auto comma = spec.find(',', pos);
        std::string item = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!item.empty()) out.push_back(std::stoul(item));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
    }
  } catch (const std::logic_error&) {
    throw ValidationError("cannot parse integer list '" + spec + "'");
  }
  if (out.empty()) throw ValidationError("empty integer list '" + spec + "'");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aspect-based sentiment classifier with dynamic re-weighting adapters"};
  app.require_subcommand(1);

  // train
  std::string config_path, data_dir, out_path, log_path;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write the best-dev checkpoint");
  train_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
  train_cmd->add_option("--data", data_dir, "Directory with train.jsonl [dev.jsonl] [test.jsonl]")->required();
  train_cmd->add_option("--out", out_path, "Checkpoint path (vocabulary written to <out>.vocab)")->required();
  train_cmd->add_option("--log", log_path, "Per-epoch JSONL log file");
  train_cmd->add_flag("--quiet", quiet, "Do not print per-epoch lines");

  // eval
  std::string ckpt_path, data_file, vocab_path;
  bool as_json = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a JSONL file");
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  eval_cmd->add_option("--data", data_file, "JSONL dataset")->required();
  eval_cmd->add_option("--vocab", vocab_path, "Vocabulary file (default <ckpt>.vocab)");
  eval_cmd->add_flag("--json", as_json, "Print metrics as JSON");

  // trace
  std::string trace_out;
  auto* trace_cmd = app.add_subcommand("trace", "Export per-step re-weighting traces");
  trace_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  trace_cmd->add_option("--data", data_file, "JSONL dataset")->required();
  trace_cmd->add_option("--out", trace_out, "Output trace JSON")->required();
  trace_cmd->add_option("--vocab", vocab_path, "Vocabulary file (default <ckpt>.vocab)");

  // ablate-t
  std::string t_spec = "2..10";
  auto* ablate_t_cmd = app.add_subcommand("ablate-t", "Sweep the re-weighting length T");
  ablate_t_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
  ablate_t_cmd->add_option("--data", data_dir, "Directory with train/dev/test JSONL")->required();
  ablate_t_cmd->add_option("--t", t_spec, "T values: 'lo..hi' or comma list")->capture_default_str();
  ablate_t_cmd->add_option("--out", out_path, "CSV output (stdout when omitted)");

  // ablate-components
  std::string k_spec;
  auto* ablate_c_cmd = app.add_subcommand("ablate-components", "Component and layer-subset ablation");
  ablate_c_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
  ablate_c_cmd->add_option("--data", data_dir, "Directory with train/dev/test JSONL")->required();
  ablate_c_cmd->add_option("--top-k", k_spec, "Adapter-bearing top-layer counts, e.g. '1' or '1,2'");
  ablate_c_cmd->add_option("--out", out_path, "CSV output (stdout when omitted)");
  ablate_c_cmd->add_flag("--json", as_json, "Emit full metrics JSON instead of CSV");

  // convert
  std::string xml_path, report_path;
  auto* convert_cmd = app.add_subcommand("convert", "Convert SemEval-2014 aspect-term XML to JSONL");
  convert_cmd->add_option("--xml", xml_path, "SemEval XML file")->required();
  convert_cmd->add_option("--out", out_path, "JSONL output")->required();

  // synth
  std::uint64_t seed = 0;
  std::size_t pairs = 200;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the paired-aspect synthetic corpus");
  synth_cmd->add_option("--seed", seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--pairs", pairs, "Number of two-aspect sentences")->capture_default_str();
  synth_cmd->add_option("--out", out_path, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*train_cmd) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      DataDir data = load_data_dir(data_dir, cfg.train, false);
      Vocab vocab = vocab_for(data.train);
      std::ofstream log;
      if (!log_path.empty()) log.open(log_path, std::ios::trunc);
      auto on_epoch = [&](const EpochLog& e) {
        std::string line = to_json(e).dump();
        if (!quiet) std::cout << line << std::endl;
        if (log) log << line << '\n';
      };
      TrainResult tr = train(cfg.train, cfg.model, vocab, data.train, data.dev, on_epoch);
      save_checkpoint(tr.model, out_path);
      vocab.save(vocab_path_for(out_path, ""));
      nlohmann::json summary = {{"checkpoint", out_path}, {"best_epoch", tr.best_epoch}, {"epochs_run", tr.log.size()}};
      if (!data.test.empty()) summary["test"] = to_json(evaluate(tr.model, vocab, data.test));
      std::cout << summary.dump() << std::endl;
    } else if (*eval_cmd) {
      Model model = load_checkpoint(ckpt_path);
      Vocab vocab = Vocab::load(vocab_path_for(ckpt_path, vocab_path));
      Metrics m = evaluate(model, vocab, load_jsonl(data_file));
      if (as_json) {
        std::cout << to_json(m).dump(2) << std::endl;
      } else {
        std::cout << "accuracy " << m.accuracy << "\nmacro_f1 " << m.macro_f1 << "\ntotal " << m.total << std::endl;
      }
    } else if (*trace_cmd) {
      Model model = load_checkpoint(ckpt_path);
      Vocab vocab = Vocab::load(vocab_path_for(ckpt_path, vocab_path));
      write_text(trace_out, emit_trace(model, vocab, load_jsonl(data_file)).dump(1) + "\n");
    } else if (*ablate_t_cmd) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      DataDir data = load_data_dir(data_dir, cfg.train, true);
      Vocab vocab = vocab_for(data.train);
      auto rows = ablate_T(cfg.train, cfg.model, vocab, data.train, data.dev, data.test, parse_int_list(t_spec));
      std::string csv = sweep_csv(rows);
      if (out_path.empty()) std::cout << csv;
      else write_text(out_path, csv);
    } else if (*ablate_c_cmd) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      DataDir data = load_data_dir(data_dir, cfg.train, true);
      Vocab vocab = vocab_for(data.train);
      std::vector<std::size_t> ks = k_spec.empty() ? std::vector<std::size_t>{} : parse_int_list(k_spec);
      auto rows = ablate_components(cfg.train, cfg.model, vocab, data.train, data.dev, data.test, ks);
      std::string text;
      if (as_json) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows) {
          j.push_back({{"variant", r.name}, {"metrics", to_json(r.test)}, {"paired_accuracy", r.paired_accuracy},
                       {"paired_count", r.paired_count}});
        }
        text = j.dump(2) + "\n";
      } else {
        text = components_csv(rows);
      }
      if (out_path.empty()) std::cout << text;
      else write_text(out_path, text);
    } else if (*convert_cmd) {
      ConversionReport rep = convert_semeval_xml(xml_path);
      write_jsonl(rep.records, out_path);
      for (const auto& d : rep.diagnostics) std::cerr << "skipped: " << d << '\n';
      nlohmann::json summary = {{"sentences", rep.sentences},
                                {"terms", rep.terms},
                                {"records", rep.records.size()},
                                {"skipped_conflict", rep.skipped_conflict},
                                {"skipped_offsets", rep.skipped_offsets},
                                {"skipped_other", rep.skipped_other},
                                {"label_counts",
                                 {{"negative", rep.label_counts[0]},
                                  {"neutral", rep.label_counts[1]},
                                  {"positive", rep.label_counts[2]}}}};
      std::cout << summary.dump() << std::endl;
    } else if (*synth_cmd) {
      DatasetSplits s = synth_dataset(seed, pairs);
      write_splits(s, out_path);
      std::cout << nlohmann::json{{"train", s.train.size()}, {"dev", s.dev.size()}, {"test", s.test.size()}}.dump()
                << std::endl;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitValidation;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitRuntime;
  }
  return kExitOk;
}
