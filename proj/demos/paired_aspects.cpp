// Trains a small model on the synthetic paired-aspect corpus and prints, for
// one test sentence, the word each adapter step selects for both aspects.
//
//   paired_aspects [epochs]

#include <cstdlib>
#include <iomanip>
#include <iostream>

#include "drbert/drbert.hpp"

using namespace drbert;

int main(int argc, char** argv) {
  std::size_t epochs = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 40;

  DatasetSplits data = synth_dataset(0, 200);
  std::vector<std::vector<std::string>> sentences;
  for (const auto& r : data.train) sentences.push_back(r.tokens);
  Vocab vocab = Vocab::build(sentences);

  ModelConfig mc;
  mc.n_layers = 2;
  mc.d_model = 64;
  mc.n_heads = 4;
  mc.d_ff = 128;
  mc.d_gru = 16;
  mc.d_attn = 32;
  mc.T = 3;
  mc.dropout = 0.2;
  mc.max_len = 32;
  mc.position_scale = 2.0;
  mc.aspect_init_gain = 4.0;

  TrainConfig tc;
  tc.epochs = epochs;
  tc.patience = epochs;
  tc.beta = 0.0;

  TrainResult tr = train(tc, mc, vocab, data.train, data.dev, [](const EpochLog& e) {
    std::cout << "epoch " << std::setw(3) << e.epoch << "  loss " << std::fixed << std::setprecision(4)
              << e.train_loss << "  train " << e.train_accuracy << "  dev " << e.dev_accuracy.value_or(0.0) << '\n';
  });
  Metrics m = evaluate(tr.model, vocab, data.test);
  std::cout << "test accuracy " << m.accuracy << "  macro-F1 " << m.macro_f1 << "\n\n";

  nlohmann::json trace = emit_trace(tr.model, vocab, {data.test[0], data.test[1]});
  for (const auto& rec : trace["records"]) {
    std::string aspect;
    for (std::size_t i = 0; i < rec["aspect_len"].get<std::size_t>(); ++i)
      aspect += (i ? " " : "") + rec["tokens"][rec["aspect_start"].get<std::size_t>() + i].get<std::string>();
    std::cout << "aspect '" << aspect << "' layer " << rec["layer"] << " gold " << rec["gold"].get<std::string>()
              << " predicted " << rec["prediction"].get<std::string>() << "  steps:";
    for (const auto& st : rec["steps"]) std::cout << ' ' << st["chosen_word"].get<std::string>();
    std::cout << '\n';
  }
  return 0;
}
