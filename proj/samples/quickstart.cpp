// Quickstart: plant a two-level hierarchy, generate separable data, tune
// prompts and the verbalizer on a frozen random encoder, then predict and
// print the learned parent-to-child weights.

#include <cmath>
#include <iostream>

#include "pemi/data.hpp"
#include "pemi/report.hpp"
#include "pemi/train.hpp"

int main() {
  using namespace pemi;
  const LabelHierarchy h({{"Comparison", "Expansion"}, {"Contrast", "Concession", "Conjunction", "Restatement"}},
                         {{0, 0, 0}, {0, 0, 1}, {0, 1, 2}, {0, 1, 3}});
  const DatasetBundle data = generate_synthetic(h, 60, 80, 3);

  std::vector<std::string> corpus;
  for (const auto& r : data.train) {
    corpus.push_back(r.arg1);
    corpus.push_back(r.arg2);
  }
  Vocab vocab = build_vocab(corpus);
  EncoderConfig enc;
  enc.vocab_size = vocab.size();
  enc.d_model = 32;
  enc.n_layers = 2;
  enc.n_heads = 2;
  enc.d_ff = 64;
  enc.init_std = 1.0 / std::sqrt(32.0);
  PemiModel model = init_model(init_encoder<float>(enc), parse_layout(kDefaultLayout), std::move(vocab), h, 11);

  TrainConfig cfg;
  cfg.max_epochs = 10;
  cfg.eval_step = 100;
  cfg.lr = 3e-3;
  const FitResult fitted = fit(model, data.train, data.dev, cfg, [](const EvalRecord& r) {
    std::cout << "step " << r.step << "  dev macro-F1 " << r.dev_f1_per_level[0] << " / " << r.dev_f1_per_level[1]
              << "\n";
  });

  const auto test = evaluate(fitted.best, prepare(fitted.best, data.test));
  std::cout << "test macro-F1 " << test[0].macro_f1 << " / " << test[1].macro_f1 << "\n";

  const Instance& probe = data.test.front();
  const auto pred = predict(fitted.best, probe.arg1, probe.arg2);
  std::cout << "\"" << probe.arg1 << "\" / \"" << probe.arg2 << "\"\n  gold " << probe.labels[0] << " > "
            << probe.labels[1] << ", predicted " << h.name(0, pred[0].label) << " > " << h.name(1, pred[1].label)
            << "\n\n";

  std::cout << format_weight_table(weight_table(fitted.best.verbalizer, h, 0), 0);
}
