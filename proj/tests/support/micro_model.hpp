#ifndef PEMI_TESTS_MICRO_MODEL_HPP
#define PEMI_TESTS_MICRO_MODEL_HPP

// Small end-to-end fixtures: a micro PEMI model (d=16, 2 layers, 2 heads,
// K=4, two levels over four bottom labels) and a planted 3/6 hierarchy.

#include <string>
#include <vector>

#include "pemi/data.hpp"
#include "pemi/encoder.hpp"
#include "pemi/hierarchy.hpp"
#include "pemi/train.hpp"

namespace pemi::testing {

inline LabelHierarchy micro_hierarchy() {
  // X -> {a, b, c}, Y -> {c, d}
  return LabelHierarchy({{"X", "Y"}, {"a", "b", "c", "d"}}, {{0, 0, 0}, {0, 0, 1}, {0, 0, 2}, {0, 1, 2}, {0, 1, 3}});
}

inline std::vector<Instance> micro_instances(const LabelHierarchy& h) {
  return {make_instance(h, "the cat sat", "on a mat", {"X", "a"}),
          make_instance(h, "a dog ran", "far away", {"X", "b"}),
          make_instance(h, "rain fell", "the river rose", {"Y", "c"}),
          make_instance(h, "sun came out", "a cat slept", {"Y", "d"})};
}

inline PemiModel micro_model(std::uint64_t seed = 21) {
  const LabelHierarchy h = micro_hierarchy();
  std::vector<std::string> corpus;
  for (const auto& inst : micro_instances(h)) {
    corpus.push_back(inst.arg1);
    corpus.push_back(inst.arg2);
  }
  Vocab vocab = build_vocab(corpus);
  EncoderConfig c;
  c.vocab_size = vocab.size();
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 32;
  c.seed = seed;
  return init_model(init_encoder<float>(c), parse_layout("P:2 A1 MASK SEP A2 P:2"), std::move(vocab), h, seed);
}

// Three tops over six bottoms, tree-shaped.
inline LabelHierarchy planted_hierarchy() {
  return LabelHierarchy({{"T0", "T1", "T2"}, {"b0", "b1", "b2", "b3", "b4", "b5"}},
                        {{0, 0, 0}, {0, 0, 1}, {0, 1, 2}, {0, 1, 3}, {0, 2, 4}, {0, 2, 5}});
}

inline std::vector<std::string> corpus_of(const std::vector<Instance>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    out.push_back(r.arg1);
    out.push_back(r.arg2);
  }
  return out;
}

// Toy encoder (d=64, 4 layers, 4 heads, d_ff=256, L=128, init std 1/8) sized for
// the bundle's training vocabulary, default layout.
inline PemiModel toy_model(const DatasetBundle& bundle, const LabelHierarchy& h, std::uint64_t seed) {
  Vocab vocab = build_vocab(corpus_of(bundle.train));
  EncoderConfig c;
  c.vocab_size = vocab.size();
  c.seed = seed;
  c.init_std = 0.125;
  return init_model(init_encoder<float>(c), parse_layout(kDefaultLayout), std::move(vocab), h, seed);
}

}  // namespace pemi::testing

#endif  // PEMI_TESTS_MICRO_MODEL_HPP
