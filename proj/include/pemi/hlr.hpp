#ifndef PEMI_HLR_HPP
#define PEMI_HLR_HPP

// Hierarchical label refining. Only the bottom-level label embeddings and
// one weight unit per parent->child edge are parameters; every upper
// verbalizer matrix is rebuilt from the level below on each forward:
//
//   M^Z = bottom embeddings
//   M^z = f(W^z) · M^{z+1},   z = Z-1 .. 1
//
// where W^z holds the edge units at their (parent, child) cells and f
// normalizes each parent's row over its support set only, leaving exact
// zeros outside it.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pemi/errors.hpp"
#include "pemi/hierarchy.hpp"
#include "pemi/numcore.hpp"
#include "pemi/prompt_template.hpp"
#include "pemi/rng.hpp"

namespace pemi {

enum class Normalization { kSoftmax, kL1 };

inline std::string to_string(Normalization n) { return n == Normalization::kSoftmax ? "softmax" : "l1"; }

inline Normalization parse_normalization(const std::string& text) {
  if (text == "softmax") return Normalization::kSoftmax;
  if (text == "l1") return Normalization::kL1;
  throw ConfigError("unknown normalization '" + text + "' (expected softmax or l1)");
}

template <class T>
struct VerbalizerState {
  Tensor<T> bottom;              // |L^Z| x d
  std::vector<Tensor<T>> units;  // per parent level z: one value per edge, in edge order
  Normalization normalization = Normalization::kSoftmax;

  template <class U>
  VerbalizerState<U> cast() const {
    VerbalizerState<U> out;
    out.bottom = bottom.template cast<U>();
    for (const auto& u : units) out.units.push_back(u.template cast<U>());
    out.normalization = normalization;
    return out;
  }
};

// One trainable unit per edge. Softmax units start at 0 and L1 units at 1,
// so every parent begins with uniform weights over its children.
template <class T>
std::vector<Tensor<T>> init_weight_units(const LabelHierarchy& h, Normalization normalization) {
  std::vector<Tensor<T>> units;
  const T start = normalization == Normalization::kSoftmax ? T(0) : T(1);
  for (std::size_t z = 0; z + 1 < h.num_levels(); ++z) {
    const std::size_t n = h.edges(z).size();
    units.push_back(Tensor<T>({n}, std::vector<T>(n, start), true));
  }
  return units;
}

// Row i starts from the token embedding of the first token of bottom
// label i when that token is in the vocabulary, otherwise Normal(0, 0.02).
template <class T>
Tensor<T> init_bottom_embeddings(const LabelHierarchy& h, const Vocab& vocab, const Tensor<T>& token_embedding,
                                 std::uint64_t seed, bool warm_start = true) {
  const std::size_t rows = h.level_size(h.bottom_level());
  const std::size_t d = token_embedding.cols();
  Rng rng(seed);
  std::vector<T> values(rows * d);
  for (std::size_t i = 0; i < rows; ++i) {
    std::optional<std::size_t> id;
    if (warm_start) {
      const auto tokens = tokenize(h.name(h.bottom_level(), i));
      if (!tokens.empty()) id = vocab.find(tokens.front());
    }
    for (std::size_t c = 0; c < d; ++c) {
      const double draw = rng.normal(0.0, 0.02);
      values[i * d + c] = id ? token_embedding.at(*id, c) : static_cast<T>(draw);
    }
  }
  return Tensor<T>({rows, d}, std::move(values), true);
}

template <class T>
VerbalizerState<T> init_verbalizer(const LabelHierarchy& h, const Vocab& vocab, const Tensor<T>& token_embedding,
                                   std::uint64_t seed, Normalization normalization = Normalization::kSoftmax,
                                   bool warm_start = true) {
  VerbalizerState<T> state;
  state.bottom = init_bottom_embeddings(h, vocab, token_embedding, seed, warm_start);
  state.units = init_weight_units<T>(h, normalization);
  state.normalization = normalization;
  return state;
}

namespace detail {

struct SupportLayout {
  std::vector<std::size_t> flat;     // parent * cols + child, per edge
  std::vector<std::uint8_t> mask;    // rows x cols
  std::size_t rows = 0;
  std::size_t cols = 0;
};

inline SupportLayout support_layout(const LabelHierarchy& h, std::size_t level) {
  SupportLayout out;
  out.rows = h.level_size(level);
  out.cols = h.level_size(level + 1);
  out.mask.assign(out.rows * out.cols, 0);
  for (const Edge& e : h.edges(level)) {
    out.flat.push_back(e.parent * out.cols + e.child);
    out.mask[e.parent * out.cols + e.child] = 1;
  }
  return out;
}

}  // namespace detail

// f(W^level): |L^level| x |L^level+1|, each row a distribution over that
// parent's children.
template <class T>
Var normalize_weights(Tape<T>& tape, const LabelHierarchy& h, Var units, std::size_t level,
                      Normalization normalization) {
  const auto layout = detail::support_layout(h, level);
  if (tape.value(units).size() != layout.flat.size()) {
    throw DimensionError("level " + std::to_string(level + 1) + " has " + std::to_string(layout.flat.size()) +
                         " edges but " + std::to_string(tape.value(units).size()) + " units");
  }
  Var dense = scatter(tape, units, layout.flat, {layout.rows, layout.cols});
  return normalization == Normalization::kSoftmax ? row_softmax(tape, dense, layout.mask)
                                                  : row_l1_normalize(tape, dense, layout.mask);
}

template <class T>
Tensor<T> normalized_weights(const LabelHierarchy& h, const Tensor<T>& units, std::size_t level,
                             Normalization normalization) {
  Tape<T> tape;
  return tape.value(normalize_weights(tape, h, tape.constant(units), level, normalization));
}

// Verbalizer matrices for every level, index 0 = top. Runs bottom-up.
template <class T>
std::vector<Var> refine(Tape<T>& tape, const LabelHierarchy& h, Var bottom, const std::vector<Var>& units,
                        Normalization normalization) {
  const std::size_t levels = h.num_levels();
  if (units.size() + 1 != levels) {
    throw DimensionError("refine needs " + std::to_string(levels - 1) + " unit vectors, got " +
                         std::to_string(units.size()));
  }
  if (tape.value(bottom).rows() != h.level_size(levels - 1)) {
    throw DimensionError("bottom embeddings have " + std::to_string(tape.value(bottom).rows()) + " rows for " +
                         std::to_string(h.level_size(levels - 1)) + " bottom labels");
  }
  std::vector<Var> matrices(levels);
  matrices[levels - 1] = bottom;
  for (std::size_t z = levels - 1; z-- > 0;) {
    const Var weights = normalize_weights(tape, h, units[z], z, normalization);
    matrices[z] = matmul(tape, weights, matrices[z + 1]);
  }
  return matrices;
}

template <class T>
std::vector<Tensor<T>> refine(const VerbalizerState<T>& state, const LabelHierarchy& h) {
  Tape<T> tape;
  std::vector<Var> units;
  for (const auto& u : state.units) units.push_back(tape.constant(u));
  const auto vars = refine(tape, h, tape.constant(state.bottom), units, state.normalization);
  std::vector<Tensor<T>> out;
  for (const Var& v : vars) out.push_back(tape.value(v));
  return out;
}

// Logits M^z h' as a single row.
template <class T>
Var level_logits(Tape<T>& tape, Var h_prime, Var matrix) {
  const std::size_t d = tape.value(h_prime).size();
  if (tape.value(matrix).rank() != 2 || tape.value(matrix).cols() != d) {
    throw DimensionError("verbalizer matrix " + shape_string(tape.value(matrix).shape()) +
                         " does not match hidden size " + std::to_string(d));
  }
  const Var row = tape.value(h_prime).rank() == 2 ? h_prime : reshape(tape, h_prime, {1, d});
  return matmul(tape, row, transpose(tape, matrix));
}

// softmax(M^z h').
template <class T>
std::vector<double> predict_level(const Tensor<T>& h_prime, const Tensor<T>& matrix) {
  Tape<T> tape;
  const Var logits = level_logits(tape, tape.constant(h_prime), tape.constant(matrix));
  return softmax_values<T>(tape.value(logits).values());
}

}  // namespace pemi

#endif  // PEMI_HLR_HPP
