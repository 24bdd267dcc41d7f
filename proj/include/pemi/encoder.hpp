#ifndef PEMI_ENCODER_HPP
#define PEMI_ENCODER_HPP

// Compact post-LN transformer MLM encoder used as the frozen backbone.
// Soft prompts enter at the embedding layer: the rows of the prompt matrix
// replace the token embeddings at the prompt slots. The head transform
// (dense, GELU, layer norm) produces h' at the mask position; the vocab
// projection that would follow it in an MLM is replaced by the verbalizer.
// Dropout does not exist here, so training and inference share one path.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pemi/array_io.hpp"
#include "pemi/errors.hpp"
#include "pemi/numcore.hpp"
#include "pemi/prompt_template.hpp"
#include "pemi/rng.hpp"

namespace pemi {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_seq_len = 128;
  std::uint64_t seed = 7;
  // Prompt slots keep their positional embedding when true; the rows are
  // zeroed otherwise.
  bool prompt_positions = true;
  // Stddev of normal-initialised weights. Stored in millionths.
  double init_std = 0.02;

  void validate() const {
    if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0) {
      throw ConfigError("encoder sizes must all be positive");
    }
    if (!(init_std > 0.0) || init_std > 10.0) throw ConfigError("init_std must be in (0, 10]");
    if (d_model % n_heads != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
    }
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kPromptInitStd = 0.02;

// Closed-form number of encoder + head-transform parameters.
inline std::size_t encoder_parameter_count(const EncoderConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff;
  const std::size_t embeddings = c.vocab_size * d + c.max_seq_len * d + 2 * d;
  const std::size_t attention = 4 * (d * d + d);
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t per_layer = attention + ffn + 4 * d;
  const std::size_t head = d * d + d + 2 * d;
  return embeddings + c.n_layers * per_layer + head;
}

template <class T>
struct EncoderLayer {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> ln2_gain, ln2_bias;
};

enum class ParamInit { kNormal, kZero, kOne };

template <class T>
struct EncoderModel {
  EncoderConfig config;
  Tensor<T> token_embedding;     // vocab_size x d
  Tensor<T> position_embedding;  // max_seq_len x d
  Tensor<T> embed_ln_gain, embed_ln_bias;
  std::vector<EncoderLayer<T>> layers;
  Tensor<T> head_weight, head_bias;
  Tensor<T> head_ln_gain, head_ln_bias;

  // Visits (name, tensor, shape, init) in a fixed order. The order defines
  // initialization draws and the checkpoint layout.
  template <class Self, class Visitor>
  static void visit(Self& self, Visitor&& visitor) {
    const auto& c = self.config;
    const std::size_t d = c.d_model, f = c.d_ff;
    visitor("token_embedding", self.token_embedding, Shape{c.vocab_size, d}, ParamInit::kNormal);
    visitor("position_embedding", self.position_embedding, Shape{c.max_seq_len, d}, ParamInit::kNormal);
    visitor("embed_ln.gain", self.embed_ln_gain, Shape{d}, ParamInit::kOne);
    visitor("embed_ln.bias", self.embed_ln_bias, Shape{d}, ParamInit::kZero);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      visitor(p + "attn.wq", l.wq, Shape{d, d}, ParamInit::kNormal);
      visitor(p + "attn.bq", l.bq, Shape{d}, ParamInit::kZero);
      visitor(p + "attn.wk", l.wk, Shape{d, d}, ParamInit::kNormal);
      visitor(p + "attn.bk", l.bk, Shape{d}, ParamInit::kZero);
      visitor(p + "attn.wv", l.wv, Shape{d, d}, ParamInit::kNormal);
      visitor(p + "attn.bv", l.bv, Shape{d}, ParamInit::kZero);
      visitor(p + "attn.wo", l.wo, Shape{d, d}, ParamInit::kNormal);
      visitor(p + "attn.bo", l.bo, Shape{d}, ParamInit::kZero);
      visitor(p + "ln1.gain", l.ln1_gain, Shape{d}, ParamInit::kOne);
      visitor(p + "ln1.bias", l.ln1_bias, Shape{d}, ParamInit::kZero);
      visitor(p + "ffn.w1", l.w1, Shape{d, f}, ParamInit::kNormal);
      visitor(p + "ffn.b1", l.b1, Shape{f}, ParamInit::kZero);
      visitor(p + "ffn.w2", l.w2, Shape{f, d}, ParamInit::kNormal);
      visitor(p + "ffn.b2", l.b2, Shape{d}, ParamInit::kZero);
      visitor(p + "ln2.gain", l.ln2_gain, Shape{d}, ParamInit::kOne);
      visitor(p + "ln2.bias", l.ln2_bias, Shape{d}, ParamInit::kZero);
    }
    visitor("head.dense.weight", self.head_weight, Shape{d, d}, ParamInit::kNormal);
    visitor("head.dense.bias", self.head_bias, Shape{d}, ParamInit::kZero);
    visitor("head.ln.gain", self.head_ln_gain, Shape{d}, ParamInit::kOne);
    visitor("head.ln.bias", self.head_ln_bias, Shape{d}, ParamInit::kZero);
  }

  template <class F>
  void for_each_parameter(F&& f) const {
    visit(*this, [&](const std::string& name, const Tensor<T>& t, const Shape&, ParamInit) { f(name, t); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  template <class U>
  EncoderModel<U> cast() const {
    EncoderModel<U> out;
    out.config = config;
    out.layers.resize(layers.size());
    std::vector<Tensor<T>> src;
    for_each_parameter([&](const std::string&, const Tensor<T>& t) { src.push_back(t); });
    std::size_t i = 0;
    EncoderModel<U>::visit(out, [&](const std::string&, Tensor<U>& t, const Shape&, ParamInit) {
      t = src[i++].template cast<U>();
    });
    return out;
  }
};

// Weights ~ Normal(0, 0.02) drawn in visit order from config.seed; biases 0;
// layer-norm gains 1. Nothing is trainable.
template <class T>
EncoderModel<T> init_encoder(const EncoderConfig& config) {
  config.validate();
  EncoderModel<T> model;
  model.config = config;
  model.layers.resize(config.n_layers);
  Rng rng(config.seed);
  EncoderModel<T>::visit(model, [&](const std::string&, Tensor<T>& t, const Shape& shape, ParamInit init) {
    std::vector<T> values(shape_size(shape));
    for (auto& v : values) {
      switch (init) {
        case ParamInit::kNormal: v = static_cast<T>(rng.normal(0.0, config.init_std)); break;
        case ParamInit::kZero: v = T(0); break;
        case ParamInit::kOne: v = T(1); break;
      }
    }
    t = Tensor<T>(shape, std::move(values), false);
  });
  return model;
}

template <class T>
struct EncoderOutput {
  Var h_mask;   // 1 x d, hidden state at the mask position
  Var h_prime;  // 1 x d, after the head transform
};

template <class T>
struct ForwardTrace {
  Tensor<T> h_mask;
  Tensor<T> h_prime;
};

template <class T>
Var head_transform(Tape<T>& tape, const EncoderModel<T>& model, Var h_mask) {
  const std::size_t d = model.config.d_model;
  if (tape.value(h_mask).size() != d) {
    throw DimensionError("head_transform expects " + std::to_string(d) + " values, got " +
                         shape_string(tape.value(h_mask).shape()));
  }
  const Var row = tape.value(h_mask).rank() == 2 ? h_mask : reshape(tape, h_mask, {1, d});
  Var x = add_row(tape, matmul(tape, row, tape.constant(model.head_weight)), tape.constant(model.head_bias));
  x = gelu(tape, x);
  return layer_norm(tape, x, tape.constant(model.head_ln_gain), tape.constant(model.head_ln_bias), kLayerNormEps);
}

template <class T>
Tensor<T> head_transform(const EncoderModel<T>& model, const Tensor<T>& h_mask) {
  if (!h_mask.all_finite()) throw NumericError("head_transform input is not finite");
  Tape<T> tape;
  return tape.value(head_transform(tape, model, tape.constant(h_mask))).reshaped(h_mask.shape());
}

namespace detail {

template <class T>
Var self_attention(Tape<T>& tape, const EncoderModel<T>& model, const EncoderLayer<T>& layer, Var x) {
  const std::size_t d = model.config.d_model, heads = model.config.n_heads, dh = d / heads;
  const Var q = add_row(tape, matmul(tape, x, tape.constant(layer.wq)), tape.constant(layer.bq));
  const Var k = add_row(tape, matmul(tape, x, tape.constant(layer.wk)), tape.constant(layer.bk));
  const Var v = add_row(tape, matmul(tape, x, tape.constant(layer.wv)), tape.constant(layer.bv));
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Var> contexts;
  contexts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
    const Var kh = slice_cols(tape, k, h * dh, (h + 1) * dh);
    const Var vh = slice_cols(tape, v, h * dh, (h + 1) * dh);
    const Var scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
    contexts.push_back(matmul(tape, row_softmax(tape, scores), vh));
  }
  const Var merged = heads == 1 ? contexts.front() : concat_cols(tape, contexts);
  return add_row(tape, matmul(tape, merged, tape.constant(layer.wo)), tape.constant(layer.bo));
}

}  // namespace detail

// Runs the full stack on a templated input. `prompts` is K x d; its rows go
// to input.prompt_positions in order.
template <class T>
EncoderOutput<T> encode(Tape<T>& tape, const EncoderModel<T>& model, const ModifiedInput& input, Var prompts) {
  const auto& c = model.config;
  const std::size_t n = input.token_ids.size();
  if (n > c.max_seq_len) {
    throw LengthError("sequence of " + std::to_string(n) + " tokens exceeds max_seq_len " +
                      std::to_string(c.max_seq_len));
  }
  std::size_t masks = 0;
  for (std::size_t id : input.token_ids) {
    if (id >= c.vocab_size) throw DataError("token id " + std::to_string(id) + " outside the vocabulary");
    masks += id == Vocab::kMask ? 1 : 0;
  }
  if (masks != 1 || input.mask_position >= n || input.token_ids[input.mask_position] != Vocab::kMask) {
    throw TemplateError("input must contain exactly one mask token, found " + std::to_string(masks));
  }
  const Tensor<T>& pv = tape.value(prompts);
  const std::size_t k = input.prompt_positions.size();
  if ((k == 0 && pv.size() != 0) || (k > 0 && (pv.rank() != 2 || pv.dim(0) != k || pv.dim(1) != c.d_model))) {
    throw DimensionError("prompt matrix " + shape_string(pv.shape()) + " does not fit " + std::to_string(k) +
                         " prompt slots of width " + std::to_string(c.d_model));
  }

  Var x = gather_rows(tape, tape.constant(model.token_embedding), input.token_ids);
  if (k > 0) x = replace_rows(tape, x, prompts, input.prompt_positions);

  std::vector<T> pos(model.position_embedding.data(), model.position_embedding.data() + n * c.d_model);
  if (!c.prompt_positions) {
    for (std::size_t p : input.prompt_positions) std::fill_n(pos.begin() + static_cast<std::ptrdiff_t>(p * c.d_model), c.d_model, T(0));
  }
  x = add(tape, x, tape.constant(Tensor<T>({n, c.d_model}, std::move(pos))));
  x = layer_norm(tape, x, tape.constant(model.embed_ln_gain), tape.constant(model.embed_ln_bias), kLayerNormEps);

  for (const auto& layer : model.layers) {
    const Var attended = detail::self_attention(tape, model, layer, x);
    x = layer_norm(tape, add(tape, x, attended), tape.constant(layer.ln1_gain), tape.constant(layer.ln1_bias),
                   kLayerNormEps);
    Var ff = add_row(tape, matmul(tape, x, tape.constant(layer.w1)), tape.constant(layer.b1));
    ff = add_row(tape, matmul(tape, gelu(tape, ff), tape.constant(layer.w2)), tape.constant(layer.b2));
    x = layer_norm(tape, add(tape, x, ff), tape.constant(layer.ln2_gain), tape.constant(layer.ln2_bias),
                   kLayerNormEps);
  }

  const std::size_t mask_row[] = {input.mask_position};
  const Var h_mask = gather_rows(tape, x, mask_row);
  return EncoderOutput<T>{h_mask, head_transform(tape, model, h_mask)};
}

template <class T>
ForwardTrace<T> forward(const EncoderModel<T>& model, const ModifiedInput& input, const Tensor<T>& prompts) {
  Tape<T> tape;
  const auto out = encode(tape, model, input, tape.constant(prompts));
  return ForwardTrace<T>{tape.value(out.h_mask).reshaped({model.config.d_model}),
                         tape.value(out.h_prime).reshaped({model.config.d_model})};
}

inline constexpr char kEncoderMagic[] = "PEMI-ENC";

inline std::vector<std::pair<std::string, std::int64_t>> encoder_header(const EncoderConfig& c) {
  return {{"vocab_size", static_cast<std::int64_t>(c.vocab_size)},
          {"d_model", static_cast<std::int64_t>(c.d_model)},
          {"n_layers", static_cast<std::int64_t>(c.n_layers)},
          {"n_heads", static_cast<std::int64_t>(c.n_heads)},
          {"d_ff", static_cast<std::int64_t>(c.d_ff)},
          {"max_seq_len", static_cast<std::int64_t>(c.max_seq_len)},
          {"seed", static_cast<std::int64_t>(c.seed)},
          {"prompt_positions", c.prompt_positions ? 1 : 0},
          {"init_std_e6", std::llround(c.init_std * 1e6)}};
}

inline void save_weights(const EncoderModel<float>& model, const std::string& path) {
  ArrayFile file;
  file.magic = kEncoderMagic;
  file.header = encoder_header(model.config);
  model.for_each_parameter(
      [&](const std::string& name, const TensorF& t) { file.arrays.push_back(NamedArray{name, t}); });
  write_array_file(path, file);
}

inline EncoderModel<float> load_weights(const std::string& path) {
  const ArrayFile file = read_array_file(path, kEncoderMagic);
  EncoderConfig c;
  c.vocab_size = static_cast<std::size_t>(file.require_header("vocab_size"));
  c.d_model = static_cast<std::size_t>(file.require_header("d_model"));
  c.n_layers = static_cast<std::size_t>(file.require_header("n_layers"));
  c.n_heads = static_cast<std::size_t>(file.require_header("n_heads"));
  c.d_ff = static_cast<std::size_t>(file.require_header("d_ff"));
  c.max_seq_len = static_cast<std::size_t>(file.require_header("max_seq_len"));
  c.seed = static_cast<std::uint64_t>(file.require_header("seed"));
  c.prompt_positions = file.require_header("prompt_positions") != 0;
  c.init_std = static_cast<double>(file.require_header("init_std_e6")) / 1e6;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
  EncoderModel<float> model;
  model.config = c;
  model.layers.resize(c.n_layers);
  std::size_t expected = 0;
  EncoderModel<float>::visit(model, [&](const std::string& name, TensorF& t, const Shape& shape, ParamInit) {
    t = expect_array(file, name, shape).with_requires_grad(false);
    ++expected;
  });
  if (file.arrays.size() != expected) {
    throw CheckpointError(path + " holds " + std::to_string(file.arrays.size()) + " arrays, expected " +
                          std::to_string(expected));
  }
  return model;
}

// Loads and checks the stored config against `expected`.
inline EncoderModel<float> load_weights(const std::string& path, const EncoderConfig& expected) {
  EncoderModel<float> model = load_weights(path);
  const auto have = encoder_header(model.config);
  const auto want = encoder_header(expected);
  for (std::size_t i = 0; i < have.size(); ++i) {
    if (have[i].second != want[i].second) {
      throw CheckpointError(path + ": " + have[i].first + " is " + std::to_string(have[i].second) + ", expected " +
                            std::to_string(want[i].second));
    }
  }
  return model;
}

}  // namespace pemi

#endif  // PEMI_ENCODER_HPP
