#ifndef PEMI_TRAIN_HPP
#define PEMI_TRAIN_HPP

// Prompt tuning over the trainable set δ = {prompt rows, bottom label
// embeddings, weight units}. The encoder and head transform are read-only
// inputs to every function here.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pemi/data.hpp"
#include "pemi/encoder.hpp"
#include "pemi/errors.hpp"
#include "pemi/hierarchy.hpp"
#include "pemi/hlr.hpp"
#include "pemi/metrics.hpp"
#include "pemi/numcore.hpp"
#include "pemi/prompt_template.hpp"
#include "pemi/rng.hpp"

namespace pemi {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 15;
  std::size_t eval_step = 500;
  std::vector<double> lambdas;  // empty means 1.0 for every level
  std::uint64_t seed = 13;
  std::size_t max_steps = 0;    // 0 = no cap beyond max_epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  std::vector<double> lambdas_for(std::size_t levels) const {
    if (lambdas.empty()) return std::vector<double>(levels, 1.0);
    if (lambdas.size() != levels) {
      throw ConfigError("train.lambdas has " + std::to_string(lambdas.size()) + " entries for " +
                        std::to_string(levels) + " levels");
    }
    return lambdas;
  }

  void validate() const {
    if (!(lr > 0.0) || batch_size == 0 || max_epochs == 0 || eval_step == 0) {
      throw ConfigError("train.lr, train.batch, train.max_epochs and train.eval_step must be positive");
    }
    for (double l : lambdas)
      if (!(l >= 0.0)) throw ConfigError("train.lambdas must be nonnegative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
      throw ConfigError("invalid Adam hyperparameters");
    }
  }
};

struct PemiModel {
  EncoderModel<float> encoder;
  PromptTemplate layout;
  Vocab vocab;
  LabelHierarchy hierarchy;
  TensorF prompts;  // K x d
  VerbalizerState<float> verbalizer;
};

// Prompt rows ~ Normal(0, 0.02) from `seed`; verbalizer per init_verbalizer.
inline PemiModel init_model(EncoderModel<float> encoder, PromptTemplate layout, Vocab vocab, LabelHierarchy hierarchy,
                            std::uint64_t seed, Normalization normalization = Normalization::kSoftmax,
                            bool warm_start = true) {
  if (vocab.size() != encoder.config.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) + " entries but the encoder expects " +
                      std::to_string(encoder.config.vocab_size));
  }
  PemiModel m{std::move(encoder), std::move(layout), std::move(vocab), std::move(hierarchy), {}, {}};
  const std::size_t k = m.layout.prompt_count(), d = m.encoder.config.d_model;
  Rng rng(seed);
  std::vector<float> rows(k * d);
  for (auto& v : rows) v = static_cast<float>(rng.normal(0.0, kPromptInitStd));
  m.prompts = TensorF({k, d}, std::move(rows), true);
  m.verbalizer = init_verbalizer(m.hierarchy, m.vocab, m.encoder.token_embedding, seed + 1, normalization, warm_start);
  return m;
}

// ---------------------------------------------------------------------------
// Parameter accounting

struct ParamBreakdown {
  std::size_t prompts = 0;
  std::size_t verbalizer = 0;
  std::size_t weight_units = 0;
  std::size_t total() const { return prompts + verbalizer + weight_units; }
};

inline ParamBreakdown count_trainable_params(std::size_t k, std::size_t d, std::size_t bottom_labels,
                                             std::size_t edges) {
  return ParamBreakdown{k * d, bottom_labels * d, edges};
}

inline ParamBreakdown count_trainable_params(const PromptTemplate& layout, std::size_t d, const LabelHierarchy& h) {
  return count_trainable_params(layout.prompt_count(), d, h.level_size(h.bottom_level()), h.edge_count());
}

struct NamedParameter {
  std::string name;
  std::string group;  // "prompts", "verbalizer", "weight_units" or "encoder"
  std::size_t size = 0;
};

struct ParameterPartition {
  std::vector<NamedParameter> trainable;
  std::vector<NamedParameter> frozen;

  ParamBreakdown breakdown() const {
    ParamBreakdown b;
    for (const auto& p : trainable) {
      if (p.group == "prompts") b.prompts += p.size;
      if (p.group == "verbalizer") b.verbalizer += p.size;
      if (p.group == "weight_units") b.weight_units += p.size;
    }
    return b;
  }
};

inline std::string units_name(std::size_t level) { return "weight_units.level" + std::to_string(level + 1); }

inline ParameterPartition partition(const PemiModel& m) {
  ParameterPartition p;
  p.trainable.push_back({"prompts", "prompts", m.prompts.size()});
  p.trainable.push_back({"verbalizer.bottom", "verbalizer", m.verbalizer.bottom.size()});
  for (std::size_t z = 0; z < m.verbalizer.units.size(); ++z)
    p.trainable.push_back({units_name(z), "weight_units", m.verbalizer.units[z].size()});
  m.encoder.for_each_parameter(
      [&](const std::string& name, const TensorF& t) { p.frozen.push_back({name, "encoder", t.size()}); });
  return p;
}

// ---------------------------------------------------------------------------
// Losses

// −log softmax(logits)[target] through the stable log-sum-exp path.
template <class T>
Var level_loss(Tape<T>& tape, Var logits, std::size_t target) {
  return cross_entropy(tape, logits, target);
}

template <class T>
Var joint_loss(Tape<T>& tape, const std::vector<Var>& losses, const std::vector<double>& lambdas) {
  if (losses.size() != lambdas.size()) {
    throw DimensionError("joint_loss got " + std::to_string(losses.size()) + " losses and " +
                         std::to_string(lambdas.size()) + " weights");
  }
  std::vector<T> coeffs(lambdas.begin(), lambdas.end());
  return weighted_sum(tape, losses, coeffs);
}

// Trainable leaves of one forward pass.
template <class T>
struct DeltaVars {
  Var prompts;
  Var bottom;
  std::vector<Var> units;
};

template <class T>
DeltaVars<T> attach_delta(Tape<T>& tape, const Tensor<T>& prompts, const VerbalizerState<T>& verbalizer,
                          bool trainable) {
  auto put = [&](const Tensor<T>& t) { return trainable ? tape.leaf(t.with_requires_grad(true)) : tape.constant(t); };
  DeltaVars<T> v{put(prompts), put(verbalizer.bottom), {}};
  for (const auto& u : verbalizer.units) v.units.push_back(put(u));
  return v;
}

// Per-level losses for one instance, given matrices already refined on
// this tape.
template <class T>
std::vector<Var> instance_losses(Tape<T>& tape, const EncoderModel<T>& encoder, const ModifiedInput& input,
                                 Var prompts, const std::vector<Var>& matrices,
                                 const std::vector<std::size_t>& labels) {
  if (labels.size() != matrices.size()) {
    throw DimensionError("instance has " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(matrices.size()) + " levels");
  }
  const Var h = encode(tape, encoder, input, prompts).h_prime;
  std::vector<Var> losses;
  for (std::size_t z = 0; z < matrices.size(); ++z)
    losses.push_back(level_loss(tape, level_logits(tape, h, matrices[z]), labels[z]));
  return losses;
}

// Batch-mean joint loss over (input, labels) pairs on an existing tape.
// Returns the loss and the batch-mean loss per level.
template <class T>
std::pair<Var, std::vector<double>> batch_loss(Tape<T>& tape, const EncoderModel<T>& encoder,
                                               const LabelHierarchy& h, const DeltaVars<T>& delta,
                                               Normalization normalization,
                                               const std::vector<const ModifiedInput*>& inputs,
                                               const std::vector<const std::vector<std::size_t>*>& labels,
                                               const std::vector<double>& lambdas) {
  if (inputs.empty()) throw DataError("empty batch");
  const auto matrices = refine(tape, h, delta.bottom, delta.units, normalization);
  std::vector<Var> joints;
  std::vector<double> per_level(h.num_levels(), 0.0);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto losses = instance_losses(tape, encoder, *inputs[i], delta.prompts, matrices, *labels[i]);
    for (std::size_t z = 0; z < losses.size(); ++z) per_level[z] += tape.value(losses[z]).item();
    joints.push_back(joint_loss(tape, losses, lambdas));
  }
  const double inv = 1.0 / static_cast<double>(inputs.size());
  for (double& l : per_level) l *= inv;
  return {weighted_sum(tape, joints, std::vector<T>(joints.size(), static_cast<T>(inv))), per_level};
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamMoments {
  std::vector<double> m, v;
};

struct TrainState {
  std::vector<AdamMoments> moments;  // prompts, bottom, then one per unit vector
  std::size_t step = 0;
  std::size_t epoch = 0;
};

inline TrainState init_train_state(const PemiModel& model) {
  TrainState s;
  auto add = [&](const TensorF& t) { s.moments.push_back({std::vector<double>(t.size()), std::vector<double>(t.size())}); };
  add(model.prompts);
  add(model.verbalizer.bottom);
  for (const auto& u : model.verbalizer.units) add(u);
  return s;
}

// A dataset already projected through the template.
struct PreparedSet {
  std::vector<ModifiedInput> inputs;
  std::vector<std::vector<std::size_t>> labels;
  std::size_t size() const { return inputs.size(); }
};

inline PreparedSet prepare(const PemiModel& model, const std::vector<Instance>& instances) {
  PreparedSet out;
  for (const auto& inst : instances) {
    if (inst.label_ids.size() != model.hierarchy.num_levels()) {
      throw DataError("instance labels do not match the hierarchy depth");
    }
    out.inputs.push_back(
        apply_template(model.layout, inst.arg1, inst.arg2, model.vocab, model.encoder.config.max_seq_len));
    out.labels.push_back(inst.label_ids);
  }
  return out;
}

// One optimizer step on the given batch rows. The model and state change
// only after every new value has been computed and checked.
inline std::vector<double> train_step(PemiModel& model, TrainState& state, const PreparedSet& data,
                                      const std::vector<std::size_t>& rows, const TrainConfig& config) {
  if (rows.empty()) throw DataError("empty batch");
  Tape<float> tape;
  const auto delta = attach_delta(tape, model.prompts, model.verbalizer, true);
  std::vector<const ModifiedInput*> inputs;
  std::vector<const std::vector<std::size_t>*> labels;
  for (std::size_t r : rows) {
    inputs.push_back(&data.inputs.at(r));
    labels.push_back(&data.labels.at(r));
  }
  const auto [loss, per_level] = batch_loss(tape, model.encoder, model.hierarchy, delta,
                                            model.verbalizer.normalization, inputs, labels,
                                            config.lambdas_for(model.hierarchy.num_levels()));
  const double value = tape.value(loss).item();
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss at step " + std::to_string(state.step + 1));
  }
  const auto grads = backward(tape, loss);

  std::vector<Var> vars{delta.prompts, delta.bottom};
  vars.insert(vars.end(), delta.units.begin(), delta.units.end());
  std::vector<const TensorF*> params{&model.prompts, &model.verbalizer.bottom};
  for (const auto& u : model.verbalizer.units) params.push_back(&u);

  const std::size_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  std::vector<AdamMoments> moments = state.moments;
  std::vector<TensorF> updated;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    const TensorF& p = *params[k];
    std::vector<float> next = p.to_vector();
    if (grads.contains(vars[k])) {
      const auto g = grads.at(vars[k]).values();
      auto& [m, v] = moments[k];
      for (std::size_t i = 0; i < next.size(); ++i) {
        const double gi = g[i];
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
        next[i] = static_cast<float>(next[i] - config.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_eps));
      }
    }
    TensorF fresh(p.shape(), std::move(next), true);
    if (!fresh.all_finite()) throw NumericError("parameter update produced non-finite values");
    updated.push_back(std::move(fresh));
  }
  model.prompts = std::move(updated[0]);
  model.verbalizer.bottom = std::move(updated[1]);
  for (std::size_t z = 0; z < model.verbalizer.units.size(); ++z) model.verbalizer.units[z] = std::move(updated[2 + z]);
  state.moments = std::move(moments);
  state.step = t;
  return per_level;
}

// ---------------------------------------------------------------------------
// Inference

struct LevelPrediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

// Upper matrices refined once, reused across many predictions.
inline std::vector<TensorF> refined_matrices(const PemiModel& model) { return refine(model.verbalizer, model.hierarchy); }

inline std::vector<LevelPrediction> predict(const PemiModel& model, const std::vector<TensorF>& matrices,
                                            const ModifiedInput& input) {
  const ForwardTrace<float> trace = forward(model.encoder, input, model.prompts.with_requires_grad(false));
  std::vector<LevelPrediction> out;
  for (const auto& m : matrices) {
    LevelPrediction p;
    p.probabilities = predict_level(trace.h_prime, m);
    for (std::size_t c = 1; c < p.probabilities.size(); ++c)
      if (p.probabilities[c] > p.probabilities[p.label]) p.label = c;
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<LevelPrediction> predict(const PemiModel& model, const std::string& arg1, const std::string& arg2) {
  return predict(model, refined_matrices(model),
                 apply_template(model.layout, arg1, arg2, model.vocab, model.encoder.config.max_seq_len));
}

// Predicted label per level, per instance: out[level][instance].
inline std::vector<std::vector<std::size_t>> predict_all(const PemiModel& model, const PreparedSet& data) {
  const auto matrices = refined_matrices(model);
  std::vector<std::vector<std::size_t>> out(model.hierarchy.num_levels());
  for (const auto& input : data.inputs) {
    const auto p = predict(model, matrices, input);
    for (std::size_t z = 0; z < p.size(); ++z) out[z].push_back(p[z].label);
  }
  return out;
}

inline std::vector<LevelMetrics> evaluate(const PemiModel& model, const PreparedSet& data) {
  const auto pred = predict_all(model, data);
  std::vector<LevelMetrics> out;
  for (std::size_t z = 0; z < pred.size(); ++z) {
    std::vector<std::size_t> gold;
    for (const auto& l : data.labels) gold.push_back(l[z]);
    out.push_back(compute_metrics(gold, pred[z], model.hierarchy.level_size(z)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct EvalRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::vector<double> loss_per_level;  // mean training loss since the previous record
  std::vector<double> dev_f1_per_level;
  std::vector<double> dev_acc_per_level;

  double score() const {
    double s = 0.0;
    for (double f : dev_f1_per_level) s += f;
    return s;
  }

  nlohmann::json to_json() const {
    return {{"step", step},
            {"epoch", epoch},
            {"loss_per_level", loss_per_level},
            {"dev_f1_per_level", dev_f1_per_level},
            {"dev_acc_per_level", dev_acc_per_level}};
  }
};

struct FitResult {
  PemiModel best;
  double best_score = -1.0;
  std::size_t best_step = 0;
  std::vector<EvalRecord> log;
  std::size_t total_steps = 0;
};

// Mini-batch training with a fresh shuffle per epoch. Dev is scored every
// eval_step steps and once more after the last step; the returned model is
// the one with the highest summed dev macro-F1 (earliest on ties).
inline FitResult fit(PemiModel model, const std::vector<Instance>& train, const std::vector<Instance>& dev,
                     const TrainConfig& config, const std::function<void(const EvalRecord&)>& on_eval = {}) {
  config.validate();
  if (train.empty()) throw DataError("training split is empty");
  if (dev.empty()) throw DataError("development split is empty");
  const PreparedSet train_set = prepare(model, train);
  const PreparedSet dev_set = prepare(model, dev);

  FitResult result{model, -1.0, 0, {}, 0};
  TrainState state = init_train_state(model);
  Rng rng(config.seed);
  std::vector<double> loss_sum(model.hierarchy.num_levels(), 0.0);
  std::size_t loss_steps = 0;

  auto record = [&] {
    EvalRecord r;
    r.step = state.step;
    r.epoch = state.epoch;
    for (double s : loss_sum) r.loss_per_level.push_back(loss_steps == 0 ? 0.0 : s / static_cast<double>(loss_steps));
    for (const auto& m : evaluate(model, dev_set)) {
      r.dev_f1_per_level.push_back(m.macro_f1);
      r.dev_acc_per_level.push_back(m.accuracy);
    }
    std::fill(loss_sum.begin(), loss_sum.end(), 0.0);
    loss_steps = 0;
    if (r.score() > result.best_score) {
      result.best_score = r.score();
      result.best_step = r.step;
      result.best = model;
    }
    result.log.push_back(r);
    if (on_eval) on_eval(r);
  };

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  bool done = false;
  for (std::size_t epoch = 1; epoch <= config.max_epochs && !done; ++epoch) {
    state.epoch = epoch;
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size() && !done; begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto losses = train_step(model, state, train_set, rows, config);
      for (std::size_t z = 0; z < losses.size(); ++z) loss_sum[z] += losses[z];
      ++loss_steps;
      if (state.step % config.eval_step == 0) record();
      done = config.max_steps != 0 && state.step >= config.max_steps;
    }
  }
  record();
  result.total_steps = state.step;
  return result;
}

}  // namespace pemi

#endif  // PEMI_TRAIN_HPP
