#ifndef PEMI_COMMANDS_HPP
#define PEMI_COMMANDS_HPP

// Subcommand bodies behind the `pemi` tool. Each writes its human-readable
// result to `out` and throws a pemi::Error subclass on failure; progress
// goes through spdlog. Requires linking spdlog.

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "pemi/checkpoint.hpp"
#include "pemi/config.hpp"
#include "pemi/data.hpp"
#include "pemi/errors.hpp"
#include "pemi/hierarchy.hpp"
#include "pemi/metrics.hpp"
#include "pemi/report.hpp"
#include "pemi/train.hpp"

namespace pemi {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Shared helpers

// PEMI_LOG={error,info,debug}; unset means info.
inline spdlog::level::level_enum log_level_from_env(const char* value) {
  if (value == nullptr || *value == '\0') return spdlog::level::info;
  const std::string v(value);
  if (v == "error") return spdlog::level::err;
  if (v == "info") return spdlog::level::info;
  if (v == "debug") return spdlog::level::debug;
  throw ConfigError("PEMI_LOG must be error, info or debug, got '" + v + "'");
}

struct LevelRange {
  std::size_t first = 0;  // 0-based, inclusive
  std::size_t last = 0;
};

// "A..B" or "A", 1-based. Empty text selects every level.
inline LevelRange parse_level_range(const std::string& text, std::size_t num_levels) {
  if (text.empty()) return {0, num_levels - 1};
  auto number = [&](const std::string& s) -> std::size_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw LevelError("bad level range '" + text + "', expected A..B");
    }
    return static_cast<std::size_t>(std::stoul(s));
  };
  const auto dots = text.find("..");
  const std::size_t a = number(dots == std::string::npos ? text : text.substr(0, dots));
  const std::size_t b = dots == std::string::npos ? a : number(text.substr(dots + 2));
  if (a < 1 || b < a || b > num_levels) {
    throw LevelError("level range " + text + " is outside 1.." + std::to_string(num_levels));
  }
  return {a - 1, b - 1};
}

inline std::string group_digits(std::size_t n) {
  std::string s = std::to_string(n);
  for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << text)) throw DataError("cannot write " + path.string());
}

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// Per level: summary line, then a label-wise F1 table.
inline std::string format_metrics(const std::vector<LevelMetrics>& metrics, const LabelHierarchy& h) {
  std::ostringstream out;
  for (std::size_t z = 0; z < metrics.size(); ++z) {
    const auto& m = metrics[z];
    out << "Level " << z + 1 << ": macro-F1 " << fixed(m.macro_f1) << "  accuracy " << fixed(m.accuracy) << "  (n="
        << m.support << ")\n";
    std::size_t width = 5;
    for (const auto& name : h.labels(z)) width = std::max(width, name.size());
    for (std::size_t c = 0; c < m.f1.size(); ++c) {
      out << "  " << std::left << std::setw(static_cast<int>(width)) << h.name(z, c) << std::right << "  "
          << fixed(m.f1[c]) << "\n";
    }
  }
  return out.str();
}

inline nlohmann::json metrics_report_json(const std::vector<LevelMetrics>& metrics, const LabelHierarchy& h) {
  nlohmann::json levels = nlohmann::json::array();
  for (std::size_t z = 0; z < metrics.size(); ++z) {
    nlohmann::json j = metrics_to_json(metrics[z], h.labels(z));
    j["level"] = z + 1;
    levels.push_back(std::move(j));
  }
  return {{"levels", levels}};
}

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
  FitResult fit;
  fs::path out_dir;
  std::optional<std::vector<LevelMetrics>> test;
};

inline std::vector<Instance> load_split(const RunConfig& cfg, const std::string& key, const LabelHierarchy& h) {
  return parse_dataset(cfg.require_path(key), h);
}

// Builds the vocabulary from the training split, initialises the frozen
// encoder and δ, runs fit(), and writes the best checkpoint plus
// train_log.jsonl into paths.out. Scores paths.test when set.
inline TrainSummary cmd_train(const RunConfig& cfg, std::ostream& out) {
  const LabelHierarchy h = load_hierarchy(cfg.require_path("paths.hierarchy"));
  const fs::path out_dir = cfg.require_path("paths.out");
  const auto train = load_split(cfg, "paths.train", h);
  const auto dev = load_split(cfg, "paths.dev", h);
  spdlog::info("train {} / dev {} instances, {} levels", train.size(), dev.size(), h.num_levels());

  std::vector<std::string> corpus;
  for (const auto& r : train) {
    corpus.push_back(r.arg1);
    corpus.push_back(r.arg2);
  }
  Vocab vocab = build_vocab(corpus, cfg.vocab_min_count);
  EncoderConfig ec = cfg.encoder;
  ec.vocab_size = vocab.size();
  PemiModel model = init_model(init_encoder<float>(ec), parse_layout(cfg.layout), std::move(vocab), h, cfg.train.seed,
                               cfg.normalization, cfg.warm_start);
  spdlog::info("trainable parameters: {}", group_digits(partition(model).breakdown().total()));

  fs::create_directories(out_dir);
  const fs::path log_path = out_dir / "train_log.jsonl";
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw DataError("cannot write " + log_path.string());
  TrainSummary summary{fit(model, train, dev, cfg.train,
                           [&](const EvalRecord& r) {
                             log << r.to_json().dump() << '\n';
                             log.flush();
                             spdlog::info("step {} epoch {} dev F1 {}", r.step, r.epoch,
                                          nlohmann::json(r.dev_f1_per_level).dump());
                           }),
                       out_dir,
                       std::nullopt};
  save_checkpoint(summary.fit.best, out_dir.string());

  out << "steps " << summary.fit.total_steps << "  best step " << summary.fit.best_step << "  dev F1 sum "
      << fixed(summary.fit.best_score, 6) << "\n";
  if (!cfg.paths.test.empty()) {
    const auto test = load_split(cfg, "paths.test", h);
    summary.test = evaluate(summary.fit.best, prepare(summary.fit.best, test));
    write_text(out_dir / "test_metrics.json", metrics_report_json(*summary.test, h).dump(2) + "\n");
    out << "test\n" << format_metrics(*summary.test, h);
  }
  out << "checkpoint " << out_dir.string() << "\n";
  return summary;
}

// ---------------------------------------------------------------------------
// eval

inline std::vector<Instance> load_compatible(const std::string& data, const LabelHierarchy& h) {
  try {
    return parse_dataset(data, h);
  } catch (const ValidationError& e) {
    throw CompatibilityError("dataset does not match the checkpoint hierarchy: " + std::string(e.what()));
  }
}

// Prints per-level metrics; writes the JSON report to json_path when given.
inline std::vector<LevelMetrics> cmd_eval(const std::string& checkpoint, const std::string& data,
                                          const std::string& json_path, std::ostream& out) {
  const PemiModel model = load_checkpoint(checkpoint);
  const auto instances = load_compatible(data, model.hierarchy);
  if (instances.empty()) throw DataError(data + " holds no instances");
  const auto metrics = evaluate(model, prepare(model, instances));
  out << format_metrics(metrics, model.hierarchy);
  if (!json_path.empty()) {
    write_text(json_path, metrics_report_json(metrics, model.hierarchy).dump(2) + "\n");
    spdlog::info("wrote {}", json_path);
  }
  return metrics;
}

// ---------------------------------------------------------------------------
// predict

inline std::vector<LevelPrediction> cmd_predict(const std::string& checkpoint, const std::string& arg1,
                                                const std::string& arg2, std::ostream& out) {
  const PemiModel model = load_checkpoint(checkpoint);
  const auto levels = predict(model, arg1, arg2);
  for (std::size_t z = 0; z < levels.size(); ++z) {
    const auto& p = levels[z].probabilities;
    std::vector<std::size_t> order(p.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    out << "Level " << z + 1 << ": " << model.hierarchy.name(z, levels[z].label) << " (" << fixed(p[levels[z].label])
        << ")  top-3:";
    for (std::size_t i = 0; i < std::min<std::size_t>(3, order.size()); ++i) {
      out << (i ? "," : "") << " " << model.hierarchy.name(z, order[i]) << " " << fixed(p[order[i]]);
    }
    out << "\n";
  }
  return levels;
}

// ---------------------------------------------------------------------------
// gen-synth and stats

// Writes train/dev/test JSONL files to paths.{train,dev,test}, or into out_dir
// when it is non-empty.
inline DatasetBundle cmd_gen_synth(const RunConfig& cfg, const std::string& out_dir, std::ostream& out) {
  const LabelHierarchy h = load_hierarchy(cfg.require_path("paths.hierarchy"));
  DatasetBundle bundle = generate_synthetic(h, cfg.synth_n_per_bottom, cfg.synth_vocab_size, cfg.synth_seed, cfg.synth);
  auto target = [&](const std::string& key, const char* file) {
    return out_dir.empty() ? cfg.require_path(key) : (fs::path(out_dir) / file).string();
  };
  const std::string paths[3] = {target("paths.train", "train.jsonl"), target("paths.dev", "dev.jsonl"),
                                target("paths.test", "test.jsonl")};
  const std::vector<Instance>* splits[3] = {&bundle.train, &bundle.dev, &bundle.test};
  for (int i = 0; i < 3; ++i) {
    const fs::path p(paths[i]);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_dataset(paths[i], *splits[i]);
    out << paths[i] << ": " << splits[i]->size() << " instances\n";
  }
  out << format_class_stats(class_stats(bundle, h), h, h.bottom_level());
  return bundle;
}

inline ClassCounts cmd_stats(const RunConfig& cfg, std::ostream& out) {
  const LabelHierarchy h = load_hierarchy(cfg.require_path("paths.hierarchy"));
  DatasetBundle bundle;
  bundle.train = load_split(cfg, "paths.train", h);
  bundle.dev = load_split(cfg, "paths.dev", h);
  bundle.test = load_split(cfg, "paths.test", h);
  const ClassCounts counts = class_stats(bundle, h);
  for (std::size_t z = 0; z < h.num_levels(); ++z) out << format_class_stats(counts, h, z) << "\n";
  return counts;
}

// ---------------------------------------------------------------------------
// inspect-weights

// One table per adjacent level pair inside the range (default: all).
inline std::vector<std::vector<ParentRow>> cmd_inspect_weights(const std::string& checkpoint,
                                                               const std::string& levels, std::ostream& out) {
  const PemiModel model = load_checkpoint(checkpoint);
  const auto& h = model.hierarchy;
  if (h.num_levels() < 2) throw LevelError("hierarchy has a single level, no weights to inspect");
  const LevelRange r = parse_level_range(levels, h.num_levels());
  if (r.first == r.last) throw LevelError("level range " + levels + " needs at least two levels");
  std::vector<std::vector<ParentRow>> tables;
  for (std::size_t z = r.first; z < r.last; ++z) {
    tables.push_back(weight_table(model.verbalizer, h, z));
    if (z != r.first) out << "\n";
    out << format_weight_table(tables.back(), z);
  }
  return tables;
}

// ---------------------------------------------------------------------------
// export-embeddings

struct EmbeddingExport {
  std::vector<EmbeddingRow> rows;
  Projection projection;
  fs::path csv, svg;
};

// Writes <prefix>.csv and <prefix>.svg; prefix defaults to
// <checkpoint>/embeddings.
inline EmbeddingExport cmd_export_embeddings(const std::string& checkpoint, const std::string& levels,
                                             const std::string& prefix, std::ostream& out) {
  const PemiModel model = load_checkpoint(checkpoint);
  const LevelRange r = parse_level_range(levels, model.hierarchy.num_levels());
  EmbeddingExport e;
  e.rows = embedding_rows(refined_matrices(model), model.hierarchy, r.first, r.last);
  std::vector<std::vector<double>> points;
  for (const auto& row : e.rows) points.push_back(row.vector);
  e.projection = pca_2d(points);
  const std::string base = prefix.empty() ? (fs::path(checkpoint) / "embeddings").string() : prefix;
  e.csv = base + ".csv";
  e.svg = base + ".svg";
  write_text(e.csv, embeddings_csv(e.rows));
  write_text(e.svg, embeddings_svg(e.rows, e.projection));
  out << e.rows.size() << " rows, levels " << r.first + 1 << ".." << r.last + 1 << "\n"
      << e.csv.string() << "\n"
      << e.svg.string() << "\n";
  return e;
}

// ---------------------------------------------------------------------------
// count-params

inline std::string format_breakdown(const ParamBreakdown& b) {
  std::ostringstream out;
  out << "prompts       " << std::setw(10) << group_digits(b.prompts) << "\n"
      << "verbalizer    " << std::setw(10) << group_digits(b.verbalizer) << "\n"
      << "weight units  " << std::setw(10) << group_digits(b.weight_units) << "\n"
      << "total         " << std::setw(10) << group_digits(b.total()) << "\n";
  return out.str();
}

inline ParamBreakdown cmd_count_params_config(const RunConfig& cfg, std::ostream& out) {
  const LabelHierarchy h = load_hierarchy(cfg.require_path("paths.hierarchy"));
  const ParamBreakdown b = count_trainable_params(parse_layout(cfg.layout), cfg.encoder.d_model, h);
  out << format_breakdown(b);
  return b;
}

inline ParamBreakdown cmd_count_params_checkpoint(const std::string& checkpoint, std::ostream& out) {
  const ParamBreakdown b = partition(load_checkpoint(checkpoint)).breakdown();
  out << format_breakdown(b);
  return b;
}

}  // namespace pemi

#endif  // PEMI_COMMANDS_HPP
