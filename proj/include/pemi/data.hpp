#ifndef PEMI_DATA_HPP
#define PEMI_DATA_HPP

// Labeled argument pairs. One JSON object per line:
//
//   {"arg1": "...", "arg2": "...", "labels": ["Comparison", "Contrast", "but"]}
//
// with one label per hierarchy level, top first. Consecutive labels must be
// joined by an edge; nothing is inferred or repaired.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pemi/errors.hpp"
#include "pemi/hierarchy.hpp"
#include "pemi/prompt_template.hpp"
#include "pemi/rng.hpp"

namespace pemi {

struct Instance {
  std::string arg1;
  std::string arg2;
  std::vector<std::string> labels;     // one per level, top first
  std::vector<std::size_t> label_ids;  // resolved indices, same order

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct DatasetBundle {
  std::vector<Instance> train, dev, test;
  std::string provenance;
  // Synthetic bundles only: signature tokens per bottom label.
  std::vector<std::vector<std::string>> signatures;

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

// Resolves names and checks the label path. Throws ValidationError.
inline Instance make_instance(const LabelHierarchy& h, std::string arg1, std::string arg2,
                              std::vector<std::string> labels) {
  if (labels.size() != h.num_levels()) {
    throw ValidationError("expected " + std::to_string(h.num_levels()) + " labels, got " +
                          std::to_string(labels.size()));
  }
  Instance inst{std::move(arg1), std::move(arg2), std::move(labels), {}};
  for (std::size_t z = 0; z < inst.labels.size(); ++z) {
    const auto id = h.find(z, inst.labels[z]);
    if (!id) throw ValidationError("unknown level-" + std::to_string(z + 1) + " label '" + inst.labels[z] + "'");
    if (z > 0 && !h.is_edge(z - 1, inst.label_ids.back(), *id)) {
      throw ValidationError("'" + inst.labels[z] + "' is not a child of '" + inst.labels[z - 1] + "'");
    }
    inst.label_ids.push_back(*id);
  }
  return inst;
}

inline std::vector<Instance> parse_dataset(std::istream& in, const LabelHierarchy& h,
                                           const std::string& source = "<stream>") {
  std::vector<Instance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + "invalid JSON (" + e.what() + ")");
    }
    if (!obj.is_object() || !obj.contains("arg1") || !obj.contains("arg2") || !obj.contains("labels") ||
        !obj["arg1"].is_string() || !obj["arg2"].is_string() || !obj["labels"].is_array()) {
      throw DataError(where + "expected {\"arg1\": str, \"arg2\": str, \"labels\": [str, ...]}");
    }
    std::vector<std::string> labels;
    for (const auto& l : obj["labels"]) {
      if (!l.is_string()) throw DataError(where + "labels must be strings");
      labels.push_back(l.get<std::string>());
    }
    try {
      out.push_back(make_instance(h, obj["arg1"].get<std::string>(), obj["arg2"].get<std::string>(),
                                  std::move(labels)));
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  return out;
}

inline std::vector<Instance> parse_dataset(const std::string& path, const LabelHierarchy& h) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path);
  return parse_dataset(in, h, path);
}

inline void write_dataset(std::ostream& out, const std::vector<Instance>& instances) {
  for (const auto& inst : instances) {
    out << nlohmann::json{{"arg1", inst.arg1}, {"arg2", inst.arg2}, {"labels", inst.labels}}.dump() << '\n';
  }
}

inline void write_dataset(const std::string& path, const std::vector<Instance>& instances) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset " + path);
  write_dataset(out, instances);
}

struct SyntheticOptions {
  std::size_t signature_size = 4;        // distinct signature tokens owned by each bottom label
  std::size_t signature_per_arg = 3;     // signature tokens drawn into each argument
  std::size_t min_filler = 2;            // filler tokens per argument, inclusive range
  std::size_t max_filler = 2;
};

// Bottom label whose signature overlaps the text most; ties go to the
// lower index. Returns signatures.size() when nothing overlaps.
inline std::size_t nearest_signature(const std::string& text,
                                     const std::vector<std::vector<std::string>>& signatures) {
  std::map<std::string, std::size_t> counts;
  for (const auto& tok : tokenize(text)) ++counts[tok];
  std::size_t best = signatures.size(), best_hits = 0;
  for (std::size_t b = 0; b < signatures.size(); ++b) {
    std::size_t hits = 0;
    for (const auto& tok : signatures[b]) {
      auto it = counts.find(tok);
      if (it != counts.end()) hits += it->second;
    }
    if (hits > best_hits) {
      best = b;
      best_hits = hits;
    }
  }
  return best;
}

// Share of instances whose bottom label the nearest-signature rule recovers.
inline double signature_oracle_accuracy(const std::vector<Instance>& instances,
                                        const std::vector<std::vector<std::string>>& signatures) {
  if (instances.empty()) return 1.0;
  std::size_t hits = 0;
  for (const auto& inst : instances) {
    hits += nearest_signature(inst.arg1 + " " + inst.arg2, signatures) == inst.label_ids.back() ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

// Planted-signature data over the token types w0 .. w{vocab_size-1}. Each
// bottom label owns `signature_size` tokens; the remaining types are shared
// filler. Ancestors are sampled uniformly among parents level by level.
// Per bottom label the instances split 80/10/10.
inline DatasetBundle generate_synthetic(const LabelHierarchy& h, std::size_t n_per_bottom, std::size_t vocab_size,
                                        std::uint64_t seed, const SyntheticOptions& opt = {}) {
  const std::size_t bottoms = h.level_size(h.bottom_level());
  if (opt.signature_size < 2 || opt.signature_per_arg < 1 || opt.min_filler > opt.max_filler) {
    throw ConfigError("invalid synthetic options");
  }
  const std::size_t reserved = bottoms * opt.signature_size;
  if (vocab_size < reserved + opt.max_filler + 1) {
    throw ConfigError("vocab_size " + std::to_string(vocab_size) + " is too small for " + std::to_string(bottoms) +
                      " disjoint signatures of " + std::to_string(opt.signature_size) + " tokens plus filler");
  }
  if (n_per_bottom == 0) throw ConfigError("n_per_bottom must be positive");

  Rng rng(seed);
  std::vector<std::string> types;
  for (std::size_t i = 0; i < vocab_size; ++i) types.push_back("w" + std::to_string(i));
  rng.shuffle(types);

  DatasetBundle bundle;
  bundle.provenance = "synthetic seed=" + std::to_string(seed) + " n_per_bottom=" + std::to_string(n_per_bottom) +
                      " vocab_size=" + std::to_string(vocab_size);
  bundle.signatures.resize(bottoms);
  for (std::size_t b = 0; b < bottoms; ++b)
    bundle.signatures[b].assign(types.begin() + static_cast<std::ptrdiff_t>(b * opt.signature_size),
                                types.begin() + static_cast<std::ptrdiff_t>((b + 1) * opt.signature_size));
  const std::vector<std::string> filler(types.begin() + static_cast<std::ptrdiff_t>(reserved), types.end());

  auto argument = [&](std::size_t b) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i < opt.signature_per_arg; ++i)
      words.push_back(bundle.signatures[b][rng.below(opt.signature_size)]);
    const std::size_t n_fill = opt.min_filler + rng.below(opt.max_filler - opt.min_filler + 1);
    for (std::size_t i = 0; i < n_fill; ++i) words.push_back(filler[rng.below(filler.size())]);
    rng.shuffle(words);
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    return text;
  };

  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t b = 0; b < bottoms; ++b) {
    std::vector<Instance> rows;
    std::size_t attempts = 0;
    while (rows.size() < n_per_bottom) {
      if (++attempts > 100 * n_per_bottom) {
        throw ConfigError("cannot draw " + std::to_string(n_per_bottom) + " distinct instances for label '" +
                          h.name(h.bottom_level(), b) + "'");
      }
      std::string a1 = argument(b), a2 = argument(b);
      if (!seen.emplace(a1, a2).second) continue;
      std::vector<std::size_t> path(h.num_levels());
      path.back() = b;
      for (std::size_t z = h.bottom_level(); z-- > 0;) {
        const auto& ps = h.parents(z + 1, path[z + 1]);
        path[z] = ps[rng.below(ps.size())];
      }
      std::vector<std::string> names;
      for (std::size_t z = 0; z < path.size(); ++z) names.push_back(h.name(z, path[z]));
      rows.push_back(make_instance(h, std::move(a1), std::move(a2), std::move(names)));
    }
    const std::size_t n_train = n_per_bottom * 8 / 10;
    const std::size_t n_dev = n_per_bottom / 10;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto& split = i < n_train ? bundle.train : i < n_train + n_dev ? bundle.dev : bundle.test;
      split.push_back(std::move(rows[i]));
    }
  }
  for (auto* split : {&bundle.train, &bundle.dev, &bundle.test}) rng.shuffle(*split);

  for (const auto* split : {&bundle.train, &bundle.dev, &bundle.test}) {
    if (signature_oracle_accuracy(*split, bundle.signatures) != 1.0) {
      throw Error("synthetic data failed its separability check");
    }
  }
  return bundle;
}

// counts[split][level][class]; split order train, dev, test.
using ClassCounts = std::vector<std::vector<std::vector<std::size_t>>>;

inline ClassCounts class_stats(const DatasetBundle& bundle, const LabelHierarchy& h) {
  ClassCounts counts;
  for (const auto* split : {&bundle.train, &bundle.dev, &bundle.test}) {
    std::vector<std::vector<std::size_t>> per_level;
    for (std::size_t z = 0; z < h.num_levels(); ++z) per_level.emplace_back(h.level_size(z), 0);
    for (const auto& inst : *split)
      for (std::size_t z = 0; z < h.num_levels(); ++z) ++per_level[z].at(inst.label_ids.at(z));
    counts.push_back(std::move(per_level));
  }
  return counts;
}

// Aligned table for one level: a row per class, grouped under its first
// parent and prefixed with that parent's four-letter stem ("Comp.Contrast"),
// then a Total row.
inline std::string format_class_stats(const ClassCounts& counts, const LabelHierarchy& h, std::size_t level) {
  if (level >= h.num_levels()) throw LevelError("level " + std::to_string(level + 1) + " does not exist");
  struct Row {
    std::string name;
    std::size_t group;
    std::size_t n[3];
  };
  std::vector<Row> rows;
  for (std::size_t j = 0; j < h.level_size(level); ++j) {
    Row r{h.name(level, j), 0, {}};
    if (level > 0) {
      r.group = h.parents(level, j).front();
      r.name = h.name(level - 1, r.group).substr(0, 4) + "." + r.name;
    }
    for (std::size_t s = 0; s < 3; ++s) r.n[s] = counts.at(s).at(level).at(j);
    rows.push_back(std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.group < b.group; });

  const std::string header = "Level " + std::to_string(level + 1);
  std::size_t width = std::max<std::size_t>(header.size(), 5);
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::size_t total[3] = {0, 0, 0};
  std::ostringstream out;
  auto rule = [&] { out << std::string(width + 3 * 8, '-') << '\n'; };
  out << std::left << std::setw(static_cast<int>(width)) << header << std::right << std::setw(8) << "Train"
      << std::setw(8) << "Dev" << std::setw(8) << "Test" << '\n';
  rule();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && rows[i].group != rows[i - 1].group) rule();
    out << std::left << std::setw(static_cast<int>(width)) << rows[i].name << std::right;
    for (std::size_t s = 0; s < 3; ++s) {
      out << std::setw(8) << rows[i].n[s];
      total[s] += rows[i].n[s];
    }
    out << '\n';
  }
  rule();
  out << std::left << std::setw(static_cast<int>(width)) << "Total" << std::right;
  for (std::size_t s = 0; s < 3; ++s) out << std::setw(8) << total[s];
  out << '\n';
  return out.str();
}

}  // namespace pemi

#endif  // PEMI_DATA_HPP
