#ifndef PEMI_HIERARCHY_HPP
#define PEMI_HIERARCHY_HPP

// Leveled label graph. Level indices are 0-based in the API; the JSON
// file uses 1-based parent levels:
//
//   {"levels": [["Comparison", ...], [...], ...],
//    "edges":  [[1, "Comparison", "Contrast"], ...]}
//
// Edges join adjacent levels only and may be many-to-many.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pemi/errors.hpp"

namespace pemi {

struct Edge {
  std::size_t level = 0;   // parent level
  std::size_t parent = 0;  // index at `level`
  std::size_t child = 0;   // index at `level + 1`

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

class LabelHierarchy {
 public:
  LabelHierarchy() = default;

  // Validates and takes ownership. Edges are stored sorted by
  // (level, parent, child); weight units follow that order.
  LabelHierarchy(std::vector<std::vector<std::string>> levels, std::vector<Edge> edges)
      : levels_(std::move(levels)) {
    if (levels_.empty()) throw ValidationError("hierarchy has no levels");
    index_.resize(levels_.size());
    for (std::size_t z = 0; z < levels_.size(); ++z) {
      if (levels_[z].empty()) throw ValidationError("level " + std::to_string(z + 1) + " is empty");
      for (std::size_t j = 0; j < levels_[z].size(); ++j) {
        if (!index_[z].emplace(levels_[z][j], j).second) {
          throw ValidationError("duplicate label '" + levels_[z][j] + "' at level " + std::to_string(z + 1));
        }
      }
    }
    std::sort(edges.begin(), edges.end());
    edges_.resize(levels_.size() - 1);
    children_.resize(levels_.size());
    parents_.resize(levels_.size());
    for (std::size_t z = 0; z < levels_.size(); ++z) {
      children_[z].resize(levels_[z].size());
      parents_[z].resize(levels_[z].size());
    }
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const Edge& e = edges[k];
      if (e.level + 1 >= levels_.size()) {
        throw ValidationError("edge leaves level " + std::to_string(e.level + 1) + ", which has no level below it");
      }
      if (e.parent >= levels_[e.level].size() || e.child >= levels_[e.level + 1].size()) {
        throw ValidationError("edge index out of range at level " + std::to_string(e.level + 1));
      }
      if (k > 0 && edges[k - 1] == e) {
        throw ValidationError("duplicate edge " + levels_[e.level][e.parent] + " -> " +
                              levels_[e.level + 1][e.child]);
      }
      edges_[e.level].push_back(e);
      children_[e.level][e.parent].push_back(e.child);
      parents_[e.level + 1][e.child].push_back(e.parent);
    }
    for (std::size_t z = 0; z < levels_.size(); ++z) {
      for (std::size_t j = 0; j < levels_[z].size(); ++j) {
        if (z + 1 < levels_.size() && children_[z][j].empty()) {
          throw ValidationError("label '" + levels_[z][j] + "' at level " + std::to_string(z + 1) +
                                " has no children");
        }
        if (z > 0 && parents_[z][j].empty()) {
          throw ValidationError("label '" + levels_[z][j] + "' at level " + std::to_string(z + 1) +
                                " has no parent");
        }
      }
    }
  }

  std::size_t num_levels() const noexcept { return levels_.size(); }
  std::size_t level_size(std::size_t level) const { return levels_.at(level).size(); }
  std::size_t bottom_level() const noexcept { return levels_.size() - 1; }
  const std::vector<std::string>& labels(std::size_t level) const { return levels_.at(level); }
  const std::string& name(std::size_t level, std::size_t index) const { return levels_.at(level).at(index); }
  const std::vector<std::vector<std::string>>& levels() const noexcept { return levels_; }

  std::optional<std::size_t> find(std::size_t level, const std::string& name) const {
    const auto& idx = index_.at(level);
    auto it = idx.find(name);
    if (it == idx.end()) return std::nullopt;
    return it->second;
  }

  // Support set of label `index` at `level`: its children at level + 1.
  const std::vector<std::size_t>& children(std::size_t level, std::size_t index) const {
    if (level + 1 >= levels_.size()) {
      throw LevelError("level " + std::to_string(level + 1) + " is the bottom level and has no children");
    }
    return children_[level].at(index);
  }

  const std::vector<std::size_t>& parents(std::size_t level, std::size_t index) const {
    if (level == 0 || level >= levels_.size()) {
      throw LevelError("level " + std::to_string(level + 1) + " has no parents");
    }
    return parents_[level].at(index);
  }

  // Edges leaving `level`, sorted by (parent, child).
  const std::vector<Edge>& edges(std::size_t level) const {
    if (level + 1 >= levels_.size()) {
      throw LevelError("no edges leave level " + std::to_string(level + 1));
    }
    return edges_[level];
  }

  std::size_t edge_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : edges_) n += e.size();
    return n;
  }

  bool is_edge(std::size_t level, std::size_t parent, std::size_t child) const {
    const auto& c = children(level, parent);
    return std::find(c.begin(), c.end(), child) != c.end();
  }

  friend bool operator==(const LabelHierarchy& a, const LabelHierarchy& b) {
    return a.levels_ == b.levels_ && a.edges_ == b.edges_;
  }

 private:
  std::vector<std::vector<std::string>> levels_;
  std::vector<std::unordered_map<std::string, std::size_t>> index_;
  std::vector<std::vector<Edge>> edges_;
  std::vector<std::vector<std::vector<std::size_t>>> children_;
  std::vector<std::vector<std::vector<std::size_t>>> parents_;
};

inline LabelHierarchy hierarchy_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("levels") || !doc.contains("edges")) {
    throw ValidationError("hierarchy needs \"levels\" and \"edges\"");
  }
  std::vector<std::vector<std::string>> levels;
  try {
    levels = doc.at("levels").get<std::vector<std::vector<std::string>>>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("\"levels\" must be a list of lists of label names");
  }
  std::vector<std::unordered_map<std::string, std::size_t>> lookup(levels.size());
  for (std::size_t z = 0; z < levels.size(); ++z)
    for (std::size_t j = 0; j < levels[z].size(); ++j) lookup[z].emplace(levels[z][j], j);

  std::vector<Edge> edges;
  if (!doc.at("edges").is_array()) throw ValidationError("\"edges\" must be a list");
  for (const auto& item : doc.at("edges")) {
    if (!item.is_array() || item.size() != 3 || !item[0].is_number_integer() || !item[1].is_string() ||
        !item[2].is_string()) {
      throw ValidationError("edge must be [level, \"parent\", \"child\"]: " + item.dump());
    }
    const auto z = item[0].get<long long>();
    const auto parent = item[1].get<std::string>();
    const auto child = item[2].get<std::string>();
    if (z < 1 || static_cast<std::size_t>(z) >= levels.size()) {
      throw ValidationError("edge " + parent + " -> " + child + " crosses from level " + std::to_string(z) +
                            ", which has no level below it");
    }
    const auto level = static_cast<std::size_t>(z - 1);
    auto p = lookup[level].find(parent);
    if (p == lookup[level].end()) {
      throw ValidationError("edge parent '" + parent + "' is not a level-" + std::to_string(z) + " label");
    }
    auto c = lookup[level + 1].find(child);
    if (c == lookup[level + 1].end()) {
      throw ValidationError("edge child '" + child + "' is not a level-" + std::to_string(z + 1) + " label");
    }
    edges.push_back(Edge{level, p->second, c->second});
  }
  return LabelHierarchy(std::move(levels), std::move(edges));
}

inline nlohmann::json hierarchy_to_json(const LabelHierarchy& h) {
  nlohmann::json doc;
  doc["levels"] = h.levels();
  doc["edges"] = nlohmann::json::array();
  for (std::size_t z = 0; z + 1 < h.num_levels(); ++z) {
    for (const Edge& e : h.edges(z)) {
      doc["edges"].push_back({z + 1, h.name(z, e.parent), h.name(z + 1, e.child)});
    }
  }
  return doc;
}

inline LabelHierarchy load_hierarchy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open hierarchy file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("hierarchy file " + path + " is not valid JSON: " + e.what());
  }
  return hierarchy_from_json(doc);
}

inline void save_hierarchy(const LabelHierarchy& h, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write hierarchy to " + path);
  out << hierarchy_to_json(h).dump(2) << '\n';
}

}  // namespace pemi

#endif  // PEMI_HIERARCHY_HPP
