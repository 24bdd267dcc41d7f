#ifndef PEMI_REPORT_HPP
#define PEMI_REPORT_HPP

// Human-facing views of a trained verbalizer: per-parent weight tables and
// a 2-D PCA projection of label embeddings (CSV + SVG).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "pemi/errors.hpp"
#include "pemi/hierarchy.hpp"
#include "pemi/hlr.hpp"

namespace pemi {

// ---------------------------------------------------------------------------
// Weight inspection

struct ChildShare {
  std::string child;
  double weight = 0.0;              // f(W) entry
  std::int64_t hundredths = 0;      // displayed percent × 100
};

struct ParentRow {
  std::string parent;
  std::vector<ChildShare> children;
};

// Rounds a row of weights to hundredths of a percent so the displayed
// values sum to exactly 100.00 (largest remainder).
inline std::vector<std::int64_t> round_percentages(const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  std::vector<std::int64_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = total > 0.0 ? weights[i] / total * 10000.0 : 0.0;
    out[i] = static_cast<std::int64_t>(std::floor(exact));
    assigned += out[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < 10000 && k < remainders.size(); ++k, ++assigned) ++out[remainders[k].second];
  return out;
}

inline std::vector<ParentRow> weight_table(const VerbalizerState<float>& state, const LabelHierarchy& h,
                                           std::size_t level) {
  if (level + 1 >= h.num_levels()) throw LevelError("level " + std::to_string(level + 1) + " has no children");
  const TensorF w = normalized_weights(h, state.units.at(level), level, state.normalization);
  std::vector<ParentRow> rows;
  for (std::size_t p = 0; p < h.level_size(level); ++p) {
    ParentRow row{h.name(level, p), {}};
    std::vector<double> weights;
    for (std::size_t c : h.children(level, p)) {
      row.children.push_back({h.name(level + 1, c), w.at(p, c), 0});
      weights.push_back(w.at(p, c));
    }
    const auto pct = round_percentages(weights);
    for (std::size_t i = 0; i < pct.size(); ++i) row.children[i].hundredths = pct[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_percent(std::int64_t hundredths) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld.%02lld", static_cast<long long>(hundredths / 100),
                static_cast<long long>(hundredths % 100));
  return buf;
}

// Label | Sub Label (Weight (%))
inline std::string format_weight_table(const std::vector<ParentRow>& rows, std::size_t level) {
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.parent.size());
  std::ostringstream out;
  out << "Weights between level " << level + 1 << " and level " << level + 2 << "\n";
  out << std::string("Label") + std::string(width - 5, ' ') << " | Sub Label (Weight (%))\n";
  out << std::string(width, '-') << "-+-" << std::string(40, '-') << "\n";
  for (const auto& r : rows) {
    out << r.parent << std::string(width - r.parent.size(), ' ') << " | ";
    for (std::size_t i = 0; i < r.children.size(); ++i) {
      out << (i ? ", " : "") << r.children[i].child << " (" << format_percent(r.children[i].hundredths) << ")";
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// PCA

struct Projection {
  std::vector<std::array<double, 2>> points;
  std::array<std::vector<double>, 2> components;
  std::array<double, 2> variances{};
};

// Top-2 principal components by power iteration with deflation.
inline Projection pca_2d(const std::vector<std::vector<double>>& points, std::size_t max_iter = 200,
                         double tol = 1e-9) {
  Projection out;
  if (points.empty()) return out;
  const std::size_t n = points.size(), d = points.front().size();
  std::vector<double> mean(d, 0.0);
  for (const auto& p : points) {
    if (p.size() != d) throw DimensionError("pca_2d: ragged input");
    for (std::size_t c = 0; c < d; ++c) mean[c] += p[c] / static_cast<double>(n);
  }
  std::vector<double> cov(d * d, 0.0);
  for (const auto& p : points)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += (p[a] - mean[a]) * (p[b] - mean[b]);

  for (std::size_t k = 0; k < 2; ++k) {
    std::vector<double> v(d);
    // Fixed, non-degenerate start.
    for (std::size_t c = 0; c < d; ++c) v[c] = 1.0 + 0.1 * static_cast<double>(c % 7) + (c == k ? 1.0 : 0.0);
    double lambda = 0.0;
    for (std::size_t it = 0; it < max_iter; ++it) {
      std::vector<double> next(d, 0.0);
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) next[a] += cov[a * d + b] * v[b];
      double norm = 0.0;
      for (double x : next) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-300) {
        lambda = 0.0;
        break;
      }
      double delta = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        next[c] /= norm;
        delta += (next[c] - v[c]) * (next[c] - v[c]);
      }
      v = std::move(next);
      lambda = norm;
      if (std::sqrt(delta) < tol) break;
    }
    // Sign convention: largest-magnitude coordinate positive.
    std::size_t big = 0;
    for (std::size_t c = 1; c < d; ++c)
      if (std::abs(v[c]) > std::abs(v[big])) big = c;
    if (v[big] < 0)
      for (double& x : v) x = -x;
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
    out.components[k] = v;
    out.variances[k] = lambda / static_cast<double>(n);
  }
  for (const auto& p : points) {
    std::array<double, 2> xy{0.0, 0.0};
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t c = 0; c < d; ++c) xy[k] += (p[c] - mean[c]) * out.components[k][c];
    out.points.push_back(xy);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding export

struct EmbeddingRow {
  std::size_t level = 0;  // 0-based
  std::string label;
  std::vector<double> vector;
};

// Rows for levels [first, last], 0-based inclusive, from refined matrices.
inline std::vector<EmbeddingRow> embedding_rows(const std::vector<TensorF>& matrices, const LabelHierarchy& h,
                                                std::size_t first, std::size_t last) {
  if (first > last || last >= h.num_levels()) {
    throw LevelError("level range " + std::to_string(first + 1) + ".." + std::to_string(last + 1) +
                     " is outside 1.." + std::to_string(h.num_levels()));
  }
  std::vector<EmbeddingRow> rows;
  for (std::size_t z = first; z <= last; ++z) {
    const TensorF& m = matrices.at(z);
    for (std::size_t r = 0; r < h.level_size(z); ++r) {
      EmbeddingRow row{z, h.name(z, r), {}};
      for (std::size_t c = 0; c < m.cols(); ++c) row.vector.push_back(m.at(r, c));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

// level is written 1-based.
inline std::string embeddings_csv(const std::vector<EmbeddingRow>& rows) {
  std::ostringstream out;
  out << "level,label";
  const std::size_t d = rows.empty() ? 0 : rows.front().vector.size();
  for (std::size_t c = 0; c < d; ++c) out << ",v" << c;
  out << "\n";
  char buf[32];
  for (const auto& r : rows) {
    out << r.level + 1 << "," << csv_field(r.label);
    for (double v : r.vector) {
      std::snprintf(buf, sizeof buf, "%.9g", v);
      out << "," << buf;
    }
    out << "\n";
  }
  return out.str();
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

// Scatter of the projection: the bottom level of the exported range as
// circles, every level above it as squares.
inline std::string embeddings_svg(const std::vector<EmbeddingRow>& rows, const Projection& proj) {
  const double size = 800.0, margin = 60.0;
  double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
  std::size_t deepest = 0;
  for (std::size_t i = 0; i < proj.points.size(); ++i) {
    const auto& p = proj.points[i];
    if (i == 0) {
      lo_x = hi_x = p[0];
      lo_y = hi_y = p[1];
    }
    lo_x = std::min(lo_x, p[0]);
    hi_x = std::max(hi_x, p[0]);
    lo_y = std::min(lo_y, p[1]);
    hi_y = std::max(hi_y, p[1]);
    deepest = std::max(deepest, rows[i].level);
  }
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-12});
  auto sx = [&](double x) { return margin + (x - lo_x) / span * (size - 2 * margin); };
  auto sy = [&](double y) { return size - margin - (y - lo_y) / span * (size - 2 * margin); };
  static const char* palette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  char buf[256];
  for (std::size_t i = 0; i < proj.points.size(); ++i) {
    const double x = sx(proj.points[i][0]), y = sy(proj.points[i][1]);
    const char* color = palette[rows[i].level % 6];
    if (rows[i].level == deepest) {
      std::snprintf(buf, sizeof buf, "<circle class=\"child\" cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"%s\"/>", x, y, color);
    } else {
      std::snprintf(buf, sizeof buf,
                    "<rect class=\"parent\" x=\"%.2f\" y=\"%.2f\" width=\"10\" height=\"10\" fill=\"%s\" "
                    "stroke=\"black\"/>",
                    x - 5, y - 5, color);
    }
    out << buf << "\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"%d\" font-family=\"sans-serif\">", x + 6,
                  y - 6, rows[i].level == deepest ? 9 : 12);
    out << buf << xml_escape(rows[i].label) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace pemi

#endif  // PEMI_REPORT_HPP
