#ifndef PEMI_METRICS_HPP
#define PEMI_METRICS_HPP

// Classification metrics for one level. Macro-F1 averages over every class
// defined at the level, observed or not; a class with precision + recall = 0
// scores F1 = 0.

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "pemi/errors.hpp"

namespace pemi {

struct LevelMetrics {
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
  std::vector<double> precision, recall, f1;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::size_t support = 0;
};

inline LevelMetrics compute_metrics(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& pred,
                                    std::size_t num_classes) {
  if (gold.size() != pred.size()) {
    throw DimensionError("gold has " + std::to_string(gold.size()) + " labels, predictions " +
                         std::to_string(pred.size()));
  }
  if (num_classes == 0) throw DimensionError("metrics need at least one class");
  LevelMetrics m;
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  m.support = gold.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= num_classes || pred[i] >= num_classes) {
      throw DimensionError("label index out of range at position " + std::to_string(i));
    }
    ++m.confusion[gold[i]][pred[i]];
    correct += gold[i] == pred[i] ? 1 : 0;
  }
  m.accuracy = gold.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(gold.size());
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      predicted += m.confusion[k][c];
      actual += m.confusion[c][k];
    }
    const double tp = static_cast<double>(m.confusion[c][c]);
    const double p = predicted == 0 ? 0.0 : tp / static_cast<double>(predicted);
    const double r = actual == 0 ? 0.0 : tp / static_cast<double>(actual);
    m.precision.push_back(p);
    m.recall.push_back(r);
    m.f1.push_back(p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r));
    m.macro_f1 += m.f1.back();
  }
  m.macro_f1 /= static_cast<double>(num_classes);
  return m;
}

inline nlohmann::json metrics_to_json(const LevelMetrics& m, const std::vector<std::string>& names) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < m.f1.size(); ++c) {
    per_class.push_back({{"label", c < names.size() ? names[c] : std::to_string(c)},
                         {"precision", m.precision[c]},
                         {"recall", m.recall[c]},
                         {"f1", m.f1[c]}});
  }
  return {{"macro_f1", m.macro_f1},
          {"accuracy", m.accuracy},
          {"support", m.support},
          {"per_class", per_class},
          {"confusion", m.confusion}};
}

}  // namespace pemi

#endif  // PEMI_METRICS_HPP
