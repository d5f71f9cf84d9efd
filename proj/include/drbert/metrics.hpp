#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "drbert/error.hpp"
#include "json.hpp"

namespace drbert {

using Confusion = std::array<std::array<std::size_t, 3>, 3>;  // [gold][predicted]

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<double, 3> precision{};
  std::array<double, 3> recall{};
  std::array<double, 3> f1{};
  Confusion confusion{};
  std::size_t total = 0;
};

/// Macro-F1 is the unweighted mean of per-class F1; any 0/0 is taken as 0.
inline Metrics metrics_from_confusion(const Confusion& c) {
  Metrics m;
  m.confusion = c;
  std::size_t correct = 0;
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t p = 0; p < 3; ++p) {
      m.total += c[g][p];
      if (g == p) correct += c[g][p];
    }
  if (m.total == 0) throw ValidationError("metrics: empty evaluation set");
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.total);
  for (std::size_t k = 0; k < 3; ++k) {
    std::size_t tp = c[k][k], predicted = 0, support = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      predicted += c[j][k];
      support += c[k][j];
    }
    m.precision[k] = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    m.recall[k] = support ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
    double denom = m.precision[k] + m.recall[k];
    m.f1[k] = denom > 0.0 ? 2.0 * m.precision[k] * m.recall[k] / denom : 0.0;
  }
  m.macro_f1 = (m.f1[0] + m.f1[1] + m.f1[2]) / 3.0;
  return m;
}

inline Metrics compute_metrics(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& predicted) {
  if (gold.size() != predicted.size()) throw ValidationError("metrics: gold and predicted lengths differ");
  Confusion c{};
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= 3 || predicted[i] >= 3) throw ValidationError("metrics: label outside the 3-class space");
    ++c[gold[i]][predicted[i]];
  }
  return metrics_from_confusion(c);
}

inline nlohmann::json to_json(const Metrics& m) {
  return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1},             {"confusion", m.confusion}, {"total", m.total},
          {"labels", {"negative", "neutral", "positive"}}};
}

}  // namespace drbert
