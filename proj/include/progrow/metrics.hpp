#pragma once

#include <iomanip>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace progrow {

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // [true][predicted]

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ClassMetrics, precision, recall, f1, support)

struct AveragedMetrics {
  double precision = 0, recall = 0, f1 = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AveragedMetrics, precision, recall, f1)

struct MetricsReport {
  std::string split;
  double accuracy = 0;
  std::vector<ClassMetrics> per_class;
  AveragedMetrics weighted, macro;
  ConfusionMatrix confusion_matrix;
  std::size_t sample_count = 0;
  std::vector<std::string> warnings;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MetricsReport, split, accuracy, per_class, weighted, macro, confusion_matrix, sample_count,
                                   warnings)

// Precision/recall with an empty denominator are defined as 0 and flagged.
inline MetricsReport metrics_from_confusion(const ConfusionMatrix& cm, std::string split = "") {
  const std::size_t c = cm.size();
  for (const auto& row : cm)
    if (row.size() != c) throw std::invalid_argument("confusion matrix must be square");
  MetricsReport r;
  r.split = std::move(split);
  r.confusion_matrix = cm;
  std::vector<std::size_t> predicted(c, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      r.sample_count += cm[i][j];
      predicted[j] += cm[i][j];
      if (i == j) correct += cm[i][j];
    }
  if (r.sample_count == 0) throw std::invalid_argument("cannot compute metrics over an empty split");
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.sample_count);
  r.per_class.resize(c);
  for (std::size_t k = 0; k < c; ++k) {
    auto& m = r.per_class[k];
    const double tp = static_cast<double>(cm[k][k]);
    for (std::size_t j = 0; j < c; ++j) m.support += cm[k][j];
    if (predicted[k] > 0) {
      m.precision = tp / static_cast<double>(predicted[k]);
    } else {
      r.warnings.push_back("class " + std::to_string(k) + " never predicted; precision set to 0");
    }
    if (m.support > 0) {
      m.recall = tp / static_cast<double>(m.support);
    } else {
      r.warnings.push_back("class " + std::to_string(k) + " has zero support; recall set to 0");
    }
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    const double w = static_cast<double>(m.support) / static_cast<double>(r.sample_count);
    r.weighted.precision += w * m.precision;
    r.weighted.recall += w * m.recall;
    r.weighted.f1 += w * m.f1;
    r.macro.precision += m.precision / static_cast<double>(c);
    r.macro.recall += m.recall / static_cast<double>(c);
    r.macro.f1 += m.f1 / static_cast<double>(c);
  }
  return r;
}

inline ConfusionMatrix confusion_from_predictions(const std::vector<int>& labels, const std::vector<int>& predictions,
                                                  std::size_t num_classes) {
  if (labels.size() != predictions.size()) throw std::invalid_argument("labels and predictions differ in length");
  ConfusionMatrix cm(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto t = static_cast<std::size_t>(labels[i]), p = static_cast<std::size_t>(predictions[i]);
    if (labels[i] < 0 || predictions[i] < 0 || t >= num_classes || p >= num_classes)
      throw std::out_of_range("label or prediction outside [0, num_classes)");
    ++cm[t][p];
  }
  return cm;
}

inline std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names = {}) {
  std::ostringstream os;
  const auto name = [&](std::size_t i) { return i < names.size() ? names[i] : std::to_string(i); };
  os << "true\\pred";
  for (std::size_t j = 0; j < cm.size(); ++j) os << ',' << name(j);
  os << '\n';
  for (std::size_t i = 0; i < cm.size(); ++i) {
    os << name(i);
    for (auto v : cm[i]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

inline std::string metrics_table(const MetricsReport& r, const std::vector<std::string>& names = {}) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "split: " << (r.split.empty() ? "-" : r.split) << "  samples: " << r.sample_count << "  accuracy: " << r.accuracy
     << '\n';
  os << std::left << std::setw(14) << "class" << std::right << std::setw(10) << "precision" << std::setw(10) << "recall"
     << std::setw(10) << "f1" << std::setw(10) << "support" << '\n';
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    os << std::left << std::setw(14) << (k < names.size() ? names[k] : std::to_string(k)) << std::right << std::setw(10)
       << m.precision << std::setw(10) << m.recall << std::setw(10) << m.f1 << std::setw(10) << m.support << '\n';
  }
  os << std::left << std::setw(14) << "weighted avg" << std::right << std::setw(10) << r.weighted.precision << std::setw(10)
     << r.weighted.recall << std::setw(10) << r.weighted.f1 << '\n';
  os << std::left << std::setw(14) << "macro avg" << std::right << std::setw(10) << r.macro.precision << std::setw(10)
     << r.macro.recall << std::setw(10) << r.macro.f1 << '\n';
  return os.str();
}

}  // namespace progrow
