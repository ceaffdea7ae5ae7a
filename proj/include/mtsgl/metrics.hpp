#pragma once

// Confusion matrix, overall accuracy and Cohen's kappa.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "mtsgl/error.hpp"

namespace mtsgl {

/// Rows are ground truth, columns predictions.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;

  explicit ConfusionMatrix(std::size_t c = 0) : classes(c), counts(c * c, 0) {}
  std::size_t operator()(std::size_t truth, std::size_t pred) const {
    return counts[truth * classes + pred];
  }
  std::size_t& operator()(std::size_t truth, std::size_t pred) {
    return counts[truth * classes + pred];
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (auto v : counts) n += v;
    return n;
  }
};

inline ConfusionMatrix confusion(const std::vector<std::size_t>& preds,
                                 const std::vector<std::size_t>& labels, std::size_t classes) {
  detail::require(preds.size() == labels.size(), "confusion", preds.size(), " predictions for ",
                  labels.size(), " labels");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    detail::require(preds[i] < classes && labels[i] < classes, "confusion", "sample ", i,
                    " has class (truth ", labels[i], ", pred ", preds[i], ") outside [0, ",
                    classes, ")");
    ++cm(labels[i], preds[i]);
  }
  return cm;
}

struct MetricsReport {
  double oa = 0;
  double p_e = 0;
  /// Undefined when p_e == 1 (every sample in one class on both axes).
  std::optional<double> kappa;
  /// Recall per ground-truth class; nullopt for classes with no samples.
  std::vector<std::optional<double>> per_class;
};

inline MetricsReport report(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  detail::require(total > 0, "report", "empty confusion matrix");
  const double n = static_cast<double>(total);
  MetricsReport r;
  std::size_t tp = 0;
  double agree = 0;
  for (std::size_t i = 0; i < cm.classes; ++i) {
    std::size_t gt = 0, pr = 0;
    for (std::size_t j = 0; j < cm.classes; ++j) {
      gt += cm(i, j);
      pr += cm(j, i);
    }
    tp += cm(i, i);
    agree += static_cast<double>(gt) * static_cast<double>(pr);
    r.per_class.push_back(gt ? std::optional<double>(double(cm(i, i)) / double(gt))
                             : std::nullopt);
  }
  r.oa = static_cast<double>(tp) / n;
  r.p_e = agree / (n * n);
  if (r.p_e < 1.0) r.kappa = (r.oa - r.p_e) / (1.0 - r.p_e);
  return r;
}

/// Four decimals; "nan" for undefined values.
inline std::string format_metric(std::optional<double> v) {
  if (!v) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

inline std::string metrics_csv_header(std::size_t classes) {
  std::string h = "split,seed,variant,oa,kappa";
  for (std::size_t c = 0; c < classes; ++c) h += ",acc_" + std::to_string(c);
  return h;
}

inline std::string metrics_csv_row(const std::string& split, std::uint64_t seed,
                                   const std::string& variant, const MetricsReport& r) {
  std::string row = split + "," + std::to_string(seed) + "," + variant + "," +
                    format_metric(r.oa) + "," + format_metric(r.kappa);
  for (const auto& a : r.per_class) row += "," + format_metric(a);
  return row;
}

}  // namespace mtsgl
