#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tinytrain/error.hpp"
#include "tinytrain/labels.hpp"
#include "tinytrain/model.hpp"

namespace tinytrain {

// Tie-aware ROC AUC via the Mann-Whitney statistic with midranks:
// AUC = (R_pos - P(P+1)/2) / (P*N), where R_pos is the sum of midranks of
// the positives. Equals (wins + 0.5*ties) / (P*N) exactly. Returns nullopt
// when either class is absent.
inline std::optional<double> auc(const std::vector<double>& scores,
                                 const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ValidationError("auc: scores and labels must have equal nonzero length");
  }
  std::size_t n = scores.size();
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(scores[i])) throw ValidationError("auc: non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("auc: label not in {0,1}");
    positives += static_cast<std::size_t>(labels[i]);
  }
  std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based ranks i+1 .. j share the midrank.
    double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) rank_sum_pos += midrank;
    }
    i = j;
  }
  double p = static_cast<double>(positives), q = static_cast<double>(negatives);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q);
}

struct AucResult {
  std::optional<double> value;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

struct EvalReport {
  std::array<AucResult, kNumClasses> per_class;
  std::optional<double> macro;  // mean over classes with a defined AUC
};

inline EvalReport compute_multilabel_auc(const std::vector<std::array<double, kNumClasses>>& scores,
                                         const std::vector<LabelVector>& labels) {
  if (scores.size() != labels.size()) {
    throw ValidationError("evaluate: score/label count mismatch");
  }
  EvalReport report;
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<double> s(scores.size());
    std::vector<int> y(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i][c];
      y[i] = labels[i].bits[c];
    }
    AucResult r;
    for (int v : y) r.positives += static_cast<std::size_t>(v);
    r.negatives = y.size() - r.positives;
    r.value = scores.empty() ? std::optional<double>{} : auc(s, y);
    report.per_class[c] = r;
    if (r.value) {
      sum += *r.value;
      ++defined;
    }
  }
  if (defined > 0) report.macro = sum / static_cast<double>(defined);
  return report;
}

// One-vs-rest AUC of the model's sigmoid scores over pre-assembled eval
// batches (images [B,1,H,W] paired with k-hot targets [B,15]).
inline EvalReport evaluate(Model& model,
                           const std::vector<std::pair<Tensor, Tensor>>& batches) {
  std::vector<std::array<double, kNumClasses>> scores;
  std::vector<LabelVector> labels;
  for (const auto& [images, targets] : batches) {
    Tensor probs = model.predict_probs(images);
    std::size_t b = probs.dim(0);
    for (std::size_t i = 0; i < b; ++i) {
      std::array<double, kNumClasses> row;
      LabelVector lv;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        row[c] = probs.data[i * kNumClasses + c];
        lv.bits[c] = targets.data[i * kNumClasses + c] != 0.0 ? 1 : 0;
      }
      scores.push_back(row);
      labels.push_back(lv);
    }
  }
  return compute_multilabel_auc(scores, labels);
}

// Deterministic flat JSON rendering of an evaluation report (fixed key
// order, shortest-faithful doubles), so identical results serialize to
// identical bytes.
inline std::string metrics_json(const EvalReport& report) {
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string out = "{\n  \"classes\": {\n";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& r = report.per_class[c];
    out += std::string("    \"") + kClassNames[c] + "\": " + (r.value ? num(*r.value) : "null");
    out += c + 1 < kNumClasses ? ",\n" : "\n";
  }
  out += "  },\n";
  out += "  \"macro\": " + (report.macro ? num(*report.macro) : std::string("null")) + ",\n";
  out += "  \"undefined\": [";
  bool first = true;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!report.per_class[c].value) {
      if (!first) out += ", ";
      out += std::string("\"") + kClassNames[c] + "\"";
      first = false;
    }
  }
  out += "]\n}\n";
  return out;
}

inline std::string format_auc(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

// 15 rows in report order, one column per variant, 4 decimal places,
// "-" for undefined entries.
inline std::string format_table_csv(const std::vector<std::string>& variant_names,
                                    const std::vector<EvalReport>& reports) {
  if (reports.empty() || reports.size() != variant_names.size()) {
    throw ValidationError("format_table: need one name per report, at least one report");
  }
  std::string out = "pathology";
  for (const auto& name : variant_names) out += "," + name;
  out += "\n";
  for (std::size_t row = 0; row < kNumClasses; ++row) {
    std::size_t c = kReportOrder[row];
    out += kClassNames[c];
    for (const auto& rep : reports) out += "," + format_auc(rep.per_class[c].value);
    out += "\n";
  }
  return out;
}

inline std::string format_table_text(const std::vector<std::string>& variant_names,
                                     const std::vector<EvalReport>& reports) {
  if (reports.empty() || reports.size() != variant_names.size()) {
    throw ValidationError("format_table: need one name per report, at least one report");
  }
  std::size_t name_w = std::string("Pathology").size();
  for (std::size_t row = 0; row < kNumClasses; ++row) {
    name_w = std::max(name_w, std::string(kClassNames[kReportOrder[row]]).size());
  }
  std::vector<std::size_t> col_w;
  for (const auto& name : variant_names) col_w.push_back(std::max<std::size_t>(name.size(), 6));

  auto pad = [](const std::string& s, std::size_t w) {
    return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
  };
  std::string out = pad("Pathology", name_w);
  for (std::size_t i = 0; i < variant_names.size(); ++i) out += "  " + pad(variant_names[i], col_w[i]);
  out += "\n";
  for (std::size_t row = 0; row < kNumClasses; ++row) {
    std::size_t c = kReportOrder[row];
    out += pad(kClassNames[c], name_w);
    for (std::size_t i = 0; i < reports.size(); ++i) {
      out += "  " + pad(format_auc(reports[i].per_class[c].value), col_w[i]);
    }
    out += "\n";
  }
  return out;
}

}  // namespace tinytrain
