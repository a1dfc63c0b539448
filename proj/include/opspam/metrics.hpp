#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace opspam {

// Positive class is Deceptive (label 1).
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct Scores {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when a zero denominator forced precision, recall or F1 to 0.
  bool degenerate = false;
};

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred);

Scores scores(const ConfusionMatrix& cm);

// Mann-Whitney U / (n_pos * n_neg), ties counted as one half.
double roc_auc(std::span<const int> y_true, std::span<const double> scores);

struct EvalReport {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  bool degenerate = false;
  std::uint64_t split_seed = 0;
  std::string model;
  std::string features;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

EvalReport evaluate(std::span<const int> y_true, std::span<const int> y_pred,
                    std::span<const double> decision_scores, std::uint64_t split_seed,
                    std::string model, std::string features);

// Aligned text table with one row per report (accuracy, precision, recall,
// F1, AUC columns).
void print_reports(std::ostream& out, const std::vector<EvalReport>& reports);

}  // namespace opspam
