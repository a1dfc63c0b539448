#include "opspam/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>

#include "opspam/error.hpp"

namespace opspam {

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw DimensionError("confusion: " + std::to_string(y_true.size()) + " labels vs " +
                         std::to_string(y_pred.size()) + " predictions");
  }
  if (y_true.empty()) throw UsageError("confusion: no samples");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i];
    const int p = y_pred[i];
    if ((t != 0 && t != 1) || (p != 0 && p != 1)) {
      throw UsageError("confusion: labels must be 0 or 1 (sample " + std::to_string(i) + ")");
    }
    if (t == 1) {
      ++(p == 1 ? cm.tp : cm.fn);
    } else {
      ++(p == 1 ? cm.fp : cm.tn);
    }
  }
  return cm;
}

Scores scores(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw UsageError("scores: empty confusion matrix");
  const auto ratio = [](std::size_t num, std::size_t den, bool& degenerate) {
    if (den == 0) {
      degenerate = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  Scores s;
  s.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  s.precision = ratio(cm.tp, cm.tp + cm.fp, s.degenerate);
  s.recall = ratio(cm.tp, cm.tp + cm.fn, s.degenerate);
  if (s.precision + s.recall == 0.0) {
    s.degenerate = true;
    s.f1 = 0.0;
  } else {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

double roc_auc(std::span<const int> y_true, std::span<const double> scores) {
  if (y_true.size() != scores.size()) throw DimensionError("roc_auc: length mismatch");
  const auto n = y_true.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks (1-based) over tied groups, then U = R_pos - n_pos(n_pos+1)/2.
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (y_true[order[k]] == 1) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    }
    i = j + 1;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UsageError("roc_auc: both classes must be present");
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

EvalReport evaluate(std::span<const int> y_true, std::span<const int> y_pred,
                    std::span<const double> decision_scores, std::uint64_t split_seed,
                    std::string model, std::string features) {
  EvalReport r;
  r.confusion = confusion(y_true, y_pred);
  const auto s = scores(r.confusion);
  r.accuracy = s.accuracy;
  r.precision = s.precision;
  r.recall = s.recall;
  r.f1 = s.f1;
  r.degenerate = s.degenerate;
  r.auc = roc_auc(y_true, decision_scores);
  r.split_seed = split_seed;
  r.model = std::move(model);
  r.features = std::move(features);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  return {{"model", model},
          {"features", features},
          {"split_seed", split_seed},
          {"confusion", {{"tp", confusion.tp}, {"fp", confusion.fp},
                         {"fn", confusion.fn}, {"tn", confusion.tn}}},
          {"accuracy", accuracy},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"auc", auc},
          {"degenerate", degenerate}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.model = j.at("model").get<std::string>();
  r.features = j.at("features").get<std::string>();
  r.split_seed = j.at("split_seed").get<std::uint64_t>();
  const auto& c = j.at("confusion");
  r.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                 c.at("fn").get<std::size_t>(), c.at("tn").get<std::size_t>()};
  r.accuracy = j.at("accuracy").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.auc = j.at("auc").get<double>();
  r.degenerate = j.at("degenerate").get<bool>();
  return r;
}

void print_reports(std::ostream& out, const std::vector<EvalReport>& reports) {
  std::size_t width = 5;
  for (const auto& r : reports) width = std::max(width, r.model.size() + r.features.size() + 3);
  out << std::left << std::setw(static_cast<int>(width)) << "Model" << std::right
      << std::setw(10) << "Accuracy" << std::setw(11) << "Precision" << std::setw(9) << "Recall"
      << std::setw(9) << "F1" << std::setw(9) << "AUC" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : reports) {
    out << std::left << std::setw(static_cast<int>(width)) << (r.model + " + " + r.features)
        << std::right << std::setw(10) << r.accuracy << std::setw(11) << r.precision
        << std::setw(9) << r.recall << std::setw(9) << r.f1 << std::setw(9) << r.auc << '\n';
  }
  out << std::defaultfloat;
}

}  // namespace opspam
