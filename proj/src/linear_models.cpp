#include "opspam/linear_models.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "opspam/error.hpp"
#include "opspam/rng.hpp"

namespace opspam {
namespace {

void check_labels(const SparseMatrix& x, std::span<const int> y) {
  if (x.n_rows() == 0) throw UsageError("cannot fit on zero samples");
  if (x.n_rows() != y.size()) {
    throw DimensionError(std::to_string(x.n_rows()) + " rows but " + std::to_string(y.size()) +
                         " labels");
  }
  bool seen[2] = {false, false};
  for (int label : y) {
    if (label != 0 && label != 1) throw UsageError("labels must be 0 or 1");
    seen[label] = true;
  }
  if (!seen[0] || !seen[1]) throw UsageError("training data must contain both classes");
}

void check_columns(std::size_t expected, const SparseMatrix& x) {
  if (x.n_cols != expected) {
    throw DimensionError("feature matrix has " + std::to_string(x.n_cols) +
                         " columns, model expects " + std::to_string(expected));
  }
}

double softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

}  // namespace

MnbModel mnb_fit(const SparseMatrix& x, std::span<const int> y, double alpha) {
  if (!(alpha > 0.0)) throw UsageError("MNB alpha must be > 0");
  check_labels(x, y);
  const auto v = x.n_cols;
  std::array<std::vector<double>, 2> counts{std::vector<double>(v, 0.0),
                                            std::vector<double>(v, 0.0)};
  std::array<double, 2> n_class{0.0, 0.0};
  for (std::size_t r = 0; r < x.n_rows(); ++r) {
    auto& c = counts[static_cast<std::size_t>(y[r])];
    n_class[static_cast<std::size_t>(y[r])] += 1.0;
    const auto& row = x.rows[r];
    for (std::size_t k = 0; k < row.nnz(); ++k) c[row.indices[k]] += row.values[k];
  }

  MnbModel m;
  m.alpha = alpha;
  const double n = static_cast<double>(x.n_rows());
  for (std::size_t c = 0; c < 2; ++c) {
    m.class_log_prior[c] = std::log(n_class[c] / n);
    const double total = std::accumulate(counts[c].begin(), counts[c].end(), 0.0);
    const double log_den = std::log(total + alpha * static_cast<double>(v));
    m.feature_log_prob[c].resize(v);
    for (std::size_t t = 0; t < v; ++t) {
      m.feature_log_prob[c][t] = std::log(counts[c][t] + alpha) - log_den;
    }
  }
  return m;
}

std::array<double, 2> mnb_log_scores(const MnbModel& model, const SparseVector& row) {
  std::array<double, 2> s = model.class_log_prior;
  for (std::size_t c = 0; c < 2; ++c) s[c] += row.dot(model.feature_log_prob[c]);
  return s;
}

Prediction mnb_predict(const MnbModel& model, const SparseMatrix& x) {
  check_columns(model.n_features(), x);
  Prediction p;
  for (const auto& row : x.rows) {
    const auto s = mnb_log_scores(model, row);
    p.labels.push_back(s[1] > s[0] ? 1 : 0);
    p.scores.push_back(s[1] - s[0]);
  }
  return p;
}

nlohmann::json MnbModel::to_json() const {
  return {{"alpha", alpha},
          {"class_log_prior", class_log_prior},
          {"feature_log_prob", feature_log_prob}};
}

MnbModel MnbModel::from_json(const nlohmann::json& j) {
  MnbModel m;
  m.alpha = j.at("alpha").get<double>();
  m.class_log_prior = j.at("class_log_prior").get<std::array<double, 2>>();
  m.feature_log_prob = j.at("feature_log_prob").get<std::array<std::vector<double>, 2>>();
  if (m.feature_log_prob[0].size() != m.feature_log_prob[1].size()) {
    throw ParseError("MNB feature_log_prob rows differ in length");
  }
  return m;
}

const char* to_string(Loss loss) { return loss == Loss::Logistic ? "logistic" : "hinge"; }

Loss parse_loss(const std::string& name) {
  if (name == "logistic") return Loss::Logistic;
  if (name == "hinge") return Loss::Hinge;
  throw UsageError("unknown loss '" + name + "'");
}

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning rate must be > 0");
  if (decay < 0.0) throw UsageError("learning-rate decay must be >= 0");
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (l2 < 0.0) throw UsageError("l2 must be >= 0");
}

double loss_value(Loss loss, int label, double score) {
  const double margin = (label == 1 ? 1.0 : -1.0) * score;
  return loss == Loss::Logistic ? softplus(-margin) : std::max(0.0, 1.0 - margin);
}

double sgd_objective(const LinearModel& model, const SparseMatrix& x, std::span<const int> y) {
  double total = 0.0;
  for (std::size_t r = 0; r < x.n_rows(); ++r) {
    total += loss_value(model.loss, y[r], x.rows[r].dot(model.weights) + model.bias);
  }
  double sq = 0.0;
  for (double w : model.weights) sq += w * w;
  return total / static_cast<double>(x.n_rows()) + model.l2 * sq;
}

LinearModel sgd_fit(const SparseMatrix& x, std::span<const int> y, Loss loss,
                    const SgdConfig& cfg, std::vector<double>* epoch_objective) {
  cfg.validate();
  check_labels(x, y);

  // w = scale * v keeps the per-step shrinkage O(1).
  std::vector<double> v(x.n_cols, 0.0);
  double scale = 1.0;
  double bias = 0.0;
  const auto materialize = [&] {
    LinearModel m;
    m.weights.resize(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) m.weights[k] = scale * v[k];
    m.bias = bias;
    m.loss = loss;
    m.l2 = cfg.l2;
    return m;
  };

  std::vector<std::size_t> order(x.n_rows());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    for (auto r : order) {
      const auto& row = x.rows[r];
      const double eta = cfg.learning_rate / (1.0 + static_cast<double>(step) * cfg.decay);
      ++step;
      const double z = scale * row.dot(v) + bias;
      if (!std::isfinite(z)) {
        std::ostringstream msg;
        msg << "SGD diverged in epoch " << epoch << " (learning rate " << cfg.learning_rate
            << "); lower the learning rate";
        throw NumericError(msg.str());
      }
      const double target = y[r] == 1 ? 1.0 : -1.0;
      const double margin = target * z;
      double g = 0.0;
      if (loss == Loss::Logistic) {
        // d/dz log(1 + exp(-t z)) = -t * sigmoid(-t z)
        g = -target * (margin > 0 ? std::exp(-margin) / (1.0 + std::exp(-margin))
                                  : 1.0 / (1.0 + std::exp(margin)));
      } else if (margin < 1.0) {
        g = -target;
      }
      if (g != 0.0) {
        const double step_size = eta * g / scale;
        for (std::size_t k = 0; k < row.nnz(); ++k) v[row.indices[k]] -= step_size * row.values[k];
        bias -= eta * g;
      }
      scale /= 1.0 + 2.0 * eta * cfg.l2;
      if (scale < 1e-9) {
        for (double& e : v) e *= scale;
        scale = 1.0;
      }
    }
    if (epoch_objective) {
      const double obj = sgd_objective(materialize(), x, y);
      if (!std::isfinite(obj)) {
        std::ostringstream msg;
        msg << "SGD objective is not finite after epoch " << epoch << " (learning rate "
            << cfg.learning_rate << ")";
        throw NumericError(msg.str());
      }
      epoch_objective->push_back(obj);
    }
  }

  auto model = materialize();
  for (double w : model.weights) {
    if (!std::isfinite(w)) {
      std::ostringstream msg;
      msg << "SGD produced non-finite weights after epoch " << cfg.epochs << " (learning rate "
          << cfg.learning_rate << ")";
      throw NumericError(msg.str());
    }
  }
  return model;
}

Prediction linear_predict(const LinearModel& model, const SparseMatrix& x) {
  check_columns(model.weights.size(), x);
  Prediction p;
  for (const auto& row : x.rows) {
    const double s = row.dot(model.weights) + model.bias;
    p.labels.push_back(s > 0.0 ? 1 : 0);
    p.scores.push_back(s);
  }
  return p;
}

nlohmann::json LinearModel::to_json() const {
  return {{"loss", to_string(loss)}, {"l2", l2}, {"bias", bias}, {"weights", weights}};
}

LinearModel LinearModel::from_json(const nlohmann::json& j) {
  LinearModel m;
  m.loss = parse_loss(j.at("loss").get<std::string>());
  m.l2 = j.at("l2").get<double>();
  m.bias = j.at("bias").get<double>();
  m.weights = j.at("weights").get<std::vector<double>>();
  return m;
}

}  // namespace opspam
