#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "opspam/features.hpp"

namespace opspam {

// Labels plus a real-valued decision score per row (higher = more deceptive).
struct Prediction {
  std::vector<int> labels;
  std::vector<double> scores;
};

struct MnbModel {
  std::array<double, 2> class_log_prior{};
  std::array<std::vector<double>, 2> feature_log_prob;
  double alpha = 1.0;

  std::size_t n_features() const { return feature_log_prob[0].size(); }

  nlohmann::json to_json() const;
  static MnbModel from_json(const nlohmann::json& j);
};

inline constexpr double kDefaultMnbAlpha = 1.0;

// feature_log_prob[c][t] = log((count(t,c) + alpha) / (total(c) + alpha * V)).
MnbModel mnb_fit(const SparseMatrix& x, std::span<const int> y, double alpha = kDefaultMnbAlpha);

// Per-class joint log-likelihood of one row.
std::array<double, 2> mnb_log_scores(const MnbModel& model, const SparseVector& row);

// Score is the log-odds log P(1|x) - log P(0|x); an exact tie predicts 0.
Prediction mnb_predict(const MnbModel& model, const SparseMatrix& x);

enum class Loss { Logistic, Hinge };

const char* to_string(Loss loss);
Loss parse_loss(const std::string& name);

struct SgdConfig {
  double learning_rate = 0.1;
  // Step t uses learning_rate / (1 + t * decay).
  double decay = 1e-3;
  int epochs = 50;
  double l2 = 1e-4;
  std::uint64_t seed = 42;
  bool shuffle = true;

  void validate() const;
};

// Hinge loss makes this the primal linear SVM.
struct LinearModel {
  std::vector<double> weights;
  double bias = 0.0;
  Loss loss = Loss::Logistic;
  double l2 = 0.0;

  nlohmann::json to_json() const;
  static LinearModel from_json(const nlohmann::json& j);
};

double loss_value(Loss loss, int label, double score);

// (1/N) sum_i loss(y_i, w.x_i + b) + l2 * ||w||^2
double sgd_objective(const LinearModel& model, const SparseMatrix& x, std::span<const int> y);

// Per-sample SGD on sgd_objective. Each step takes a gradient step on the
// sample loss and then applies the L2 term implicitly,
// w <- (w - eta * g * x) / (1 + 2 * eta * l2), which stays stable for any l2.
// The bias is not regularized. When epoch_objective is given, the full-batch
// objective after every epoch is appended to it.
LinearModel sgd_fit(const SparseMatrix& x, std::span<const int> y, Loss loss,
                    const SgdConfig& cfg, std::vector<double>* epoch_objective = nullptr);

// label = 1 iff w.x + b > 0; score = w.x + b.
Prediction linear_predict(const LinearModel& model, const SparseMatrix& x);

}  // namespace opspam
