#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "opspam/error.hpp"
#include "opspam/neural.hpp"

namespace opspam {
namespace {

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const ParamSet& params)
      : cfg_(cfg), m_(zeros_like(params)), v_(zeros_like(params)) {}

  void step(ParamSet& params, const ParamSet& grads) {
    ++t_;
    const double lr = cfg_.learning_rate;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      const auto& g = grads.at(name);
      if (cfg_.optimizer == OptimizerKind::Sgd) {
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
        continue;
      }
      auto& m = m_.at(name);
      auto& v = v_.at(name);
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.epsilon);
      }
    }
  }

 private:
  TrainConfig cfg_;
  ParamSet m_;
  ParamSet v_;
  std::uint64_t t_ = 0;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate_set(const NeuralModel& model, const EncodedBatch& set, std::size_t chunk) {
  const auto probs = predict_proba(model, set, chunk);
  Evaluation ev;
  ev.loss = bce_loss(probs, set.labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    correct += ((probs[i] > 0.5 ? 1 : 0) == set.labels[i]) ? 1 : 0;
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(probs.size());
  return ev;
}

// Independent streams for initialization, shuffling and dropout.
constexpr std::uint64_t kShuffleStream = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kDropoutStream = 0xD1B54A32D192ED03ULL;

}  // namespace

std::vector<double> predict_proba(const NeuralModel& model, const EncodedBatch& batch,
                                  std::size_t chunk) {
  std::vector<double> out;
  out.reserve(batch.size());
  std::vector<std::size_t> order;
  for (std::size_t start = 0; start < batch.size(); start += chunk) {
    const auto stop = std::min(batch.size(), start + chunk);
    order.resize(stop - start);
    std::iota(order.begin(), order.end(), start);
    const auto part = forward(model, batch.select(order), false);
    out.insert(out.end(), part.probabilities.begin(), part.probabilities.end());
  }
  return out;
}

TrainResult train(const ModelSpec& spec, std::shared_ptr<const EmbeddingTable> table,
                  const TrainConfig& cfg, const EncodedBatch& train_set,
                  const EncodedBatch* val_set) {
  cfg.validate();
  if (train_set.size() == 0) throw UsageError("training set is empty");
  if (train_set.labels.size() != train_set.size()) throw UsageError("training set is unlabeled");
  if (val_set && val_set->size() == 0) val_set = nullptr;

  TrainResult result{NeuralModel(spec, std::move(table), cfg.seed), {}, 0};
  NeuralModel& model = result.model;
  Optimizer optimizer(cfg, model.params());
  Rng shuffle_rng(cfg.seed ^ kShuffleStream);
  Rng dropout_rng(cfg.seed ^ kDropoutStream);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  ParamSet best_params = model.params();
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto stop = std::min(order.size(), start + cfg.batch_size);
      const auto batch =
          train_set.select(std::span<const std::size_t>(order).subspan(start, stop - start));
      const auto fwd = forward(model, batch, true, &dropout_rng);
      const double loss = bce_loss(fwd.probabilities, batch.labels);
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged in epoch " + std::to_string(epoch) +
                           " (non-finite loss)");
      }
      const auto grads = backward(model, fwd.cache, batch.labels);
      optimizer.step(model.mutable_params(), grads);
    }
    for (const auto& [name, p] : model.params()) {
      if (!p.all_finite()) {
        throw NumericError("training diverged in epoch " + std::to_string(epoch) +
                           " (parameter " + name + " is not finite)");
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const auto tr = evaluate_set(model, train_set, 256);
    rec.train_loss = tr.loss;
    rec.train_acc = tr.accuracy;
    rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    rec.val_acc = std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(rec.train_loss)) {
      throw NumericError("training diverged in epoch " + std::to_string(epoch));
    }
    if (val_set) {
      const auto va = evaluate_set(model, *val_set, 256);
      rec.val_loss = va.loss;
      rec.val_acc = va.accuracy;
    }
    result.history.push_back(rec);

    if (!val_set) {
      result.best_epoch = epoch;
      continue;
    }
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      best_params = model.params();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  if (val_set) model.mutable_params() = best_params;
  return result;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  out << std::setprecision(10);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',';
    if (std::isnan(r.val_loss)) {
      out << ",\n";
    } else {
      out << r.val_loss << ',' << r.val_acc << '\n';
    }
  }
}

double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradient_check(const NeuralModel& reference, const EncodedBatch& batch,
                               double epsilon, const std::function<void(ParamSet&)>& tamper) {
  if (batch.labels.size() != batch.size() || batch.size() == 0) {
    throw UsageError("gradient check needs a labeled, non-empty batch");
  }
  ModelSpec spec = reference.spec();
  spec.dropout = 0.0;
  NeuralModel model(spec, reference.table_ptr(), reference.params());

  const auto fwd = forward(model, batch, true);
  auto analytic = backward(model, fwd.cache, batch.labels);
  if (tamper) tamper(analytic);

  GradCheckReport report;
  for (const auto& [name, grad] : analytic) {
    GradCheckEntry entry;
    entry.param = name;
    const auto n = model.params().at(name).size();
    for (std::size_t k = 0; k < n; ++k) {
      const double original = model.params().at(name)[k];
      model.mutable_params().at(name)[k] = original + epsilon;
      const double up = bce_loss(forward(model, batch, false).probabilities, batch.labels);
      model.mutable_params().at(name)[k] = original - epsilon;
      const double down = bce_loss(forward(model, batch, false).probabilities, batch.labels);
      model.mutable_params().at(name)[k] = original;
      const double numeric = (up - down) / (2.0 * epsilon);
      entry.max_rel_error = std::max(entry.max_rel_error, gradient_relative_error(grad[k], numeric));
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(grad[k] - numeric));
      ++entry.count;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace opspam
