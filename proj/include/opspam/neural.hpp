#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "opspam/embeddings.hpp"
#include "opspam/rng.hpp"

namespace opspam {

// Shape-tagged dense array, row-major.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(double v);
  bool all_finite() const;

  nlohmann::json to_json() const;
  static Tensor from_json(const nlohmann::json& j);

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Named parameters (or their gradients); iteration order is the name order.
using ParamSet = std::map<std::string, Tensor>;

ParamSet zeros_like(const ParamSet& params);

enum class Architecture { Cnn, Lstm, BiLstm, RecurrentCnn, BiLstmAttention };

// "cnn", "lstm", "bilstm", "rcnn", "bilstm-attn"
const char* to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

struct ModelSpec {
  Architecture architecture = Architecture::BiLstmAttention;
  std::size_t embedding_dim = 0;
  std::size_t hidden_dim = 64;
  std::vector<std::size_t> filter_widths = {3, 4, 5};
  std::size_t filters = 32;
  double dropout = 0.5;
  std::size_t max_len = kDefaultMaxLen;
  // RecurrentCnn only: width of the external document vector and of its
  // learned projection.
  std::size_t doc_input_dim = 0;
  std::size_t doc_feature_dim = 128;
  bool trainable_embeddings = false;

  bool uses_cnn() const;
  bool uses_lstm() const;
  bool bidirectional() const;
  // Width of the vector fed to the output layer.
  std::size_t feature_dim() const;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
  bool operator==(const ModelSpec&) const = default;
};

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  int epochs = 20;
  std::uint64_t seed = 42;
  // Stop after this many epochs without a validation-loss improvement;
  // 0 disables early stopping.
  int patience = 3;

  void validate() const;
};

class NeuralModel {
 public:
  // Seeded initialization: uniform in +-1/sqrt(fan_in) for every weight.
  NeuralModel(ModelSpec spec, std::shared_ptr<const EmbeddingTable> table,
              std::uint64_t init_seed);
  NeuralModel(ModelSpec spec, std::shared_ptr<const EmbeddingTable> table, ParamSet params);

  const ModelSpec& spec() const { return spec_; }
  const ParamSet& params() const { return params_; }
  // Bumps the generation counter; caches from earlier forwards become stale.
  ParamSet& mutable_params();
  const EmbeddingTable& table() const { return *table_; }
  std::shared_ptr<const EmbeddingTable> table_ptr() const { return table_; }
  std::uint64_t generation() const { return generation_; }

  // Embedding row used for index `idx`: the trainable copy when enabled.
  const double* embedding_row(std::size_t idx) const;

 private:
  void check_params() const;

  ModelSpec spec_;
  std::shared_ptr<const EmbeddingTable> table_;
  ParamSet params_;
  std::uint64_t generation_ = 0;
};

namespace detail {

struct LstmTrace {
  std::vector<double> gates;  // L x 4H post-activation, gate order i, f, g, o
  std::vector<double> c;      // L x H
  std::vector<double> h;      // L x H
};

struct SampleCache {
  std::size_t length = 0;
  std::vector<std::uint32_t> tokens;
  std::vector<double> x;  // L x E
  std::vector<std::vector<double>> conv_pooled;  // per width, F
  std::vector<std::vector<int>> conv_argmax;     // per width, F; -1 = no window
  LstmTrace fwd;
  LstmTrace bwd;
  std::vector<double> alpha;    // L
  std::vector<double> states;   // L x 2H, BiLstmAttention only
  std::vector<double> r;        // 2H
  std::vector<double> hstar;    // 2H
  std::vector<double> doc_in;   // doc_input_dim
  std::vector<double> doc_out;  // doc_feature_dim
  std::vector<double> features;       // before dropout
  std::vector<double> dropout_scale;  // empty when no dropout was applied
  double logit = 0.0;
  double prob = 0.5;
};

}  // namespace detail

struct ForwardCache {
  const NeuralModel* model = nullptr;
  std::uint64_t generation = 0;
  bool train_mode = false;
  std::vector<detail::SampleCache> samples;
};

struct ForwardResult {
  std::vector<double> probabilities;  // P(deceptive) per sample
  ForwardCache cache;
};

// train_mode enables dropout, which draws from dropout_rng; inference never
// touches the generator.
ForwardResult forward(const NeuralModel& model, const EncodedBatch& batch, bool train_mode,
                      Rng* dropout_rng = nullptr);

inline constexpr double kProbClamp = 1e-7;

// Mean binary cross-entropy with probabilities clamped to
// [kProbClamp, 1 - kProbClamp].
double bce_loss(std::span<const double> probs, std::span<const int> labels);

// Gradients of bce_loss with respect to every parameter, by hand-derived
// reverse-mode rules (backpropagation through time for the LSTMs).
ParamSet backward(const NeuralModel& model, const ForwardCache& cache,
                  std::span<const int> labels);

// batch x max_len attention distribution; zero at padding positions.
Tensor attention_weights(const NeuralModel& model, const EncodedBatch& batch);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  NeuralModel model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

// Minibatch training with seeded shuffling. Train and validation metrics are
// recomputed in inference mode after every epoch. With a validation set the
// parameters of the best validation-loss epoch are returned.
TrainResult train(const ModelSpec& spec, std::shared_ptr<const EmbeddingTable> table,
                  const TrainConfig& cfg, const EncodedBatch& train_set,
                  const EncodedBatch* val_set = nullptr);

// Inference in chunks; returns P(deceptive) per sample.
std::vector<double> predict_proba(const NeuralModel& model, const EncodedBatch& batch,
                                  std::size_t chunk = 256);

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

struct GradCheckEntry {
  std::string param;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;

  bool passed(double tolerance) const { return max_rel_error <= tolerance; }
};

inline constexpr double kGradCheckEpsilon = 1e-4;
inline constexpr double kGradCheckTolerance = 1e-3;

// Compares backward() with central finite differences of bce_loss for every
// parameter entry. Dropout is disabled for the check. `tamper` may modify the
// analytic gradients before comparison (harness self-test).
GradCheckReport gradient_check(const NeuralModel& model, const EncodedBatch& batch,
                               double epsilon = kGradCheckEpsilon,
                               const std::function<void(ParamSet&)>& tamper = {});

// Relative error used by gradient_check: |a - n| / max(|a|, |n|, 1e-8).
double gradient_relative_error(double analytic, double numeric);

nlohmann::json params_to_json(const ParamSet& params);
ParamSet params_from_json(const nlohmann::json& j);

}  // namespace opspam
