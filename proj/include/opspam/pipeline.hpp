#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "opspam/config.hpp"
#include "opspam/corpus.hpp"
#include "opspam/embeddings.hpp"
#include "opspam/features.hpp"
#include "opspam/linear_models.hpp"
#include "opspam/metrics.hpp"
#include "opspam/neural.hpp"
#include "opspam/textprep.hpp"

namespace opspam {

inline constexpr int kModelFormatVersion = 1;

nlohmann::json pipeline_to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_from_json(const nlohmann::json& j);

std::vector<TokenSequence> preprocess_all(const std::vector<Document>& docs,
                                          const PipelineConfig& cfg);
std::vector<int> labels_of(const std::vector<Document>& docs);

// Dense, L2-normalized TF-IDF rows used as the rcnn document input.
std::vector<double> dense_doc_features(const std::vector<TokenSequence>& docs,
                                       const Vocabulary& vocab);

std::string hex64(std::uint64_t value);

// Files produced by one `train` run. model holds the model file; vocab is
// the separate vocabulary file it references (linear models and rcnn).
struct TrainArtifacts {
  nlohmann::json model;
  std::optional<nlohmann::json> vocab;
  EvalReport report;
  Prediction test_prediction;
  std::vector<std::string> test_ids;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  // Neural models only.
  std::vector<EpochRecord> history;
  std::optional<double> train_accuracy;

  nlohmann::json report_json() const;
};

inline constexpr const char* kModelFileName = "model.json";
inline constexpr const char* kVocabFileName = "vocab.json";
inline constexpr const char* kReportFileName = "report.json";
inline constexpr const char* kHistoryFileName = "history.csv";

// Split, preprocess, vectorize or encode, fit, and evaluate on the held-out
// part. `cfg` must be finalized.
TrainArtifacts train_model(const RunConfig& cfg, const std::vector<Document>& corpus);

// Writes model.json, vocab.json (when present), report.json and history.csv
// (neural models) into dir.
void save_artifacts(const TrainArtifacts& artifacts, const std::filesystem::path& dir);

// Writes JSON with a trailing newline; doubles are printed so that they
// parse back to the identical value.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

struct PredictOutput {
  Prediction prediction;
  // Indices of inputs that produced no features (or no tokens).
  std::vector<std::size_t> empty_inputs;
};

struct TokenWeight {
  std::string token;
  double weight = 0.0;
};

// A saved model ready for inference, with the exact preprocessing and feature
// configuration it was trained with.
class LoadedModel {
 public:
  static LoadedModel load(const std::filesystem::path& model_file);
  // vocab is required when the model references a vocabulary file.
  static LoadedModel from_json(const nlohmann::json& model,
                               const std::optional<nlohmann::json>& vocab,
                               const std::filesystem::path& base_dir);

  const std::string& model_name() const { return model_name_; }
  const std::string& features_name() const { return features_name_; }
  bool is_neural() const;
  bool has_attention() const;
  std::uint64_t split_seed() const { return split_seed_; }
  double train_fraction() const { return train_fraction_; }
  std::optional<Polarity> polarity() const { return polarity_; }

  PredictOutput predict(const std::vector<std::string>& texts) const;
  // Attention weight per kept token (bilstm-attn only).
  std::vector<TokenWeight> explain(const std::string& text) const;

 private:
  struct Linear {
    FeatureSpec features;
    Vocabulary vocab;
    std::variant<MnbModel, LinearModel> model;
  };
  struct Neural {
    ModelSpec spec;
    ParamSet params;
    // Frozen embeddings are re-read from the referenced file for every
    // call; trainable ones are carried inline.
    std::filesystem::path embedding_path;
    std::uint64_t embedding_hash = 0;
    std::uint64_t oov_seed = EmbeddingTable::kDefaultOovSeed;
    std::shared_ptr<const EmbeddingTable> inline_table;
    std::optional<Vocabulary> doc_vocab;
  };

  NeuralModel neural_for(const std::vector<TokenSequence>& seqs) const;
  EncodedBatch encode_neural(const std::vector<TokenSequence>& seqs,
                             const EmbeddingTable& table) const;

  std::string model_name_;
  std::string features_name_;
  PipelineConfig pipeline_;
  std::uint64_t split_seed_ = 0;
  double train_fraction_ = 0.8;
  std::optional<Polarity> polarity_;
  std::variant<Linear, Neural> impl_;
};

}  // namespace opspam
