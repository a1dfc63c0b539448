#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "opspam/corpus.hpp"
#include "opspam/features.hpp"
#include "opspam/linear_models.hpp"
#include "opspam/neural.hpp"
#include "opspam/textprep.hpp"

namespace opspam {

enum class ModelFamily { Linear, Neural };

// Model names accepted by `train --model`.
//   linear: mnb, lr, sgd, svm
//   neural: cnn, lstm, bilstm, rcnn, bilstm-attn
bool is_known_model(const std::string& name);
ModelFamily model_family(const std::string& name);

// Everything a train/evaluate/reproduce run needs. Keys are addressed as
// "section.key" both in INI config files and in --set overrides; see
// RunConfig::set for the full list.
struct RunConfig {
  std::filesystem::path corpus_root;
  std::optional<Polarity> polarity;

  double train_fraction = 0.8;
  std::uint64_t split_seed = 42;

  PipelineConfig textprep = PipelineConfig::defaults();
  std::filesystem::path stopwords_file;

  std::string model = "mnb";
  FeatureSpec features = FeatureSpec::parse("tfidf-word");

  double mnb_alpha = kDefaultMnbAlpha;
  SgdConfig sgd;
  Loss sgd_loss = Loss::Logistic;

  ModelSpec neural;
  TrainConfig neural_train;
  std::filesystem::path embeddings_path;
  std::optional<std::size_t> embedding_dim;
  std::uint64_t oov_seed = EmbeddingTable::kDefaultOovSeed;
  double validation_fraction = 0.1;
  // Vocabulary cap for the rcnn document (TF-IDF) branch.
  std::size_t doc_max_features = 2000;

  std::filesystem::path output_dir = "opspam_out";

  // Applies one "section.key" = value setting; throws UsageError on unknown
  // keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  // INI file with [section] headers; every key goes through set().
  void load_file(const std::filesystem::path& path);
  // Fills model-dependent defaults for keys that were not set explicitly
  // (neural models: no stemming or stopword removal; lr: stronger L2; svm:
  // hinge loss) and validates the result.
  void finalize();

  bool was_set(const std::string& key) const { return explicit_keys_.count(key) != 0; }

  nlohmann::json to_json() const;

 private:
  std::set<std::string> explicit_keys_;
};

// Logistic regression default L2 strength, roughly C = 1 on a 1280-document
// training set expressed in the (1/N) sum loss + l2 ||w||^2 objective.
inline constexpr double kLogisticRegressionL2 = 4e-4;

}  // namespace opspam
