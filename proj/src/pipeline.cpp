#include "opspam/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include "opspam/error.hpp"

namespace opspam {

nlohmann::json pipeline_to_json(const PipelineConfig& cfg) {
  nlohmann::json j = {{"lowercase", cfg.lowercase},
                      {"strip_punct", cfg.strip_punct},
                      {"strip_numeric", cfg.strip_numeric},
                      {"remove_stopwords", cfg.remove_stopwords},
                      {"stem", cfg.stem}};
  if (cfg.remove_stopwords) {
    j["stopwords"] = cfg.stopword_list;
    if (cfg.stopword_list == builtin_stopwords()) j["stopword_list_version"] = kStopwordListVersion;
  }
  return j;
}

PipelineConfig pipeline_from_json(const nlohmann::json& j) {
  PipelineConfig cfg;
  cfg.lowercase = j.at("lowercase").get<bool>();
  cfg.strip_punct = j.at("strip_punct").get<bool>();
  cfg.strip_numeric = j.at("strip_numeric").get<bool>();
  cfg.remove_stopwords = j.at("remove_stopwords").get<bool>();
  cfg.stem = j.at("stem").get<bool>();
  if (cfg.remove_stopwords) cfg.stopword_list = j.at("stopwords").get<std::set<std::string>>();
  cfg.validate();
  return cfg;
}

std::vector<TokenSequence> preprocess_all(const std::vector<Document>& docs,
                                          const PipelineConfig& cfg) {
  std::vector<TokenSequence> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(preprocess(d.id, d.text, cfg));
  return out;
}

std::vector<int> labels_of(const std::vector<Document>& docs) {
  std::vector<int> y;
  y.reserve(docs.size());
  for (const auto& d : docs) y.push_back(d.label_value());
  return y;
}

std::vector<double> dense_doc_features(const std::vector<TokenSequence>& docs,
                                       const Vocabulary& vocab) {
  const auto sparse = transform_tfidf(docs, vocab, true);
  std::vector<double> dense(docs.size() * vocab.size(), 0.0);
  for (std::size_t i = 0; i < sparse.n_rows(); ++i) {
    const auto& row = sparse.rows[i];
    for (std::size_t k = 0; k < row.nnz(); ++k) dense[i * vocab.size() + row.indices[k]] = row.values[k];
  }
  return dense;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

namespace {

std::uint64_t parse_hex64(const std::string& s) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used, 16);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("malformed hash '" + s + "'");
  }
}

nlohmann::json split_json(const RunConfig& cfg) {
  return {{"seed", cfg.split_seed},
          {"fraction", cfg.train_fraction},
          {"polarity", cfg.polarity ? to_string(*cfg.polarity) : "all"}};
}

std::vector<std::string> ids_of(const std::vector<Document>& docs) {
  std::vector<std::string> ids;
  ids.reserve(docs.size());
  for (const auto& d : docs) ids.push_back(d.id);
  return ids;
}

TrainArtifacts train_linear(const RunConfig& cfg, const CorpusSplit& parts) {
  const auto train_tokens = preprocess_all(parts.train, cfg.textprep);
  const auto test_tokens = preprocess_all(parts.test, cfg.textprep);
  const auto y_train = labels_of(parts.train);
  const auto y_test = labels_of(parts.test);

  const auto vocab = fit_vocabulary(train_tokens, cfg.features.analyzer, cfg.features.max_features);
  const auto x_train = vectorize(train_tokens, vocab, cfg.features);
  const auto x_test = vectorize(test_tokens, vocab, cfg.features);

  TrainArtifacts out;
  nlohmann::json params;
  if (cfg.model == "mnb") {
    const auto model = mnb_fit(x_train, y_train, cfg.mnb_alpha);
    out.test_prediction = mnb_predict(model, x_test);
    params = model.to_json();
  } else {
    const auto model = sgd_fit(x_train, y_train, cfg.sgd_loss, cfg.sgd);
    out.test_prediction = linear_predict(model, x_test);
    params = model.to_json();
    params["train"] = {{"learning_rate", cfg.sgd.learning_rate}, {"decay", cfg.sgd.decay},
                       {"epochs", cfg.sgd.epochs},               {"seed", cfg.sgd.seed},
                       {"shuffle", cfg.sgd.shuffle}};
  }

  out.vocab = vocab.to_json();
  out.model = {{"format_version", kModelFormatVersion},
               {"kind", "linear"},
               {"model", cfg.model},
               {"preprocessing", pipeline_to_json(cfg.textprep)},
               {"features", cfg.features.to_json()},
               {"vocab_ref", {{"file", kVocabFileName}, {"content_hash", hex64(vocab.content_hash())}}},
               {"params", params},
               {"split", split_json(cfg)}};
  out.report = evaluate(y_test, out.test_prediction.labels, out.test_prediction.scores,
                        cfg.split_seed, cfg.model, cfg.features.name());
  return out;
}

EncodedBatch encode_with_docs(const std::vector<TokenSequence>& seqs, const std::vector<int>& y,
                              const EmbeddingTable& table, const ModelSpec& spec,
                              const Vocabulary* doc_vocab) {
  auto batch = encode_batch(seqs, y, table, spec.max_len);
  if (doc_vocab) {
    batch.doc_feature_dim = doc_vocab->size();
    batch.doc_features = dense_doc_features(seqs, *doc_vocab);
  }
  return batch;
}

std::vector<int> threshold(const std::vector<double>& probs) {
  std::vector<int> labels;
  labels.reserve(probs.size());
  for (double p : probs) labels.push_back(p > 0.5 ? 1 : 0);
  return labels;
}

TrainArtifacts train_neural(const RunConfig& cfg, const std::vector<Document>& corpus,
                            const CorpusSplit& parts) {
  if (cfg.embeddings_path.empty()) {
    throw UsageError("model " + cfg.model + " needs pretrained embeddings (--embeddings FILE)");
  }
  // Only tokens that occur in the corpus are kept from the embedding file.
  std::unordered_set<std::string> wanted;
  for (const auto& seq : preprocess_all(corpus, cfg.textprep)) {
    wanted.insert(seq.tokens.begin(), seq.tokens.end());
  }
  auto table = std::make_shared<const EmbeddingTable>(
      load_embeddings(cfg.embeddings_path, cfg.embedding_dim, &wanted, cfg.oov_seed));

  ModelSpec spec = cfg.neural;
  if (spec.embedding_dim != 0 && spec.embedding_dim != table->dim()) {
    throw DimensionError("embedding_dim " + std::to_string(spec.embedding_dim) +
                         " does not match the embedding file (" + std::to_string(table->dim()) + ")");
  }
  spec.embedding_dim = table->dim();

  // Early stopping watches a stratified slice of the training part.
  std::vector<Document> fit_docs = parts.train;
  std::vector<Document> val_docs;
  if (cfg.validation_fraction > 0.0) {
    auto inner = split(parts.train, 1.0 - cfg.validation_fraction, cfg.split_seed + 1);
    fit_docs = std::move(inner.train);
    val_docs = std::move(inner.test);
  }
  const auto fit_tokens = preprocess_all(fit_docs, cfg.textprep);
  const auto val_tokens = preprocess_all(val_docs, cfg.textprep);
  const auto test_tokens = preprocess_all(parts.test, cfg.textprep);

  std::optional<Vocabulary> doc_vocab;
  if (spec.architecture == Architecture::RecurrentCnn) {
    doc_vocab = fit_vocabulary(fit_tokens, Analyzer::word(), cfg.doc_max_features);
    spec.doc_input_dim = doc_vocab->size();
  }
  spec.validate();
  const Vocabulary* dv = doc_vocab ? &*doc_vocab : nullptr;

  const auto fit_set = encode_with_docs(fit_tokens, labels_of(fit_docs), *table, spec, dv);
  const auto val_set = encode_with_docs(val_tokens, labels_of(val_docs), *table, spec, dv);
  const auto test_set = encode_with_docs(test_tokens, labels_of(parts.test), *table, spec, dv);

  auto result = train(spec, table, cfg.neural_train, fit_set, val_docs.empty() ? nullptr : &val_set);

  TrainArtifacts out;
  out.history = result.history;
  const auto train_probs = predict_proba(result.model, fit_set);
  const auto train_cm = confusion(fit_set.labels, threshold(train_probs));
  out.train_accuracy = scores(train_cm).accuracy;

  const auto probs = predict_proba(result.model, test_set);
  out.test_prediction.labels = threshold(probs);
  out.test_prediction.scores = probs;

  nlohmann::json embeddings;
  if (spec.trainable_embeddings) {
    embeddings = {{"mode", "inline"}, {"oov_seed", table->oov_seed()}, {"tokens", table->tokens()}};
  } else {
    embeddings = {{"mode", "file"},
                  {"path", cfg.embeddings_path.string()},
                  {"file_hash", hex64(hash_file(cfg.embeddings_path))},
                  {"dim", table->dim()},
                  {"oov_seed", table->oov_seed()}};
  }
  out.model = {{"format_version", kModelFormatVersion},
               {"kind", "neural"},
               {"model", cfg.model},
               {"preprocessing", pipeline_to_json(cfg.textprep)},
               {"spec", spec.to_json()},
               {"embeddings", embeddings},
               {"params", params_to_json(result.model.params())},
               {"train",
                {{"optimizer", cfg.neural_train.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                 {"learning_rate", cfg.neural_train.learning_rate},
                 {"batch_size", cfg.neural_train.batch_size},
                 {"epochs", cfg.neural_train.epochs},
                 {"patience", cfg.neural_train.patience},
                 {"seed", cfg.neural_train.seed},
                 {"validation_fraction", cfg.validation_fraction},
                 {"best_epoch", result.best_epoch}}},
               {"split", split_json(cfg)}};
  std::string features = "embeddings";
  if (doc_vocab) {
    out.vocab = doc_vocab->to_json();
    out.model["vocab_ref"] = {{"file", kVocabFileName},
                              {"content_hash", hex64(doc_vocab->content_hash())}};
    features = "embeddings+tfidf-word";
  }
  out.report = evaluate(test_set.labels, out.test_prediction.labels, out.test_prediction.scores,
                        cfg.split_seed, cfg.model, features);
  return out;
}

}  // namespace

nlohmann::json TrainArtifacts::report_json() const {
  auto j = report.to_json();
  j["train_size"] = train_size;
  j["test_size"] = test_size;
  if (train_accuracy) j["train_accuracy"] = *train_accuracy;
  if (!history.empty()) j["epochs_run"] = history.size();
  return j;
}

TrainArtifacts train_model(const RunConfig& cfg, const std::vector<Document>& corpus) {
  const auto docs = filter_polarity(corpus, cfg.polarity);
  const auto parts = split(docs, cfg.train_fraction, cfg.split_seed);
  auto out = model_family(cfg.model) == ModelFamily::Linear ? train_linear(cfg, parts)
                                                            : train_neural(cfg, docs, parts);
  out.train_size = parts.train.size();
  out.test_size = parts.test.size();
  out.test_ids = ids_of(parts.test);
  return out;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_artifacts(const TrainArtifacts& artifacts, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json_file(dir / kModelFileName, artifacts.model);
  if (artifacts.vocab) write_json_file(dir / kVocabFileName, *artifacts.vocab);
  write_json_file(dir / kReportFileName, artifacts.report_json());
  if (!artifacts.history.empty()) {
    std::ofstream out(dir / kHistoryFileName, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / kHistoryFileName).string());
    write_history_csv(out, artifacts.history);
  }
}

LoadedModel LoadedModel::load(const std::filesystem::path& model_file) {
  const auto model = read_json_file(model_file);
  std::optional<nlohmann::json> vocab;
  const auto base = model_file.parent_path();
  if (model.is_object() && model.contains("vocab_ref")) {
    try {
      vocab = read_json_file(base / model.at("vocab_ref").at("file").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(model_file.string() + ": bad vocab_ref: " + e.what());
    }
  }
  try {
    return from_json(model, vocab, base);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(model_file.string() + ": " + e.what());
  }
}

LoadedModel LoadedModel::from_json(const nlohmann::json& model,
                                   const std::optional<nlohmann::json>& vocab,
                                   const std::filesystem::path& base_dir) {
  if (!model.is_object() || !model.contains("format_version")) {
    throw ParseError("not an opspam model file (no format_version)");
  }
  const int version = model.at("format_version").get<int>();
  if (version != kModelFormatVersion) {
    throw ParseError("model file format version " + std::to_string(version) +
                     " is not supported; this build reads version " +
                     std::to_string(kModelFormatVersion));
  }

  std::optional<Vocabulary> vocabulary;
  if (model.contains("vocab_ref")) {
    if (!vocab) throw ParseError("model references a vocabulary file that was not provided");
    const int vv = vocab->value("format_version", -1);
    if (vv != kVocabularyFormatVersion) {
      throw ParseError("vocabulary format version " + std::to_string(vv) +
                       " does not match the supported version " +
                       std::to_string(kVocabularyFormatVersion));
    }
    vocabulary = Vocabulary::from_json(*vocab);
    const auto expected = parse_hex64(model.at("vocab_ref").at("content_hash").get<std::string>());
    if (vocabulary->content_hash() != expected) {
      throw ParseError("vocabulary hash mismatch: model expects " + hex64(expected) +
                       ", vocabulary file has " + hex64(vocabulary->content_hash()));
    }
  }

  LoadedModel lm;
  lm.model_name_ = model.at("model").get<std::string>();
  lm.pipeline_ = pipeline_from_json(model.at("preprocessing"));
  const auto& sp = model.at("split");
  lm.split_seed_ = sp.at("seed").get<std::uint64_t>();
  lm.train_fraction_ = sp.at("fraction").get<double>();
  const auto pol = sp.at("polarity").get<std::string>();
  if (pol == "positive") {
    lm.polarity_ = Polarity::Positive;
  } else if (pol == "negative") {
    lm.polarity_ = Polarity::Negative;
  }

  const auto kind = model.at("kind").get<std::string>();
  if (kind == "linear") {
    if (!vocabulary) throw ParseError("linear model without vocabulary");
    Linear lin;
    lin.features = FeatureSpec::from_json(model.at("features"));
    lin.vocab = std::move(*vocabulary);
    if (lm.model_name_ == "mnb") {
      lin.model = MnbModel::from_json(model.at("params"));
    } else {
      lin.model = LinearModel::from_json(model.at("params"));
    }
    lm.features_name_ = lin.features.name();
    lm.impl_ = std::move(lin);
  } else if (kind == "neural") {
    Neural nn;
    nn.spec = ModelSpec::from_json(model.at("spec"));
    nn.spec.validate();
    nn.params = params_from_json(model.at("params"));
    const auto& emb = model.at("embeddings");
    nn.oov_seed = emb.at("oov_seed").get<std::uint64_t>();
    const auto mode = emb.at("mode").get<std::string>();
    if (mode == "file") {
      nn.embedding_path = emb.at("path").get<std::string>();
      if (nn.embedding_path.is_relative() && !std::filesystem::exists(nn.embedding_path)) {
        nn.embedding_path = base_dir / nn.embedding_path;
      }
      nn.embedding_hash = parse_hex64(emb.at("file_hash").get<std::string>());
    } else if (mode == "inline") {
      const auto tokens = emb.at("tokens").get<std::vector<std::string>>();
      const auto it = nn.params.find("embedding");
      if (it == nn.params.end()) throw ParseError("inline embeddings without an embedding parameter");
      const auto& m = it->second;
      if (m.rows() != tokens.size() + 2 || m.cols() != nn.spec.embedding_dim) {
        throw ParseError("embedding parameter shape does not match its token list");
      }
      std::vector<double> vectors(m.values().begin() + 2 * static_cast<std::ptrdiff_t>(m.cols()),
                                  m.values().end());
      nn.inline_table = std::make_shared<const EmbeddingTable>(tokens, std::move(vectors),
                                                               m.cols(), nn.oov_seed);
    } else {
      throw ParseError("unknown embeddings mode '" + mode + "'");
    }
    if (nn.spec.architecture == Architecture::RecurrentCnn) {
      if (!vocabulary) throw ParseError("rcnn model without document vocabulary");
      nn.doc_vocab = std::move(vocabulary);
    }
    lm.features_name_ = nn.doc_vocab ? "embeddings+tfidf-word" : "embeddings";
    // Construct once so that malformed parameter sets fail at load time.
    if (nn.inline_table) NeuralModel(nn.spec, nn.inline_table, nn.params);
    lm.impl_ = std::move(nn);
  } else {
    throw ParseError("unknown model kind '" + kind + "'");
  }
  return lm;
}

bool LoadedModel::is_neural() const { return std::holds_alternative<Neural>(impl_); }

bool LoadedModel::has_attention() const {
  const auto* nn = std::get_if<Neural>(&impl_);
  return nn && nn->spec.architecture == Architecture::BiLstmAttention;
}

NeuralModel LoadedModel::neural_for(const std::vector<TokenSequence>& seqs) const {
  const auto& nn = std::get<Neural>(impl_);
  if (nn.inline_table) return NeuralModel(nn.spec, nn.inline_table, nn.params);
  if (!std::filesystem::exists(nn.embedding_path)) {
    throw Error("embedding file " + nn.embedding_path.string() + " referenced by the model is missing");
  }
  const auto actual = hash_file(nn.embedding_path);
  if (actual != nn.embedding_hash) {
    throw ParseError("embedding file " + nn.embedding_path.string() + " changed: model expects hash " +
                     hex64(nn.embedding_hash) + ", file has " + hex64(actual));
  }
  std::unordered_set<std::string> wanted;
  for (const auto& s : seqs) wanted.insert(s.tokens.begin(), s.tokens.end());
  auto table = std::make_shared<const EmbeddingTable>(
      load_embeddings(nn.embedding_path, nn.spec.embedding_dim, &wanted, nn.oov_seed));
  return NeuralModel(nn.spec, std::move(table), nn.params);
}

EncodedBatch LoadedModel::encode_neural(const std::vector<TokenSequence>& seqs,
                                        const EmbeddingTable& table) const {
  const auto& nn = std::get<Neural>(impl_);
  return encode_with_docs(seqs, {}, table, nn.spec, nn.doc_vocab ? &*nn.doc_vocab : nullptr);
}

PredictOutput LoadedModel::predict(const std::vector<std::string>& texts) const {
  std::vector<TokenSequence> seqs;
  seqs.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    seqs.push_back(preprocess(std::to_string(i), texts[i], pipeline_));
  }
  PredictOutput out;
  if (const auto* lin = std::get_if<Linear>(&impl_)) {
    const auto x = vectorize(seqs, lin->vocab, lin->features);
    for (std::size_t i = 0; i < x.n_rows(); ++i) {
      if (x.rows[i].nnz() == 0) out.empty_inputs.push_back(i);
    }
    if (const auto* mnb = std::get_if<MnbModel>(&lin->model)) {
      out.prediction = mnb_predict(*mnb, x);
    } else {
      out.prediction = linear_predict(std::get<LinearModel>(lin->model), x);
    }
    return out;
  }
  const auto model = neural_for(seqs);
  const auto batch = encode_neural(seqs, model.table());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.lengths[i] == 0) out.empty_inputs.push_back(i);
  }
  out.prediction.scores = predict_proba(model, batch);
  out.prediction.labels = threshold(out.prediction.scores);
  return out;
}

std::vector<TokenWeight> LoadedModel::explain(const std::string& text) const {
  if (!has_attention()) {
    throw UsageError("model " + model_name_ + " has no attention layer to explain");
  }
  const std::vector<TokenSequence> seqs{preprocess("0", text, pipeline_)};
  const auto model = neural_for(seqs);
  const auto batch = encode_neural(seqs, model.table());
  const auto alpha = attention_weights(model, batch);
  std::vector<TokenWeight> out;
  for (std::size_t t = 0; t < batch.lengths[0]; ++t) {
    out.push_back({seqs[0].tokens[t], alpha.at(0, t)});
  }
  return out;
}

}  // namespace opspam
