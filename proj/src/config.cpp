#include "opspam/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "opspam/error.hpp"

namespace opspam {

bool is_known_model(const std::string& name) {
  for (const char* m : {"mnb", "lr", "sgd", "svm", "cnn", "lstm", "bilstm", "rcnn", "bilstm-attn"}) {
    if (name == m) return true;
  }
  return false;
}

ModelFamily model_family(const std::string& name) {
  if (!is_known_model(name)) throw UsageError("unknown model '" + name + "'");
  return (name == "mnb" || name == "lr" || name == "sgd" || name == "svm") ? ModelFamily::Linear
                                                                           : ModelFamily::Neural;
}

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw UsageError(key + ": expected a boolean, got '" + v + "'");
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw UsageError(key + ": expected a number, got '" + v + "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v.front() == '-') throw std::invalid_argument(v);
    const auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw UsageError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  return static_cast<int>(parse_uint(key, v));
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto item = v.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    out.push_back(static_cast<std::size_t>(parse_uint(key, item)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& v = value;
  if (key == "corpus.root") {
    corpus_root = v;
  } else if (key == "corpus.polarity") {
    if (v == "all") {
      polarity.reset();
    } else if (v == "positive") {
      polarity = Polarity::Positive;
    } else if (v == "negative") {
      polarity = Polarity::Negative;
    } else {
      throw UsageError("corpus.polarity must be all, positive or negative");
    }
  } else if (key == "split.fraction") {
    train_fraction = parse_real(key, v);
  } else if (key == "split.seed") {
    split_seed = parse_uint(key, v);
  } else if (key == "textprep.lowercase") {
    textprep.lowercase = parse_bool(key, v);
  } else if (key == "textprep.strip_punct") {
    textprep.strip_punct = parse_bool(key, v);
  } else if (key == "textprep.strip_numeric") {
    textprep.strip_numeric = parse_bool(key, v);
  } else if (key == "textprep.remove_stopwords") {
    textprep.remove_stopwords = parse_bool(key, v);
  } else if (key == "textprep.stem") {
    textprep.stem = parse_bool(key, v);
  } else if (key == "textprep.stopwords_file") {
    stopwords_file = v;
    textprep.stopword_list = load_stopwords(stopwords_file);
  } else if (key == "features.set") {
    features = FeatureSpec::parse(v);
  } else if (key == "features.analyzer") {
    features.analyzer = Analyzer::parse(v);
  } else if (key == "features.max_features") {
    if (v == "none") {
      features.max_features.reset();
    } else {
      features.max_features = static_cast<std::size_t>(parse_uint(key, v));
    }
  } else if (key == "features.l2_normalize") {
    features.l2_normalize = parse_bool(key, v);
  } else if (key == "model.type") {
    if (!is_known_model(v)) throw UsageError("unknown model '" + v + "'");
    model = v;
  } else if (key == "mnb.alpha") {
    mnb_alpha = parse_real(key, v);
  } else if (key == "sgd.learning_rate") {
    sgd.learning_rate = parse_real(key, v);
  } else if (key == "sgd.decay") {
    sgd.decay = parse_real(key, v);
  } else if (key == "sgd.epochs") {
    sgd.epochs = parse_int(key, v);
  } else if (key == "sgd.l2") {
    sgd.l2 = parse_real(key, v);
  } else if (key == "sgd.seed") {
    sgd.seed = parse_uint(key, v);
  } else if (key == "sgd.shuffle") {
    sgd.shuffle = parse_bool(key, v);
  } else if (key == "sgd.loss") {
    sgd_loss = parse_loss(v);
  } else if (key == "neural.hidden_dim") {
    neural.hidden_dim = parse_uint(key, v);
  } else if (key == "neural.filters") {
    neural.filters = parse_uint(key, v);
  } else if (key == "neural.filter_widths") {
    neural.filter_widths = parse_list(key, v);
  } else if (key == "neural.dropout") {
    neural.dropout = parse_real(key, v);
  } else if (key == "neural.max_len") {
    neural.max_len = parse_uint(key, v);
  } else if (key == "neural.doc_feature_dim") {
    neural.doc_feature_dim = parse_uint(key, v);
  } else if (key == "neural.doc_max_features") {
    doc_max_features = parse_uint(key, v);
  } else if (key == "neural.trainable_embeddings") {
    neural.trainable_embeddings = parse_bool(key, v);
  } else if (key == "neural.embeddings") {
    embeddings_path = v;
  } else if (key == "neural.embedding_dim") {
    embedding_dim = parse_uint(key, v);
  } else if (key == "neural.oov_seed") {
    oov_seed = parse_uint(key, v);
  } else if (key == "neural.optimizer") {
    if (v == "adam") {
      neural_train.optimizer = OptimizerKind::Adam;
    } else if (v == "sgd") {
      neural_train.optimizer = OptimizerKind::Sgd;
    } else {
      throw UsageError("neural.optimizer must be adam or sgd");
    }
  } else if (key == "neural.learning_rate") {
    neural_train.learning_rate = parse_real(key, v);
  } else if (key == "neural.beta1") {
    neural_train.beta1 = parse_real(key, v);
  } else if (key == "neural.beta2") {
    neural_train.beta2 = parse_real(key, v);
  } else if (key == "neural.epsilon") {
    neural_train.epsilon = parse_real(key, v);
  } else if (key == "neural.batch_size") {
    neural_train.batch_size = parse_uint(key, v);
  } else if (key == "neural.epochs") {
    neural_train.epochs = parse_int(key, v);
  } else if (key == "neural.seed") {
    neural_train.seed = parse_uint(key, v);
  } else if (key == "neural.patience") {
    neural_train.patience = parse_int(key, v);
  } else if (key == "neural.validation_fraction") {
    validation_fraction = parse_real(key, v);
  } else if (key == "output.dir") {
    output_dir = v;
  } else {
    throw UsageError("unknown config key '" + key + "'");
  }
  explicit_keys_.insert(key);
}

void RunConfig::load_file(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(std::string("config file: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ParseError("config file " + path.string() + ": key '" + section +
                                       "' is outside a [section]");
    for (const auto& [key, value] : body) set(section + "." + key, value.data());
  }
}

void RunConfig::finalize() {
  if (model_family(model) == ModelFamily::Neural) {
    if (!was_set("textprep.stem")) textprep.stem = false;
    if (!was_set("textprep.remove_stopwords")) textprep.remove_stopwords = false;
    neural.architecture = parse_architecture(model);
  } else if (model == "lr") {
    if (!was_set("sgd.l2")) sgd.l2 = kLogisticRegressionL2;
  } else if (model == "svm") {
    if (!was_set("sgd.loss")) sgd_loss = Loss::Hinge;
  }
  if (model == "lr" && sgd_loss != Loss::Logistic) {
    throw UsageError("model lr uses the logistic loss");
  }
  textprep.validate();
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw UsageError("split.fraction must lie in (0, 1)");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw UsageError("neural.validation_fraction must lie in [0, 1)");
  }
  sgd.validate();
  if (!(mnb_alpha > 0.0)) throw UsageError("mnb.alpha must be > 0");
  neural_train.validate();
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = {
      {"split", {{"fraction", train_fraction}, {"seed", split_seed}}},
      {"corpus", {{"polarity", polarity ? to_string(*polarity) : "all"}}},
      {"model", model},
  };
  if (model_family(model) == ModelFamily::Linear) {
    j["features"] = features.to_json();
    if (model == "mnb") {
      j["mnb"] = {{"alpha", mnb_alpha}};
    } else {
      j["sgd"] = {{"learning_rate", sgd.learning_rate}, {"decay", sgd.decay},
                  {"epochs", sgd.epochs},               {"l2", sgd.l2},
                  {"seed", sgd.seed},                   {"shuffle", sgd.shuffle},
                  {"loss", to_string(sgd_loss)}};
    }
  } else {
    j["neural"] = {{"spec", neural.to_json()},
                   {"optimizer", neural_train.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                   {"learning_rate", neural_train.learning_rate},
                   {"batch_size", neural_train.batch_size},
                   {"epochs", neural_train.epochs},
                   {"seed", neural_train.seed},
                   {"patience", neural_train.patience},
                   {"validation_fraction", validation_fraction},
                   {"oov_seed", oov_seed}};
  }
  return j;
}

}  // namespace opspam
