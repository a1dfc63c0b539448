#include "opspam/features.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <regex>

#include "opspam/error.hpp"

namespace opspam {

Analyzer Analyzer::word_ngram(int min_n, int max_n) {
  if (min_n < 1 || max_n < min_n) throw UsageError("invalid word n-gram range");
  return {AnalyzerKind::WordNgram, min_n, max_n};
}

Analyzer Analyzer::char_ngram(int min_n, int max_n) {
  if (min_n < 1 || max_n < min_n) throw UsageError("invalid char n-gram range");
  return {AnalyzerKind::CharNgram, min_n, max_n};
}

std::string Analyzer::name() const {
  const auto range = "(" + std::to_string(min_n) + "," + std::to_string(max_n) + ")";
  switch (kind) {
    case AnalyzerKind::Word:
      return "word";
    case AnalyzerKind::WordNgram:
      return "word-ngram" + range;
    case AnalyzerKind::CharNgram:
      return "char-ngram" + range;
  }
  return "word";
}

Analyzer Analyzer::parse(const std::string& name) {
  if (name == "word") return word();
  static const std::regex kPattern(R"((word|char)-ngram\((\d+),(\d+)\))");
  std::smatch m;
  if (!std::regex_match(name, m, kPattern)) throw UsageError("unknown analyzer '" + name + "'");
  const int lo = std::stoi(m[2]);
  const int hi = std::stoi(m[3]);
  return m[1] == "word" ? word_ngram(lo, hi) : char_ngram(lo, hi);
}

std::vector<std::string> extract_terms(const std::vector<std::string>& tokens,
                                       const Analyzer& analyzer) {
  std::vector<std::string> terms;
  switch (analyzer.kind) {
    case AnalyzerKind::Word:
      return tokens;
    case AnalyzerKind::WordNgram:
      for (int n = analyzer.min_n; n <= analyzer.max_n; ++n) {
        const auto un = static_cast<std::size_t>(n);
        for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
          std::string gram = tokens[i];
          for (std::size_t k = 1; k < un; ++k) gram += ' ' + tokens[i + k];
          terms.push_back(std::move(gram));
        }
      }
      return terms;
    case AnalyzerKind::CharNgram: {
      std::string joined;
      for (const auto& t : tokens) joined += (joined.empty() ? "" : " ") + t;
      for (int n = analyzer.min_n; n <= analyzer.max_n; ++n) {
        const auto un = static_cast<std::size_t>(n);
        for (std::size_t i = 0; i + un <= joined.size(); ++i) {
          terms.push_back(joined.substr(i, un));
        }
      }
      return terms;
    }
  }
  return terms;
}

double SparseVector::dot(std::span<const double> dense) const {
  double acc = 0.0;
  for (std::size_t k = 0; k < indices.size(); ++k) acc += values[k] * dense[indices[k]];
  return acc;
}

double SparseVector::sum() const {
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc;
}

std::optional<std::size_t> Vocabulary::index_of(const std::string& term) const {
  const auto it = term_to_index_.find(term);
  if (it == term_to_index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocabulary::doc_freq(const std::string& term) const {
  const auto idx = index_of(term);
  return idx ? doc_freq_[*idx] : 0;
}

void Vocabulary::rebuild_index() {
  term_to_index_.clear();
  term_to_index_.reserve(terms_.size());
  for (std::size_t i = 0; i < terms_.size(); ++i) term_to_index_.emplace(terms_[i], i);
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json terms = nlohmann::json::array();
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    terms.push_back({{"term", terms_[i]}, {"index", i}, {"df", doc_freq_[i]}});
  }
  nlohmann::json j = {{"format_version", kVocabularyFormatVersion},
                      {"analyzer", analyzer_.name()},
                      {"n_docs_fitted", n_docs_fitted_},
                      {"terms", std::move(terms)}};
  j["max_features"] = max_features_ ? nlohmann::json(*max_features_) : nlohmann::json();
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kVocabularyFormatVersion) {
      throw ParseError("vocabulary format version " + std::to_string(version) +
                       " is not supported (expected " +
                       std::to_string(kVocabularyFormatVersion) + ")");
    }
    Vocabulary v;
    v.analyzer_ = Analyzer::parse(j.at("analyzer").get<std::string>());
    v.n_docs_fitted_ = j.at("n_docs_fitted").get<std::size_t>();
    if (j.contains("max_features") && !j["max_features"].is_null()) {
      v.max_features_ = j["max_features"].get<std::size_t>();
    }
    const auto& terms = j.at("terms");
    v.terms_.resize(terms.size());
    v.doc_freq_.resize(terms.size());
    for (const auto& t : terms) {
      const auto idx = t.at("index").get<std::size_t>();
      if (idx >= terms.size()) throw ParseError("vocabulary index out of range");
      v.terms_[idx] = t.at("term").get<std::string>();
      v.doc_freq_[idx] = t.at("df").get<std::size_t>();
      if (v.doc_freq_[idx] < 1 || v.doc_freq_[idx] > v.n_docs_fitted_) {
        throw ParseError("vocabulary df out of range for term '" + v.terms_[idx] + "'");
      }
    }
    v.rebuild_index();
    if (v.term_to_index_.size() != v.terms_.size()) {
      throw ParseError("vocabulary has duplicate terms or missing indices");
    }
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed vocabulary: ") + e.what());
  }
}

std::uint64_t fnv1a(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t Vocabulary::content_hash() const {
  auto h = fnv1a(analyzer_.name());
  h = fnv1a(std::to_string(n_docs_fitted_), h);
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    h = fnv1a(terms_[i], h);
    h = fnv1a(std::string(1, '\0') + std::to_string(doc_freq_[i]) + '\n', h);
  }
  return h;
}

Vocabulary fit_vocabulary(const std::vector<TokenSequence>& docs, const Analyzer& analyzer,
                          std::optional<std::size_t> max_features) {
  if (docs.empty()) throw UsageError("cannot fit a vocabulary on zero documents");
  if (max_features && *max_features == 0) throw UsageError("max_features must be >= 1");

  struct Stats {
    std::size_t total = 0;
    std::size_t df = 0;
    std::size_t last_doc = SIZE_MAX;
  };
  std::unordered_map<std::string, Stats> stats;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (auto& term : extract_terms(docs[d].tokens, analyzer)) {
      auto& s = stats[std::move(term)];
      ++s.total;
      if (s.last_doc != d) {
        ++s.df;
        s.last_doc = d;
      }
    }
  }

  std::vector<std::pair<std::string, Stats>> ranked(stats.begin(), stats.end());
  if (max_features && ranked.size() > *max_features) {
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second.total != b.second.total) return a.second.total > b.second.total;
      return a.first < b.first;
    });
    ranked.resize(*max_features);
  }
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  Vocabulary v;
  v.analyzer_ = analyzer;
  v.max_features_ = max_features;
  v.n_docs_fitted_ = docs.size();
  for (auto& [term, s] : ranked) {
    v.terms_.push_back(term);
    v.doc_freq_.push_back(s.df);
  }
  v.rebuild_index();
  return v;
}

namespace {

// Sorted (index, count) pairs of the in-vocabulary terms of one document.
std::vector<std::pair<std::uint32_t, std::size_t>> count_terms(const TokenSequence& doc,
                                                               const Vocabulary& vocab) {
  std::map<std::uint32_t, std::size_t> counts;
  for (const auto& term : extract_terms(doc.tokens, vocab.analyzer())) {
    if (const auto idx = vocab.index_of(term)) ++counts[static_cast<std::uint32_t>(*idx)];
  }
  return {counts.begin(), counts.end()};
}

}  // namespace

SparseMatrix transform_count(const std::vector<TokenSequence>& docs, const Vocabulary& vocab) {
  SparseMatrix m;
  m.n_cols = vocab.size();
  m.rows.reserve(docs.size());
  for (const auto& doc : docs) {
    SparseVector row;
    for (const auto& [idx, n] : count_terms(doc, vocab)) {
      row.indices.push_back(idx);
      row.values.push_back(static_cast<double>(n));
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

SparseMatrix transform_tfidf(const std::vector<TokenSequence>& docs, const Vocabulary& vocab,
                             bool l2_normalize) {
  const auto n_docs = static_cast<double>(vocab.n_docs_fitted());
  SparseMatrix m;
  m.n_cols = vocab.size();
  m.rows.reserve(docs.size());
  for (const auto& doc : docs) {
    const auto counts = count_terms(doc, vocab);
    std::size_t total = 0;
    for (const auto& [idx, n] : counts) total += n;

    SparseVector row;
    for (const auto& [idx, n] : counts) {
      const double tf = static_cast<double>(n) / static_cast<double>(total);
      const double idf = std::log(n_docs / static_cast<double>(vocab.doc_freq(idx)));
      const double w = tf * idf;
      if (w == 0.0) continue;
      row.indices.push_back(idx);
      row.values.push_back(w);
    }
    if (l2_normalize) {
      double norm = 0.0;
      for (double v : row.values) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > 0.0) {
        for (double& v : row.values) v /= norm;
      }
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

FeatureSpec FeatureSpec::parse(const std::string& name) {
  const auto dash = name.find('-');
  if (dash == std::string::npos) throw UsageError("unknown feature set '" + name + "'");
  FeatureSpec spec;
  const auto weighting = name.substr(0, dash);
  const auto rest = name.substr(dash + 1);
  if (weighting == "count") {
    spec.weighting = Weighting::Count;
  } else if (weighting == "tfidf") {
    spec.weighting = Weighting::Tfidf;
  } else {
    throw UsageError("unknown feature weighting '" + weighting + "' in '" + name + "'");
  }
  if (rest == "ngram") {
    spec.analyzer = Analyzer::word_ngram(kDefaultNgramMin, kDefaultNgramMax);
  } else if (rest == "char") {
    spec.analyzer = Analyzer::char_ngram(kDefaultCharMin, kDefaultCharMax);
  } else {
    spec.analyzer = Analyzer::parse(rest);
  }
  if (spec.analyzer.kind != AnalyzerKind::Word) spec.max_features = kDefaultNgramMaxFeatures;
  return spec;
}

std::string FeatureSpec::name() const {
  return std::string(weighting == Weighting::Count ? "count-" : "tfidf-") + analyzer.name();
}

nlohmann::json FeatureSpec::to_json() const {
  nlohmann::json j = {{"weighting", weighting == Weighting::Count ? "count" : "tfidf"},
                      {"analyzer", analyzer.name()},
                      {"l2_normalize", l2_normalize}};
  j["max_features"] = max_features ? nlohmann::json(*max_features) : nlohmann::json();
  return j;
}

FeatureSpec FeatureSpec::from_json(const nlohmann::json& j) {
  try {
    FeatureSpec spec;
    const auto w = j.at("weighting").get<std::string>();
    if (w != "count" && w != "tfidf") throw ParseError("unknown weighting '" + w + "'");
    spec.weighting = w == "count" ? Weighting::Count : Weighting::Tfidf;
    spec.analyzer = Analyzer::parse(j.at("analyzer").get<std::string>());
    spec.l2_normalize = j.at("l2_normalize").get<bool>();
    if (!j.at("max_features").is_null()) spec.max_features = j["max_features"].get<std::size_t>();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed feature spec: ") + e.what());
  }
}

SparseMatrix vectorize(const std::vector<TokenSequence>& docs, const Vocabulary& vocab,
                       const FeatureSpec& spec) {
  return spec.weighting == Weighting::Count ? transform_count(docs, vocab)
                                            : transform_tfidf(docs, vocab, spec.l2_normalize);
}

}  // namespace opspam
