#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "opspam/textprep.hpp"

namespace opspam {

enum class AnalyzerKind { Word, WordNgram, CharNgram };

// How documents are cut into terms. Word ignores the n range.
struct Analyzer {
  AnalyzerKind kind = AnalyzerKind::Word;
  int min_n = 1;
  int max_n = 1;

  static Analyzer word() { return {}; }
  static Analyzer word_ngram(int min_n, int max_n);
  static Analyzer char_ngram(int min_n, int max_n);

  // "word", "word-ngram(2,3)", "char-ngram(2,5)"
  std::string name() const;
  static Analyzer parse(const std::string& name);

  bool operator==(const Analyzer&) const = default;
};

// Terms of one document in occurrence order (duplicates kept).
std::vector<std::string> extract_terms(const std::vector<std::string>& tokens,
                                       const Analyzer& analyzer);

struct SparseVector {
  std::vector<std::uint32_t> indices;  // strictly increasing
  std::vector<double> values;          // no stored zeros

  std::size_t nnz() const { return indices.size(); }
  double dot(std::span<const double> dense) const;
  double sum() const;
  bool operator==(const SparseVector&) const = default;
};

struct SparseMatrix {
  std::vector<SparseVector> rows;
  std::size_t n_cols = 0;

  std::size_t n_rows() const { return rows.size(); }
  bool operator==(const SparseMatrix&) const = default;
};

class Vocabulary {
 public:
  Vocabulary() = default;

  std::size_t size() const { return terms_.size(); }
  const Analyzer& analyzer() const { return analyzer_; }
  std::optional<std::size_t> max_features() const { return max_features_; }
  std::size_t n_docs_fitted() const { return n_docs_fitted_; }

  std::optional<std::size_t> index_of(const std::string& term) const;
  const std::string& term(std::size_t index) const { return terms_.at(index); }
  std::size_t doc_freq(std::size_t index) const { return doc_freq_.at(index); }
  std::size_t doc_freq(const std::string& term) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  // FNV-1a over analyzer, n_docs_fitted and the (term, df) list.
  std::uint64_t content_hash() const;

  friend Vocabulary fit_vocabulary(const std::vector<TokenSequence>& docs,
                                   const Analyzer& analyzer,
                                   std::optional<std::size_t> max_features);

 private:
  void rebuild_index();

  Analyzer analyzer_;
  std::optional<std::size_t> max_features_;
  std::size_t n_docs_fitted_ = 0;
  std::vector<std::string> terms_;
  std::vector<std::size_t> doc_freq_;
  std::unordered_map<std::string, std::size_t> term_to_index_;
};

inline constexpr int kVocabularyFormatVersion = 1;

// Keeps the max_features terms with the highest corpus frequency (ties broken
// lexicographically); the retained terms are indexed in lexicographic order.
Vocabulary fit_vocabulary(const std::vector<TokenSequence>& docs, const Analyzer& analyzer,
                          std::optional<std::size_t> max_features = std::nullopt);

SparseMatrix transform_count(const std::vector<TokenSequence>& docs, const Vocabulary& vocab);

// tfidf(t, d) = n(t,d) / sum_k n(k,d) * ln(|D| / df(t)), with |D| and df
// taken from fit time and the tf denominator counting in-vocabulary terms
// only. Optionally L2-normalizes each row afterwards.
SparseMatrix transform_tfidf(const std::vector<TokenSequence>& docs, const Vocabulary& vocab,
                             bool l2_normalize = false);

enum class Weighting { Count, Tfidf };

// Everything needed to turn token sequences into a feature matrix.
struct FeatureSpec {
  Weighting weighting = Weighting::Tfidf;
  Analyzer analyzer;
  std::optional<std::size_t> max_features;
  bool l2_normalize = false;

  // "count-word", "tfidf-word", "tfidf-ngram", "tfidf-char", "count-ngram",
  // "count-char" with the default n ranges and caps.
  static FeatureSpec parse(const std::string& name);
  std::string name() const;

  nlohmann::json to_json() const;
  static FeatureSpec from_json(const nlohmann::json& j);
};

inline constexpr int kDefaultNgramMin = 2;
inline constexpr int kDefaultNgramMax = 3;
inline constexpr int kDefaultCharMin = 2;
inline constexpr int kDefaultCharMax = 5;
inline constexpr std::size_t kDefaultNgramMaxFeatures = 10000;

SparseMatrix vectorize(const std::vector<TokenSequence>& docs, const Vocabulary& vocab,
                       const FeatureSpec& spec);

std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace opspam
