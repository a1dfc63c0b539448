#pragma once

#include <filesystem>
#include <istream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace opspam {

struct TokenSequence {
  std::string doc_id;
  std::vector<std::string> tokens;
};

struct PipelineConfig {
  bool lowercase = true;
  bool strip_punct = true;
  bool strip_numeric = true;
  bool remove_stopwords = true;
  bool stem = true;
  std::set<std::string> stopword_list;

  // Linear-model defaults: every stage on, built-in stopword list.
  static PipelineConfig defaults();
  // Neural-model defaults: stemming and stopword removal off.
  static PipelineConfig neural_defaults();

  // Throws UsageError when stopword removal is on with an empty list.
  void validate() const;

  bool operator==(const PipelineConfig&) const = default;
};

// The stopword list compiled from data/stopwords_en.txt.
const std::set<std::string>& builtin_stopwords();
inline constexpr int kStopwordListVersion = 1;

// One token per line; blank lines and '#' comments are skipped.
std::set<std::string> parse_stopwords(std::istream& in);
std::set<std::string> load_stopwords(const std::filesystem::path& path);

// lowercase -> punctuation removal -> numeric-token removal -> whitespace
// tokenization -> stopword removal -> stemming. Only ASCII letters and digits
// count as alphanumeric; every other non-whitespace byte is punctuation.
std::vector<std::string> preprocess(std::string_view text, const PipelineConfig& cfg);
TokenSequence preprocess(const std::string& doc_id, std::string_view text,
                         const PipelineConfig& cfg);

// Porter (1980) suffix-stripping stemmer. Expects a lowercase token.
std::string stem(std::string_view token);

}  // namespace opspam
