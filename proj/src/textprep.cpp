#include "opspam/textprep.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "opspam/error.hpp"

namespace opspam {

namespace detail {
extern const char* const kBuiltinStopwords;
}

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig cfg;
  cfg.stopword_list = builtin_stopwords();
  return cfg;
}

PipelineConfig PipelineConfig::neural_defaults() {
  PipelineConfig cfg = defaults();
  cfg.remove_stopwords = false;
  cfg.stem = false;
  return cfg;
}

void PipelineConfig::validate() const {
  if (remove_stopwords && stopword_list.empty()) {
    throw UsageError("stopword removal is enabled but the stopword list is empty");
  }
}

std::set<std::string> parse_stopwords(std::istream& in) {
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    std::string word;
    if (fields >> word) out.insert(word);
  }
  return out;
}

std::set<std::string> load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open stopword file " + path.string());
  return parse_stopwords(in);
}

const std::set<std::string>& builtin_stopwords() {
  static const std::set<std::string> words = [] {
    std::istringstream in(detail::kBuiltinStopwords);
    return parse_stopwords(in);
  }();
  return words;
}

namespace {

bool is_ascii_alnum(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

std::vector<std::string> preprocess(std::string_view text, const PipelineConfig& cfg) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (cfg.strip_punct && !is_space(c) && !is_ascii_alnum(c)) continue;
    cleaned += (cfg.lowercase && c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a')
                                                        : ch;
  }

  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && is_space(static_cast<unsigned char>(cleaned[i]))) ++i;
    const auto start = i;
    while (i < cleaned.size() && !is_space(static_cast<unsigned char>(cleaned[i]))) ++i;
    if (i == start) continue;
    std::string token = cleaned.substr(start, i - start);
    if (cfg.strip_numeric &&
        std::any_of(token.begin(), token.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      continue;
    }
    if (cfg.remove_stopwords && cfg.stopword_list.count(token) != 0) continue;
    if (cfg.stem) token = stem(token);
    if (!token.empty()) tokens.push_back(std::move(token));
  }
  return tokens;
}

TokenSequence preprocess(const std::string& doc_id, std::string_view text,
                         const PipelineConfig& cfg) {
  return TokenSequence{doc_id, preprocess(text, cfg)};
}

}  // namespace opspam
