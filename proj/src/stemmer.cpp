// Porter, "An algorithm for suffix stripping" (1980), original rule set.

#include <array>
#include <string>
#include <string_view>
#include <utility>

#include "opspam/textprep.hpp"

namespace opspam {
namespace {

bool is_consonant(std::string_view w, std::size_t i) {
  switch (w[i]) {
    case 'a':
    case 'e':
    case 'i':
    case 'o':
    case 'u':
      return false;
    case 'y':
      return i == 0 || !is_consonant(w, i - 1);
    default:
      return true;
  }
}

// m in [C](VC)^m[V].
int measure(std::string_view stem) {
  int m = 0;
  std::size_t i = 0;
  const std::size_t n = stem.size();
  while (i < n && is_consonant(stem, i)) ++i;
  while (i < n) {
    while (i < n && !is_consonant(stem, i)) ++i;
    if (i >= n) break;
    while (i < n && is_consonant(stem, i)) ++i;
    ++m;
  }
  return m;
}

bool has_vowel(std::string_view stem) {
  for (std::size_t i = 0; i < stem.size(); ++i) {
    if (!is_consonant(stem, i)) return true;
  }
  return false;
}

bool ends_double_consonant(std::string_view w) {
  const auto n = w.size();
  return n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1);
}

// *o: stem ends consonant-vowel-consonant, the last not w, x or y.
bool ends_cvc(std::string_view w) {
  const auto n = w.size();
  if (n < 3) return false;
  if (!is_consonant(w, n - 3) || is_consonant(w, n - 2) || !is_consonant(w, n - 1)) {
    return false;
  }
  const char c = w[n - 1];
  return c != 'w' && c != 'x' && c != 'y';
}

bool ends_with(std::string_view w, std::string_view suffix) {
  return w.size() >= suffix.size() && w.substr(w.size() - suffix.size()) == suffix;
}

using Rule = std::pair<std::string_view, std::string_view>;

// Applies the first rule whose suffix matches if the stem measure exceeds
// min_m. Rule lists are ordered so the first match is the longest match.
template <std::size_t N>
void apply_rules(std::string& w, const std::array<Rule, N>& rules, int min_m) {
  for (const auto& [suffix, replacement] : rules) {
    if (!ends_with(w, suffix)) continue;
    const auto stem = std::string_view(w).substr(0, w.size() - suffix.size());
    if (measure(stem) > min_m) w = std::string(stem) + std::string(replacement);
    return;
  }
}

void step1a(std::string& w) {
  if (ends_with(w, "sses") || ends_with(w, "ies")) {
    w.resize(w.size() - 2);
  } else if (ends_with(w, "ss")) {
    // unchanged
  } else if (ends_with(w, "s") && w.size() > 1) {
    // A bare "s" would otherwise stem to the empty string.
    w.pop_back();
  }
}

void step1b(std::string& w) {
  if (ends_with(w, "eed")) {
    if (measure(std::string_view(w).substr(0, w.size() - 3)) > 0) w.pop_back();
    return;
  }
  std::size_t cut = 0;
  if (ends_with(w, "ed")) {
    cut = 2;
  } else if (ends_with(w, "ing")) {
    cut = 3;
  } else {
    return;
  }
  if (!has_vowel(std::string_view(w).substr(0, w.size() - cut))) return;
  w.resize(w.size() - cut);

  if (ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz")) {
    w += 'e';
  } else if (ends_double_consonant(w) && w.back() != 'l' && w.back() != 's' &&
             w.back() != 'z') {
    w.pop_back();
  } else if (measure(w) == 1 && ends_cvc(w)) {
    w += 'e';
  }
}

void step1c(std::string& w) {
  if (ends_with(w, "y") && has_vowel(std::string_view(w).substr(0, w.size() - 1))) {
    w.back() = 'i';
  }
}

void step2(std::string& w) {
  static constexpr std::array<Rule, 20> kRules = {{
      {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},  {"anci", "ance"},
      {"izer", "ize"},    {"abli", "able"},   {"alli", "al"},    {"entli", "ent"},
      {"eli", "e"},       {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
      {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"}, {"fulness", "ful"},
      {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},  {"biliti", "ble"},
  }};
  apply_rules(w, kRules, 0);
}

void step3(std::string& w) {
  static constexpr std::array<Rule, 7> kRules = {{
      {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
      {"ical", "ic"},  {"ful", ""},   {"ness", ""},
  }};
  apply_rules(w, kRules, 0);
}

void step4(std::string& w) {
  static constexpr std::array<std::string_view, 19> kSuffixes = {
      "al",  "ance", "ence", "er",  "ic",  "able", "ible", "ant", "ement", "ment",
      "ent", "ion",  "ou",   "ism", "ate", "iti",  "ous",  "ive", "ize",
  };
  for (auto suffix : kSuffixes) {
    if (!ends_with(w, suffix)) continue;
    const auto stem = std::string_view(w).substr(0, w.size() - suffix.size());
    bool ok = measure(stem) > 1;
    if (suffix == "ion") ok = ok && !stem.empty() && (stem.back() == 's' || stem.back() == 't');
    if (ok) w.resize(stem.size());
    return;
  }
}

void step5(std::string& w) {
  if (ends_with(w, "e")) {
    const auto stem = std::string_view(w).substr(0, w.size() - 1);
    const int m = measure(stem);
    if (m > 1 || (m == 1 && !ends_cvc(stem))) w.pop_back();
  }
  if (measure(w) > 1 && ends_double_consonant(w) && w.back() == 'l') w.pop_back();
}

}  // namespace

std::string stem(std::string_view token) {
  std::string w(token);
  if (w.empty()) return w;
  step1a(w);
  step1b(w);
  step1c(w);
  step2(w);
  step3(w);
  step4(w);
  step5(w);
  return w;
}

}  // namespace opspam
