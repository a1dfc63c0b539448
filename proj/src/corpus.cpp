#include "opspam/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "opspam/error.hpp"
#include "opspam/rng.hpp"

namespace fs = std::filesystem;

namespace opspam {

const char* to_string(Label label) {
  return label == Label::Deceptive ? "deceptive" : "truthful";
}

const char* to_string(Polarity polarity) {
  return polarity == Polarity::Positive ? "positive" : "negative";
}

fs::path Document::relative_path() const {
  return fs::path(std::string(to_string(polarity)) + "_polarity") /
         (std::string(to_string(label)) + "_from_" + source) /
         ("fold" + std::to_string(fold)) / (id + ".txt");
}

namespace {

bool is_hidden(const fs::path& p) {
  const auto name = p.filename().string();
  return !name.empty() && name.front() == '.';
}

// Invalid UTF-8 sequences are replaced by U+FFFD.
std::string sanitize_utf8(const std::string& in) {
  static const std::string kReplacement = "\xEF\xBF\xBD";
  std::string out;
  out.reserve(in.size());
  std::size_t i = 0;
  while (i < in.size()) {
    const auto c = static_cast<unsigned char>(in[i]);
    std::size_t len = 0;
    if (c < 0x80) {
      len = 1;
    } else if ((c >> 5) == 0x6) {
      len = 2;
    } else if ((c >> 4) == 0xE) {
      len = 3;
    } else if ((c >> 3) == 0x1E) {
      len = 4;
    }
    bool ok = len > 0 && i + len <= in.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      ok = (static_cast<unsigned char>(in[i + k]) >> 6) == 0x2;
    }
    if (ok) {
      out.append(in, i, len);
      i += len;
    } else {
      out += kReplacement;
      i += 1;
    }
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CorpusError(p.string(), "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string hotel_from_id(const std::string& id) {
  // d_<hotel>_<n> / t_<hotel>_<n>; anything else has no hotel.
  const auto first = id.find('_');
  const auto last = id.rfind('_');
  if (first == std::string::npos || last == first) return "";
  return id.substr(first + 1, last - first - 1);
}

}  // namespace

CorpusPath parse_corpus_path(const fs::path& relative) {
  std::vector<std::string> parts;
  for (const auto& part : relative) parts.push_back(part.string());
  const auto fail = [&](const std::string& what) -> CorpusPath {
    throw CorpusError(relative.string(), what);
  };
  if (parts.size() != 4) {
    return fail("expected <polarity>_polarity/<class>_from_<source>/fold<k>/<file>.txt");
  }

  CorpusPath out{};
  if (parts[0] == "positive_polarity") {
    out.polarity = Polarity::Positive;
  } else if (parts[0] == "negative_polarity") {
    out.polarity = Polarity::Negative;
  } else {
    return fail("unknown polarity directory '" + parts[0] + "'");
  }

  const auto sep = parts[1].find("_from_");
  if (sep == std::string::npos || sep + 6 >= parts[1].size()) {
    return fail("class directory '" + parts[1] + "' is not <class>_from_<source>");
  }
  const auto cls = parts[1].substr(0, sep);
  if (cls == "deceptive") {
    out.label = Label::Deceptive;
  } else if (cls == "truthful") {
    out.label = Label::Truthful;
  } else {
    return fail("unknown class '" + cls + "'");
  }
  out.source = parts[1].substr(sep + 6);

  const auto& fold = parts[2];
  if (fold.size() != 5 || fold.rfind("fold", 0) != 0 || fold[4] < '1' ||
      fold[4] > '5') {
    return fail("fold directory '" + fold + "' is not fold1..fold5");
  }
  out.fold = fold[4] - '0';

  const fs::path file(parts[3]);
  if (file.extension() != ".txt" || file.stem().empty()) {
    return fail("review file '" + parts[3] + "' is not <name>.txt");
  }
  out.id = file.stem().string();
  out.hotel = hotel_from_id(out.id);
  return out;
}

std::vector<Document> load_corpus(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw CorpusError(root.string(), "corpus root is not a directory");
  }

  std::vector<fs::path> files;
  for (const auto& top : fs::directory_iterator(root)) {
    if (!top.is_directory() || is_hidden(top.path())) continue;
    const auto name = top.path().filename().string();
    if (name.size() < 9 || name.substr(name.size() - 9) != "_polarity") continue;
    for (auto it = fs::recursive_directory_iterator(top.path());
         it != fs::recursive_directory_iterator(); ++it) {
      if (is_hidden(it->path())) {
        if (it->is_directory()) it.disable_recursion_pending();
        continue;
      }
      if (it->is_regular_file()) files.push_back(fs::relative(it->path(), root));
    }
  }
  std::sort(files.begin(), files.end());

  std::vector<Document> docs;
  docs.reserve(files.size());
  std::vector<std::string> empty;
  for (const auto& rel : files) {
    const auto parsed = parse_corpus_path(rel);
    auto text = sanitize_utf8(read_file(root / rel));
    if (is_blank(text)) {
      empty.push_back(rel.string());
      continue;
    }
    docs.push_back(Document{parsed.id, std::move(text), parsed.label,
                            parsed.polarity, parsed.source, parsed.hotel,
                            parsed.fold});
  }
  if (!empty.empty()) {
    std::string list;
    for (const auto& e : empty) list += (list.empty() ? "" : ", ") + e;
    throw CorpusError(root.string(), "empty review file(s): " + list);
  }
  if (docs.empty()) throw CorpusError(root.string(), "no review files found");
  return docs;
}

CorpusSplit split(const std::vector<Document>& docs, double train_fraction,
                  std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw UsageError("train fraction must lie in (0, 1), got " +
                     std::to_string(train_fraction));
  }
  std::array<std::vector<std::size_t>, 2> by_label;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    by_label[docs[i].label_value()].push_back(i);
  }
  for (const auto& members : by_label) {
    if (members.size() < 2) {
      throw UsageError("split needs at least 2 documents per class");
    }
  }

  Rng rng(seed);
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  for (auto& members : by_label) {
    rng.shuffle(members);
    auto n_train = static_cast<std::size_t>(
        std::llround(static_cast<double>(members.size()) * train_fraction));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + n_train);
    test_idx.insert(test_idx.end(), members.begin() + n_train, members.end());
  }
  rng.shuffle(train_idx);
  rng.shuffle(test_idx);

  CorpusSplit out;
  out.seed = seed;
  out.train_fraction = train_fraction;
  for (auto i : train_idx) out.train.push_back(docs[i]);
  for (auto i : test_idx) out.test.push_back(docs[i]);
  return out;
}

std::vector<Document> filter_polarity(const std::vector<Document>& docs,
                                      std::optional<Polarity> polarity) {
  if (!polarity) return docs;
  std::vector<Document> out;
  std::copy_if(docs.begin(), docs.end(), std::back_inserter(out),
               [&](const Document& d) { return d.polarity == *polarity; });
  return out;
}

bool is_fixture(const fs::path& root) {
  std::error_code ec;
  return fs::exists(root / kFixtureMarker, ec);
}

namespace {

// Word pools for the synthetic corpus. The marker pools carry the class
// signal; everything else is shared.
const std::vector<std::string> kDeceptiveWords = {
    "my",        "husband",  "family",   "vacation", "experience", "luxury",
    "chicago",   "amazing",  "definitely", "recommend", "wonderful", "visit",
    "excited",   "trip",     "weekend",  "business", "anniversary", "celebrate",
    "absolutely", "pampered", "elegant",  "honeymoon", "dream",     "stunning",
};
const std::vector<std::string> kTruthfulWords = {
    "location", "floor",    "bathroom", "small",   "street",   "walk",
    "block",    "lobby",    "view",     "price",   "desk",     "elevator",
    "breakfast", "parking", "shower",   "bed",     "michigan", "avenue",
    "area",     "window",   "corner",   "rate",    "checkin",  "downtown",
};
const std::vector<std::string> kPositiveWords = {
    "great", "clean", "friendly", "comfortable", "helpful", "beautiful",
    "perfect", "lovely", "spacious", "quiet",
};
const std::vector<std::string> kNegativeWords = {
    "dirty", "rude", "noisy", "terrible", "broken", "disappointing",
    "awful", "worst", "cramped", "stained",
};
const std::vector<std::string> kCommonWords = {
    "the",   "room",  "was",   "and",   "we",    "a",     "to",    "of",
    "in",    "it",    "staff", "service", "with", "for",  "very",  "at",
    "our",   "they",  "that",  "this",  "there", "were",  "had",   "on",
    "hotel", "stay",  "night", "again", "would", "but",   "is",    "i",
    "us",    "when",  "also",  "told",  "asked", "got",   "room's", "didn't",
};
const std::vector<std::string> kHotels = {
    "affinia",   "allegro", "amalfi",  "ambassador", "conrad",
    "fairmont",  "hardrock", "hilton", "homewood",   "hyatt",
    "intercontinental", "james", "knickerbocker", "monaco", "omni",
    "palmer",    "sheraton", "sofitel", "swissotel", "talbott",
};

const std::string& pick(Rng& rng, const std::vector<std::string>& pool) {
  return pool[rng.index(pool.size())];
}

std::string fixture_review(Rng& rng, Label label, Polarity polarity) {
  const auto& own = label == Label::Deceptive ? kDeceptiveWords : kTruthfulWords;
  const auto& other = label == Label::Deceptive ? kTruthfulWords : kDeceptiveWords;
  const auto& tone = polarity == Polarity::Positive ? kPositiveWords : kNegativeWords;

  std::string text;
  const auto n_sentences = 3 + rng.index(4);
  for (std::size_t s = 0; s < n_sentences; ++s) {
    const auto n_words = 6 + rng.index(9);
    std::string sentence;
    for (std::size_t w = 0; w < n_words; ++w) {
      const double u = rng.uniform();
      std::string word;
      if (u < 0.55) {
        word = pick(rng, kCommonWords);
      } else if (u < 0.77) {
        word = pick(rng, own);
      } else if (u < 0.82) {
        word = pick(rng, other);
      } else if (u < 0.97) {
        word = pick(rng, tone);
      } else {
        word = std::to_string(1 + rng.index(30));
      }
      if (w == 0) word[0] = static_cast<char>(std::toupper(word[0]));
      sentence += (w == 0 ? "" : " ") + word;
    }
    sentence += rng.bernoulli(0.2) ? "!" : ".";
    text += (s == 0 ? "" : " ") + sentence;
  }
  return text + "\n";
}

}  // namespace

fs::path make_fixture(int n_per_cell, std::uint64_t seed, const fs::path& out_dir) {
  if (n_per_cell < 1) throw UsageError("fixture needs n_per_cell >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw CorpusError(out_dir.string(), "cannot create directory: " + ec.message());

  Rng rng(seed);
  for (auto polarity : {Polarity::Negative, Polarity::Positive}) {
    for (auto label : {Label::Deceptive, Label::Truthful}) {
      Document doc;
      doc.polarity = polarity;
      doc.label = label;
      doc.source = label == Label::Deceptive
                       ? "MTurk"
                       : (polarity == Polarity::Positive ? "TripAdvisor" : "Web");
      std::map<std::string, int> per_hotel;
      for (int i = 0; i < n_per_cell; ++i) {
        doc.hotel = kHotels[static_cast<std::size_t>(i) % kHotels.size()];
        doc.fold = i % 5 + 1;
        doc.id = std::string(label == Label::Deceptive ? "d_" : "t_") + doc.hotel +
                 "_" + std::to_string(++per_hotel[doc.hotel]);
        const auto path = out_dir / doc.relative_path();
        fs::create_directories(path.parent_path(), ec);
        std::ofstream out(path, std::ios::binary);
        if (!out) throw CorpusError(path.string(), "cannot write fixture file");
        out << fixture_review(rng, label, polarity);
      }
    }
  }
  std::ofstream marker(out_dir / kFixtureMarker);
  marker << "synthetic corpus, seed " << seed << ", " << n_per_cell << " per cell\n";
  if (!marker) throw CorpusError(out_dir.string(), "cannot write fixture marker");
  return out_dir;
}

void write_fixture_embeddings(int dim, std::uint64_t seed, const fs::path& path) {
  if (dim < 1) throw UsageError("embedding dim must be >= 1");
  Rng rng(seed);
  std::vector<double> direction(static_cast<std::size_t>(dim));
  double norm = 0.0;
  for (auto& v : direction) {
    v = rng.uniform(-1.0, 1.0);
    norm += v * v;
  }
  for (auto& v : direction) v /= std::sqrt(norm);

  std::ofstream out(path);
  if (!out) throw CorpusError(path.string(), "cannot write embedding file");
  out << std::fixed << std::setprecision(6);
  std::vector<std::string> seen;
  const auto emit = [&](const std::string& raw, double bias) {
    std::string word;
    for (char c : raw) {
      if (std::isalnum(static_cast<unsigned char>(c))) word += c;
    }
    if (std::find(seen.begin(), seen.end(), word) != seen.end()) return;
    seen.push_back(word);
    out << word;
    for (int k = 0; k < dim; ++k) {
      out << ' ' << rng.uniform(-0.5, 0.5) + bias * direction[static_cast<std::size_t>(k)];
    }
    out << '\n';
  };
  for (const auto& w : kDeceptiveWords) emit(w, 1.0);
  for (const auto& w : kTruthfulWords) emit(w, -1.0);
  for (const auto& w : kPositiveWords) emit(w, 0.0);
  for (const auto& w : kNegativeWords) emit(w, 0.0);
  for (const auto& w : kCommonWords) emit(w, 0.0);
  if (!out) throw CorpusError(path.string(), "write failed");
}

void write_jsonl(const std::vector<Document>& docs, std::ostream& out) {
  for (const auto& d : docs) {
    nlohmann::json j = {{"id", d.id},
                        {"text", d.text},
                        {"label", d.label_value()},
                        {"polarity", to_string(d.polarity)},
                        {"source", d.source},
                        {"hotel", d.hotel},
                        {"fold", d.fold}};
    out << j.dump() << '\n';
  }
}

}  // namespace opspam
