#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace opspam {

enum class Label : int { Truthful = 0, Deceptive = 1 };
enum class Polarity { Positive, Negative };

const char* to_string(Label label);
const char* to_string(Polarity polarity);

// One review of the Deceptive Opinion Spam Corpus.
struct Document {
  std::string id;  // file stem, e.g. "d_hilton_3"
  std::string text;
  Label label = Label::Truthful;
  Polarity polarity = Polarity::Positive;
  std::string source;  // "MTurk", "TripAdvisor", "Web", ...
  std::string hotel;
  int fold = 1;  // 1..5

  int label_value() const { return static_cast<int>(label); }

  // Path relative to the corpus root:
  // <polarity>_polarity/<class>_from_<source>/fold<k>/<id>.txt
  std::filesystem::path relative_path() const;

  bool operator==(const Document&) const = default;
};

struct CorpusSplit {
  std::vector<Document> train;
  std::vector<Document> test;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
};

// Parsed components of a corpus-relative path; throws CorpusError when the
// path does not follow the layout.
struct CorpusPath {
  Polarity polarity;
  Label label;
  std::string source;
  int fold;
  std::string id;
  std::string hotel;
};
CorpusPath parse_corpus_path(const std::filesystem::path& relative);

// Loads every review below `root`. Documents are ordered lexicographically by
// relative path. Top-level entries not named *_polarity are ignored, as are
// dotfiles anywhere in the tree.
std::vector<Document> load_corpus(const std::filesystem::path& root);

// Stratified split: each label is shuffled with the seeded generator and cut
// at round(n_label * train_fraction); the two partitions are then shuffled.
CorpusSplit split(const std::vector<Document>& docs, double train_fraction,
                  std::uint64_t seed);

std::vector<Document> filter_polarity(const std::vector<Document>& docs,
                                      std::optional<Polarity> polarity);

// Name of the marker file make_fixture drops into the corpus root.
inline constexpr const char* kFixtureMarker = ".opspam_fixture";

bool is_fixture(const std::filesystem::path& root);

// Writes a synthetic corpus in the Ott layout with n_per_cell reviews per
// (polarity, label) cell. Deceptive and truthful reviews are sampled from two
// different word distributions, so the classes are separable.
std::filesystem::path make_fixture(int n_per_cell, std::uint64_t seed,
                                   const std::filesystem::path& out_dir);

// Writes a text-format embedding file covering the fixture vocabulary. Class
// marker words get vectors biased along a shared direction so that sequence
// models have signal to learn from.
void write_fixture_embeddings(int dim, std::uint64_t seed,
                              const std::filesystem::path& path);

// JSON Lines export: {id, text, label, polarity, source, hotel, fold}.
void write_jsonl(const std::vector<Document>& docs, std::ostream& out);

}  // namespace opspam
