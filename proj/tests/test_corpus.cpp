#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "opspam/corpus.hpp"
#include "opspam/error.hpp"
#include "opspam/rng.hpp"
#include "support.hpp"

using namespace opspam;
using opspam::test::TempDir;
using opspam::test::write_file;

namespace {

Document make_doc(std::string id, Label label) {
  Document d;
  d.id = std::move(id);
  d.text = "text of " + d.id;
  d.label = label;
  d.source = label == Label::Deceptive ? "MTurk" : "TripAdvisor";
  return d;
}

std::vector<Document> synthetic_docs(std::size_t n_deceptive, std::size_t n_truthful) {
  std::vector<Document> docs;
  for (std::size_t i = 0; i < n_deceptive; ++i) {
    docs.push_back(make_doc("d_x_" + std::to_string(i), Label::Deceptive));
  }
  for (std::size_t i = 0; i < n_truthful; ++i) {
    docs.push_back(make_doc("t_x_" + std::to_string(i), Label::Truthful));
  }
  return docs;
}

std::multiset<std::string> ids(const std::vector<Document>& docs) {
  std::multiset<std::string> out;
  for (const auto& d : docs) out.insert(d.id);
  return out;
}

}  // namespace

TEST_CASE("corpus paths follow the polarity/class/fold layout") {
  const auto p = parse_corpus_path("negative_polarity/deceptive_from_MTurk/fold3/d_hilton_12.txt");
  CHECK(p.polarity == Polarity::Negative);
  CHECK(p.label == Label::Deceptive);
  CHECK(p.source == "MTurk");
  CHECK(p.fold == 3);
  CHECK(p.id == "d_hilton_12");
  CHECK(p.hotel == "hilton");

  const auto q = parse_corpus_path("positive_polarity/truthful_from_TripAdvisor/fold1/t_hard_rock_1.txt");
  CHECK(q.label == Label::Truthful);
  CHECK(q.hotel == "hard_rock");
}

TEST_CASE("malformed corpus paths are rejected with the offending path") {
  for (const char* bad : {"neutral_polarity/deceptive_from_MTurk/fold1/a.txt",
                          "positive_polarity/fake_from_MTurk/fold1/a.txt",
                          "positive_polarity/deceptive_MTurk/fold1/a.txt",
                          "positive_polarity/deceptive_from_MTurk/fold6/a.txt",
                          "positive_polarity/deceptive_from_MTurk/fold1/a.csv",
                          "positive_polarity/deceptive_from_MTurk/a.txt"}) {
    CAPTURE(bad);
    try {
      parse_corpus_path(bad);
      FAIL("accepted a malformed path");
    } catch (const CorpusError& e) {
      CHECK(e.path() == std::filesystem::path(bad).string());
    }
  }
}

TEST_CASE("relative_path inverts parse_corpus_path") {
  Document d = make_doc("d_omni_4", Label::Deceptive);
  d.polarity = Polarity::Negative;
  d.fold = 2;
  const auto p = parse_corpus_path(d.relative_path());
  CHECK(p.id == d.id);
  CHECK(p.label == d.label);
  CHECK(p.polarity == d.polarity);
  CHECK(p.source == d.source);
  CHECK(p.fold == d.fold);
}

TEST_CASE("fixture corpus loads with four equal cells") {
  TempDir dir;
  make_fixture(5, 3, dir.path());
  CHECK(is_fixture(dir.path()));
  const auto docs = load_corpus(dir.path());
  REQUIRE(docs.size() == 20);

  std::map<std::pair<Label, Polarity>, int> cells;
  for (const auto& d : docs) ++cells[{d.label, d.polarity}];
  CHECK(cells.size() == 4);
  for (const auto& [cell, n] : cells) CHECK(n == 5);

  // Lexicographic by relative path.
  for (std::size_t i = 1; i < docs.size(); ++i) {
    CHECK(docs[i - 1].relative_path() < docs[i].relative_path());
  }
  for (const auto& d : docs) {
    CHECK_FALSE(d.text.empty());
    CHECK_FALSE(d.hotel.empty());
    CHECK(d.source == (d.label == Label::Deceptive
                           ? "MTurk"
                           : (d.polarity == Polarity::Positive ? "TripAdvisor" : "Web")));
  }
}

TEST_CASE("fixture generation is deterministic in its seed") {
  TempDir a;
  TempDir b;
  TempDir c;
  make_fixture(4, 11, a.path());
  make_fixture(4, 11, b.path());
  make_fixture(4, 12, c.path());
  const auto da = load_corpus(a.path());
  CHECK(da == load_corpus(b.path()));
  CHECK_FALSE(da == load_corpus(c.path()));
}

TEST_CASE("a missing corpus root is an error naming the path") {
  TempDir dir;
  CHECK_THROWS_AS(load_corpus(dir / "nope"), CorpusError);
  try {
    load_corpus(dir / "nope");
  } catch (const CorpusError& e) {
    CHECK(std::string(e.what()).find("nope") != std::string::npos);
  }
}

TEST_CASE("a root without reviews is an error") {
  TempDir dir;
  CHECK_THROWS_AS(load_corpus(dir.path()), CorpusError);
}

TEST_CASE("empty and blank review files are listed in one error") {
  TempDir dir;
  write_file(dir / "positive_polarity/deceptive_from_MTurk/fold1/d_a_1.txt", "fine review");
  write_file(dir / "positive_polarity/deceptive_from_MTurk/fold1/d_a_2.txt", "");
  write_file(dir / "positive_polarity/truthful_from_TripAdvisor/fold1/t_a_1.txt", " \n\t ");
  try {
    load_corpus(dir.path());
    FAIL("empty files were accepted");
  } catch (const CorpusError& e) {
    const std::string what = e.what();
    CHECK(what.find("d_a_2.txt") != std::string::npos);
    CHECK(what.find("t_a_1.txt") != std::string::npos);
    CHECK(what.find("d_a_1.txt") == std::string::npos);
  }
}

TEST_CASE("invalid UTF-8 is replaced, dotfiles and foreign directories are skipped") {
  TempDir dir;
  write_file(dir / "positive_polarity/deceptive_from_MTurk/fold1/d_a_1.txt", "caf\xE9 ok");
  write_file(dir / "positive_polarity/deceptive_from_MTurk/fold1/.DS_Store", "junk");
  write_file(dir / "positive_polarity/.hidden/whatever.txt", "junk");
  write_file(dir / "README.txt", "not a review");
  write_file(dir / "extras/notes.txt", "not a review");
  const auto docs = load_corpus(dir.path());
  REQUIRE(docs.size() == 1);
  CHECK(docs[0].text == "caf\xEF\xBF\xBD ok");
}

TEST_CASE("a misplaced review file inside a polarity directory is an error") {
  TempDir dir;
  write_file(dir / "positive_polarity/deceptive_from_MTurk/fold1/d_a_1.txt", "text");
  write_file(dir / "positive_polarity/stray.txt", "text");
  CHECK_THROWS_AS(load_corpus(dir.path()), CorpusError);
}

TEST_CASE("split: stratified, disjoint, exhaustive and seeded") {
  // Property: over random class sizes and fractions.
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto nd = 2 + rng.index(40);
    const auto nt = 2 + rng.index(40);
    const double fraction = 0.05 + 0.9 * rng.uniform();
    const auto docs = synthetic_docs(nd, nt);
    const auto seed = rng.next();
    const auto s = split(docs, fraction, seed);
    CAPTURE(nd);
    CAPTURE(nt);
    CAPTURE(fraction);

    // Disjoint and exhaustive.
    auto all = ids(s.train);
    const auto test_ids = ids(s.test);
    for (const auto& id : test_ids) CHECK(all.count(id) == 0);
    all.insert(test_ids.begin(), test_ids.end());
    CHECK(all == ids(docs));

    // Per-class sizes follow round(n * fraction), clamped to keep both parts.
    for (auto [label, n] : {std::pair{Label::Deceptive, nd}, std::pair{Label::Truthful, nt}}) {
      const auto in_train = std::count_if(s.train.begin(), s.train.end(),
                                          [&](const Document& d) { return d.label == label; });
      auto expected = static_cast<long>(std::llround(static_cast<double>(n) * fraction));
      expected = std::clamp<long>(expected, 1, static_cast<long>(n) - 1);
      CHECK(in_train == expected);
    }

    const auto again = split(docs, fraction, seed);
    CHECK(again.train == s.train);
    CHECK(again.test == s.test);
    CHECK(s.seed == seed);
  }
}

TEST_CASE("split of 800/800 at 0.8 gives 640/160 per class") {
  const auto docs = synthetic_docs(800, 800);
  const auto s = split(docs, 0.8, 42);
  CHECK(s.train.size() == 1280);
  CHECK(s.test.size() == 320);
  const auto test_deceptive = std::count_if(s.test.begin(), s.test.end(), [](const Document& d) {
    return d.label == Label::Deceptive;
  });
  CHECK(test_deceptive == 160);
  CHECK_FALSE(split(docs, 0.8, 43).test == s.test);
}

TEST_CASE("split rejects bad fractions and tiny classes") {
  const auto docs = synthetic_docs(5, 5);
  CHECK_THROWS_AS(split(docs, 0.0, 1), UsageError);
  CHECK_THROWS_AS(split(docs, 1.0, 1), UsageError);
  CHECK_THROWS_AS(split(docs, -0.5, 1), UsageError);
  CHECK_THROWS_AS(split(synthetic_docs(1, 5), 0.5, 1), UsageError);
}

TEST_CASE("filter_polarity keeps only the requested half") {
  auto docs = synthetic_docs(4, 4);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    docs[i].polarity = i % 2 ? Polarity::Negative : Polarity::Positive;
  }
  CHECK(filter_polarity(docs, std::nullopt).size() == 8);
  const auto neg = filter_polarity(docs, Polarity::Negative);
  CHECK(neg.size() == 4);
  for (const auto& d : neg) CHECK(d.polarity == Polarity::Negative);
}

TEST_CASE("JSON Lines export has one object per document") {
  auto docs = synthetic_docs(2, 1);
  docs[0].text = "quote \" and\nnewline";
  std::ostringstream out;
  write_jsonl(docs, out);
  std::istringstream in(out.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("id") == docs[n].id);
    CHECK(j.at("text") == docs[n].text);
    CHECK(j.at("label") == docs[n].label_value());
    ++n;
  }
  CHECK(n == docs.size());
}
