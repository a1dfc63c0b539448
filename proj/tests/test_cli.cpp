#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "opspam/cli.hpp"
#include "opspam/corpus.hpp"
#include "support.hpp"

using namespace opspam;
using opspam::test::read_file;
using opspam::test::TempDir;
using opspam::test::write_file;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// A small fixture corpus with matching embeddings, shared by the tests.
class Workspace {
 public:
  Workspace() {
    corpus_ = dir_ / "corpus";
    const auto r = run({"fixture", "--out", corpus_.string(), "-n", "20", "--seed", "5",
                        "--embeddings", (dir_ / "emb.txt").string(), "--dim", "8"});
    REQUIRE(r.code == kExitOk);
  }
  std::string corpus() const { return corpus_.string(); }
  std::string embeddings() const { return (dir_ / "emb.txt").string(); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

 private:
  TempDir dir_;
  std::filesystem::path corpus_;
};

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"train", "--bogus"}).code == kExitUsage);
  CHECK(run({"gradcheck", "transformer"}).code == kExitUsage);
  CHECK(run({"reproduce", "9"}).code == kExitUsage);
  CHECK(run({"train", "--model", "gpt", "--corpus", "/tmp"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("corpus-stats on a fixture and on a missing directory") {
  TempDir dir;
  REQUIRE(run({"fixture", "--out", (dir / "c").string(), "-n", "5"}).code == kExitOk);
  const auto r = run({"corpus-stats", (dir / "c").string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("documents: 20") != std::string::npos);
  std::size_t cells = 0;
  std::istringstream lines(r.out);
  std::string line;
  while (std::getline(lines, line)) {
    if ((line.rfind("deceptive", 0) == 0 || line.rfind("truthful", 0) == 0) &&
        line.find(" 5") != std::string::npos) {
      ++cells;
    }
  }
  CHECK(cells == 4);

  const auto missing = run({"corpus-stats", (dir / "nope").string()});
  CHECK(missing.code != kExitOk);
  CHECK(missing.err.find("nope") != std::string::npos);
}

TEST_CASE("train, evaluate and predict agree; runs are byte-identical") {
  Workspace ws;
  const auto a = run({"train", "--corpus", ws.corpus(), "--model", "mnb", "--out", ws.path("a")});
  REQUIRE(a.code == kExitOk);
  const auto b = run({"train", "--corpus", ws.corpus(), "--model", "mnb", "--out", ws.path("b")});
  REQUIRE(b.code == kExitOk);
  CHECK(a.out == b.out);
  for (const char* f : {"model.json", "vocab.json", "report.json"}) {
    CAPTURE(f);
    CHECK(read_file(ws.path("a") + "/" + f) == read_file(ws.path("b") + "/" + f));
  }

  const auto model = ws.path("a") + "/model.json";
  const auto ev = run({"evaluate", model, "--corpus", ws.corpus(), "--report", ws.path("ev.json")});
  REQUIRE(ev.code == kExitOk);
  const auto trained = nlohmann::json::parse(read_file(ws.path("a") + "/report.json"));
  const auto evaluated = nlohmann::json::parse(read_file(ws.path("ev.json")));
  CHECK(evaluated.at("accuracy") == trained.at("accuracy"));
  CHECK(evaluated.at("auc") == trained.at("auc"));
  CHECK(evaluated.at("accuracy").get<double>() > 0.9);

  const auto pr = run({"predict", model, "--text", "a lovely stay", "--text", ""});
  CHECK(pr.code == kExitOk);
  std::istringstream lines(pr.out);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    CHECK((line.rfind("deceptive\t", 0) == 0 || line.rfind("truthful\t", 0) == 0));
    ++n;
  }
  CHECK(n == 2);
  CHECK_FALSE(pr.err.empty());  // the empty input is reported
}

TEST_CASE("the other linear models train from the command line") {
  Workspace ws;
  for (const char* m : {"lr", "sgd", "svm"}) {
    CAPTURE(m);
    const auto r = run({"train", "--corpus", ws.corpus(), "--model", m, "--features", "tfidf-ngram",
                        "--out", ws.path(m)});
    CHECK(r.code == kExitOk);
  }
}

TEST_CASE("a corrupted model file is a runtime error") {
  Workspace ws;
  REQUIRE(run({"train", "--corpus", ws.corpus(), "--out", ws.path("m")}).code == kExitOk);
  const auto model = ws.path("m") + "/model.json";
  write_file(model, read_file(model).substr(0, 100));
  CHECK(run({"predict", model, "--text", "hello"}).code == kExitRuntime);

  // A vocabulary that no longer matches its recorded hash.
  REQUIRE(run({"train", "--corpus", ws.corpus(), "--out", ws.path("v")}).code == kExitOk);
  const auto vocab_path = ws.path("v") + "/vocab.json";
  auto vocab = nlohmann::json::parse(read_file(vocab_path));
  vocab["n_docs_fitted"] = vocab["n_docs_fitted"].get<int>() + 1;
  write_file(vocab_path, vocab.dump());
  CHECK(run({"predict", ws.path("v") + "/model.json", "--text", "hello"}).code == kExitRuntime);
}

TEST_CASE("a neural model trains, reloads and explains itself") {
  Workspace ws;
  const auto t = run({"train", "--corpus", ws.corpus(), "--model", "bilstm-attn", "--embeddings",
                      ws.embeddings(), "--out", ws.path("n"), "--set", "neural.epochs=2", "--set",
                      "neural.hidden_dim=4", "--set", "neural.max_len=30"});
  REQUIRE(t.code == kExitOk);
  CHECK(t.out.find("train accuracy") != std::string::npos);
  const auto model = ws.path("n") + "/model.json";
  const auto ev = run({"evaluate", model, "--corpus", ws.corpus(), "--report", ws.path("r.json")});
  REQUIRE(ev.code == kExitOk);
  const auto trained = nlohmann::json::parse(read_file(ws.path("n") + "/report.json"));
  const auto evaluated = nlohmann::json::parse(read_file(ws.path("r.json")));
  CHECK(evaluated.at("accuracy") == trained.at("accuracy"));

  const auto ex = run({"explain", model, "--text", "the room was lovely"});
  CHECK(ex.code == kExitOk);
  CHECK(ex.out.find("room") != std::string::npos);
  const auto pr = run({"predict", model, "--text", "the room was lovely"});
  CHECK(pr.out.find("attention") != std::string::npos);

  // Frozen embeddings are checked against the recorded hash.
  write_file(ws.embeddings(), read_file(ws.embeddings()) + "zzz 0 0 0 0 0 0 0 0\n");
  CHECK(run({"predict", model, "--text", "hello"}).code == kExitRuntime);
}

TEST_CASE("gradcheck command") {
  for (const char* arch : {"cnn", "lstm", "bilstm", "rcnn", "bilstm-attn"}) {
    CAPTURE(arch);
    const auto r = run({"gradcheck", arch});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("PASS") != std::string::npos);
  }
  CHECK(run({"gradcheck", "lstm", "--corrupt-gradient"}).code == kExitRuntime);
}

TEST_CASE("reproduce refuses a fixture corpus") {
  TempDir dir;
  REQUIRE(run({"fixture", "--out", (dir / "c").string(), "-n", "5"}).code == kExitOk);
  const auto r = run({"reproduce", "1", "--corpus", (dir / "c").string()});
  CHECK(r.code != kExitOk);
  CHECK(r.err.find("fixture") != std::string::npos);
}

TEST_CASE("reproduce runs a linear table on a fixture when allowed") {
  TempDir dir;
  REQUIRE(run({"fixture", "--out", (dir / "c").string(), "-n", "20"}).code == kExitOk);
  const auto r = run({"reproduce", "1", "--corpus", (dir / "c").string(), "--allow-fixture",
                      "--seeds", "42,43", "--rows", "MultinomialNB", "--out",
                      (dir / "out").string()});
  CHECK(r.code != kExitUsage);
  CHECK(r.out.find("MultinomialNB") != std::string::npos);
}
