// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion.
//
//   opspam_acceptance offline   criteria 5-9 (synthetic data only)
//   opspam_acceptance corpus    criteria 1-4 (needs OPSPAM_CORPUS, and
//                               OPSPAM_GLOVE_DIR for the neural table)
//
// Exit status: 0 all run criteria passed, 1 a criterion failed, 77 nothing
// could run.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "opspam/cli.hpp"
#include "opspam/config.hpp"
#include "opspam/corpus.hpp"
#include "opspam/features.hpp"
#include "opspam/linear_models.hpp"
#include "opspam/metrics.hpp"
#include "opspam/neural.hpp"
#include "opspam/pipeline.hpp"
#include "opspam/reproduce.hpp"
#include "opspam/rng.hpp"

namespace fs = std::filesystem;
using namespace opspam;

namespace {

// Tolerances and budgets.
constexpr double kTable1AccLo = 0.86, kTable1AccHi = 0.94;
constexpr double kTable1F1Lo = 0.84, kTable1F1Hi = 0.94;
constexpr double kTable1Seconds = 60.0;
constexpr double kOrderingNoise = 0.01;  // SGD >= LR - noise
constexpr double kSvmRecallMin = 0.9, kSvmAccMax = 0.75;
constexpr double kMnbNgramAcc = 0.845, kMnbNgramAuc = 0.918;
constexpr double kLrCharAcc = 0.8225, kLrCharAuc = 0.916;
constexpr double kTable3AccTol = 0.05, kTable3AucTol = 0.03;
constexpr double kAttentionAccMin = 0.80;
constexpr int kAttentionMinWins = 4;
constexpr double kTable2Seconds = 30.0 * 60.0;
constexpr double kGradcheckSeconds = 120.0;
constexpr double kTfidfTol = 1e-12;
constexpr double kAucTol = 1e-12;
constexpr int kAucCases = 1000;
constexpr double kReferenceP = 0.9325, kReferenceR = 0.8601, kReferenceF1 = 0.8948;
constexpr double kFixtureAccMin = 0.9;
constexpr double kFixtureSeconds = 10.0;

int failures = 0;
int ran = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
  ++ran;
  if (!ok) ++failures;
  std::cout << "criterion " << id << ": " << (ok ? "PASS" : "FAIL") << "  " << what << "  ["
            << detail << "]" << std::endl;
}

void skip(int id, const std::string& what, const std::string& why) {
  std::cout << "criterion " << id << ": SKIP  " << what << "  [" << why << "]" << std::endl;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("opspam_acceptance_" + tag + "_" +
                                         std::to_string(std::random_device{}()));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- criterion 5 -----------------------------------------------------------

void gradient_suite() {
  Stopwatch clock;
  Rng rng(1);
  std::vector<std::string> tokens;
  std::vector<double> values;
  for (int i = 0; i < 12; ++i) {
    tokens.push_back("t" + std::to_string(i));
    for (int k = 0; k < 5; ++k) values.push_back(rng.uniform(-1, 1));
  }
  const auto table = std::make_shared<const EmbeddingTable>(tokens, values, 5);
  double worst = 0.0;
  std::string detail;
  for (auto arch : {Architecture::Cnn, Architecture::Lstm, Architecture::BiLstm,
                    Architecture::RecurrentCnn, Architecture::BiLstmAttention}) {
    ModelSpec spec;
    spec.architecture = arch;
    spec.hidden_dim = 4;
    spec.filters = 3;
    spec.filter_widths = {2, 3};
    spec.max_len = 6;
    spec.dropout = 0.0;
    spec.doc_input_dim = arch == Architecture::RecurrentCnn ? 6 : 0;
    spec.doc_feature_dim = 3;
    spec.trainable_embeddings = true;
    const NeuralModel model(spec, table, 7);

    EncodedBatch batch;
    batch.max_len = spec.max_len;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto len = i == 0 ? spec.max_len : 1 + rng.index(spec.max_len);
      for (std::size_t t = 0; t < spec.max_len; ++t) {
        batch.indices.push_back(t < len ? static_cast<std::uint32_t>(1 + rng.index(13)) : 0U);
      }
      batch.lengths.push_back(len);
      batch.labels.push_back(static_cast<int>(i % 2));
    }
    batch.doc_feature_dim = spec.doc_input_dim;
    for (std::size_t k = 0; k < 4 * spec.doc_input_dim; ++k) batch.doc_features.push_back(rng.uniform());

    const auto r = gradient_check(model, batch, kGradCheckEpsilon);
    worst = std::max(worst, r.max_rel_error);
    std::ostringstream s;
    s << to_string(arch) << " " << std::scientific << std::setprecision(1) << r.max_rel_error;
    detail += (detail.empty() ? "" : ", ") + s.str();
  }
  const double secs = clock.seconds();
  report(5, worst <= kGradCheckTolerance && secs < kGradcheckSeconds,
         "gradient check, all architectures, rel. err <= 1e-3 at eps 1e-4",
         detail + "; " + fmt(secs, 1) + " s");
}

// ---- criterion 6 -----------------------------------------------------------

std::vector<std::string> oracle_terms(const std::vector<std::string>& tokens, const Analyzer& a) {
  if (a.kind == AnalyzerKind::Word) return tokens;
  std::vector<std::string> out;
  if (a.kind == AnalyzerKind::WordNgram) {
    for (int n = a.min_n; n <= a.max_n; ++n) {
      for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string g = tokens[i];
        for (int k = 1; k < n; ++k) g += " " + tokens[i + k];
        out.push_back(g);
      }
    }
    return out;
  }
  std::string s;
  for (const auto& t : tokens) s += (s.empty() ? "" : " ") + t;
  for (int n = a.min_n; n <= a.max_n; ++n) {
    for (std::size_t i = 0; i + n <= s.size(); ++i) out.push_back(s.substr(i, n));
  }
  return out;
}

double tfidf_max_error() {
  Rng rng(2024);
  double worst = 0.0;
  const std::vector<Analyzer> analyzers = {Analyzer::word(), Analyzer::word_ngram(1, 2),
                                           Analyzer::char_ngram(2, 3)};
  for (int trial = 0; trial < 600; ++trial) {
    const auto& a = analyzers[trial % 3];
    std::vector<TokenSequence> docs(1 + rng.index(5));
    for (auto& d : docs) {
      const auto n = rng.index(7);
      for (std::size_t i = 0; i < n; ++i) d.tokens.push_back(std::string(1, char('a' + rng.index(10))));
    }
    docs[0].tokens.push_back("a");
    const auto vocab = fit_vocabulary(docs, a);
    const auto m = transform_tfidf(docs, vocab);
    for (std::size_t r = 0; r < docs.size(); ++r) {
      std::map<std::string, double> count;
      double total = 0;
      for (const auto& t : oracle_terms(docs[r].tokens, a)) {
        count[t] += 1;
        total += 1;
      }
      std::map<std::string, double> got;
      for (std::size_t k = 0; k < m.rows[r].nnz(); ++k) {
        got[vocab.term(m.rows[r].indices[k])] = m.rows[r].values[k];
      }
      for (const auto& [t, n] : count) {
        double df = 0;
        for (const auto& d : docs) {
          const auto terms = oracle_terms(d.tokens, a);
          df += std::find(terms.begin(), terms.end(), t) != terms.end();
        }
        const double expected = n / total * std::log(static_cast<double>(docs.size()) / df);
        worst = std::max(worst, std::abs(expected - (got.count(t) ? got[t] : 0.0)));
      }
    }
  }
  return worst;
}

// Returns (mismatches, compared).
std::pair<int, int> mnb_bruteforce() {
  Rng rng(77);
  int mismatches = 0;
  int compared = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(5);
    std::vector<std::array<double, 3>> x(n);
    std::vector<int> y(n);
    SparseMatrix sx;
    sx.n_cols = 3;
    for (std::size_t i = 0; i < n; ++i) {
      SparseVector row;
      for (std::uint32_t k = 0; k < 3; ++k) {
        x[i][k] = static_cast<double>(rng.index(3));
        if (x[i][k] != 0) {
          row.indices.push_back(k);
          row.values.push_back(x[i][k]);
        }
      }
      y[i] = static_cast<int>(i % 2);
      sx.rows.push_back(row);
    }
    const auto model = mnb_fit(sx, y, 1.0);
    for (int code = 0; code < 27; ++code) {
      const std::array<double, 3> doc = {double(code % 3), double(code / 3 % 3), double(code / 9)};
      std::array<double, 2> joint{};
      for (int c = 0; c < 2; ++c) {
        std::array<double, 3> cnt{};
        double nc = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (y[i] != c) continue;
          nc += 1;
          for (int k = 0; k < 3; ++k) cnt[k] += x[i][k];
        }
        const double tot = cnt[0] + cnt[1] + cnt[2];
        joint[c] = nc / static_cast<double>(n);
        for (int k = 0; k < 3; ++k) joint[c] *= std::pow((cnt[k] + 1.0) / (tot + 3.0), doc[k]);
      }
      if (std::abs(joint[0] - joint[1]) <= 1e-12 * std::max(joint[0], joint[1])) continue;
      SparseMatrix q;
      q.n_cols = 3;
      SparseVector row;
      for (std::uint32_t k = 0; k < 3; ++k) {
        if (doc[k] != 0) {
          row.indices.push_back(k);
          row.values.push_back(doc[k]);
        }
      }
      q.rows.push_back(row);
      mismatches += mnb_predict(model, q).labels[0] != (joint[1] > joint[0] ? 1 : 0);
      ++compared;
    }
  }
  return {mismatches, compared};
}

double auc_max_error() {
  Rng rng(31);
  double worst = 0.0;
  int cases = 0;
  while (cases < kAucCases) {
    const auto n = 2 + rng.index(9);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.bernoulli(0.5);
      s[i] = static_cast<double>(rng.index(6));
    }
    const auto pos = std::count(y.begin(), y.end(), 1);
    if (pos == 0 || pos == static_cast<long>(n)) continue;
    ++cases;
    double good = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (y[i] == 1 && y[j] == 0) {
          pairs += 1;
          good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
      }
    }
    worst = std::max(worst, std::abs(roc_auc(y, s) - good / pairs));
  }
  return worst;
}

void oracle_suite() {
  const double tfidf = tfidf_max_error();
  const auto [mismatch, compared] = mnb_bruteforce();
  const double auc = auc_max_error();
  std::ostringstream d;
  d << "tfidf max err " << std::scientific << std::setprecision(1) << tfidf << ", mnb "
    << mismatch << "/" << compared << " mismatches, auc max err " << auc << " over " << kAucCases;
  report(6, tfidf <= kTfidfTol && mismatch == 0 && compared > 0 && auc <= kAucTol,
         "oracle equivalences (TF-IDF, naive Bayes, ROC-AUC)", d.str());
}

// ---- criterion 7 -----------------------------------------------------------

void f1_consistency() {
  // Confusion matrix whose precision and recall reproduce the reference ones
  // to 4 decimals: tp/(tp+fp) = 0.9325, tp/(tp+fn) = 0.8601.
  ConfusionMatrix cm;
  cm.tp = 787;
  cm.fp = 57;
  cm.fn = 128;
  cm.tn = 800;
  const auto s = scores(cm);
  const double f1_from_reference = 2 * kReferenceP * kReferenceR / (kReferenceP + kReferenceR);
  const bool ok = std::abs(s.precision - kReferenceP) < 5e-5 &&
                  std::abs(s.recall - kReferenceR) < 5e-5 &&
                  std::abs(f1_from_reference - kReferenceF1) < 5e-5 &&
                  std::abs(s.f1 - kReferenceF1) < 5e-5;
  report(7, ok, "F1 recomputed from reference precision/recall",
         "P " + fmt(s.precision) + " R " + fmt(s.recall) + " F1 " + fmt(s.f1) + " vs " +
             fmt(kReferenceF1));
}

// ---- criterion 8 -----------------------------------------------------------

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != kExitOk) std::cerr << err.str();
  return code;
}

void determinism() {
  ScratchDir dir("det");
  const auto corpus = (dir.path() / "corpus").string();
  const auto emb = (dir.path() / "emb.txt").string();
  bool ok = cli({"fixture", "--out", corpus, "-n", "20", "--embeddings", emb, "--dim", "8"}) == 0;
  std::vector<std::vector<std::string>> runs = {
      {"--model", "mnb"},
      {"--model", "sgd", "--features", "tfidf-char"},
      {"--model", "bilstm-attn", "--embeddings", emb, "--set", "neural.epochs=2", "--set",
       "neural.hidden_dim=4", "--set", "neural.max_len=25"},
  };
  int identical = 0;
  for (std::size_t r = 0; r < runs.size() && ok; ++r) {
    std::vector<fs::path> outs;
    for (int rep = 0; rep < 2; ++rep) {
      const auto out = dir.path() / ("run" + std::to_string(r) + "_" + std::to_string(rep));
      std::vector<std::string> args = {"train", "--corpus", corpus, "--out", out.string()};
      args.insert(args.end(), runs[r].begin(), runs[r].end());
      ok = ok && cli(args) == 0;
      outs.push_back(out);
    }
    if (!ok) break;
    bool same = true;
    for (const auto& entry : fs::directory_iterator(outs[0])) {
      const auto name = entry.path().filename();
      same = same && fs::exists(outs[1] / name) && slurp(entry.path()) == slurp(outs[1] / name);
    }
    identical += same;
  }
  ok = ok && identical == static_cast<int>(runs.size());
  report(8, ok, "repeated train runs write byte-identical files",
         std::to_string(identical) + "/" + std::to_string(runs.size()) +
             " configurations identical (mnb, sgd char n-grams, bilstm-attn)");
}

// ---- criterion 9 -----------------------------------------------------------

void fixture_pipeline() {
  ScratchDir dir("fixture");
  Stopwatch clock;
  make_fixture(100, 42, dir.path());
  RunConfig cfg;
  cfg.corpus_root = dir.path();
  cfg.finalize();
  const auto art = train_model(cfg, load_corpus(dir.path()));
  const double secs = clock.seconds();
  report(9, art.report.accuracy > kFixtureAccMin && secs < kFixtureSeconds,
         "fixture(100) preprocess -> TF-IDF -> MNB accuracy > 0.9 in < 10 s",
         "accuracy " + fmt(art.report.accuracy) + ", " + fmt(secs, 2) + " s");
}

// ---- criteria 1-4 ----------------------------------------------------------

double mean_of(const RowResult& row, const std::string& metric) {
  const auto v = row.values(metric);
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

ReproduceResult run_table(int number, const std::vector<Document>& corpus,
                          std::vector<std::string> rows = {}) {
  ReproduceOptions opts;
  opts.only_rows = std::move(rows);
  opts.progress = [](const std::string& msg) { std::cerr << msg << '\n'; };
  return reproduce(TablePreset::load(preset_path(number)), corpus, opts);
}

void corpus_criteria(const fs::path& root, const char* glove_env) {
  const auto corpus = load_corpus(root);

  {
    Stopwatch clock;
    const auto t1_mnb = run_table(1, corpus, {"MultinomialNB"});
    const double secs = clock.seconds();
    const auto t1 = run_table(1, corpus);
    const auto& mnb = t1_mnb.row("MultinomialNB");
    const double acc = mean_of(mnb, "accuracy");
    const double f1 = mean_of(mnb, "f1");
    report(1,
           acc >= kTable1AccLo && acc <= kTable1AccHi && f1 >= kTable1F1Lo && f1 <= kTable1F1Hi &&
               secs < kTable1Seconds,
           "Table 1 MNB accuracy in [0.86, 0.94], F1 in [0.84, 0.94], 5 seeds",
           "accuracy " + fmt(acc) + ", F1 " + fmt(f1) + ", " + fmt(secs, 1) + " s");

    const double sgd = mean_of(t1.row("SGD"), "accuracy");
    const double lr = mean_of(t1.row("LogisticRegression"), "accuracy");
    const auto& svm = t1.row("SVM");
    const double svm_recall = mean_of(svm, "recall");
    const double svm_acc = mean_of(svm, "accuracy");
    const bool svm_pattern = svm_recall > kSvmRecallMin && svm_acc < kSvmAccMax;
    report(2, acc > sgd && sgd >= lr - kOrderingNoise,
           "Table 1 ordering MNB > SGD >= LR (noise 0.01)",
           "MNB " + fmt(acc) + ", SGD " + fmt(sgd) + ", LR " + fmt(lr) + "; SVM recall " +
               fmt(svm_recall) + " accuracy " + fmt(svm_acc) +
               (svm_pattern ? " (high-recall/low-accuracy pattern reproduced)"
                            : " (SVM pattern not reproduced; see README)"));
  }

  {
    const auto t3 = run_table(3, corpus);
    const auto& mnb = t3.row("MNB+N-Gram");
    const auto& lr = t3.row("LR+CharLevel");
    const double a1 = mean_of(mnb, "accuracy"), u1 = mean_of(mnb, "auc");
    const double a2 = mean_of(lr, "accuracy"), u2 = mean_of(lr, "auc");
    const bool ok = std::abs(a1 - kMnbNgramAcc) <= kTable3AccTol &&
                    std::abs(u1 - kMnbNgramAuc) <= kTable3AucTol &&
                    std::abs(a2 - kLrCharAcc) <= kTable3AccTol &&
                    std::abs(u2 - kLrCharAuc) <= kTable3AucTol;
    report(3, ok, "Table 3 bands for MNB+N-Gram and LR+CharLevel",
           "MNB+N-Gram acc " + fmt(a1) + " auc " + fmt(u1) + "; LR+CharLevel acc " + fmt(a2) +
               " auc " + fmt(u2));
  }

  if (!glove_env || !*glove_env) {
    skip(4, "Table 2 attention BiLSTM", "OPSPAM_GLOVE_DIR not set");
    return;
  }
  Stopwatch clock;
  ReproduceOptions opts;
  opts.embeddings_dir = glove_env;
  opts.only_rows = {"LSTM+GloVe100", "BiLSTM+Attention+GloVe100"};
  opts.progress = [](const std::string& msg) { std::cerr << msg << '\n'; };
  const auto t2 = reproduce(TablePreset::load(preset_path(2)), corpus, opts);
  const double secs = clock.seconds();
  const auto attn = t2.row("BiLSTM+Attention+GloVe100").values("accuracy");
  const auto lstm = t2.row("LSTM+GloVe100").values("accuracy");
  int wins = 0;
  for (std::size_t i = 0; i < std::min(attn.size(), lstm.size()); ++i) wins += attn[i] > lstm[i];
  const double attn_mean = mean_of(t2.row("BiLSTM+Attention+GloVe100"), "accuracy");
  // Runtime budget applies to one attention run; both rows over all seeds ran here.
  const double per_run = secs / static_cast<double>(attn.size() + lstm.size());
  report(4, attn_mean >= kAttentionAccMin && wins >= kAttentionMinWins && per_run < kTable2Seconds,
         "Table 2 attention BiLSTM accuracy >= 0.80 and beats LSTM on >= 4 of 5 seeds",
         "accuracy " + fmt(attn_mean) + ", wins " + std::to_string(wins) + "/" +
             std::to_string(attn.size()) + ", " + fmt(per_run / 60.0, 1) + " min per run");
}

}  // namespace

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "offline";
  try {
    if (mode == "offline") {
      gradient_suite();
      oracle_suite();
      f1_consistency();
      determinism();
      fixture_pipeline();
    } else if (mode == "corpus") {
      const char* root = std::getenv("OPSPAM_CORPUS");
      if (!root || !*root || !fs::is_directory(root)) {
        for (int id = 1; id <= 4; ++id) skip(id, "real-corpus criterion", "OPSPAM_CORPUS not set");
        return 77;
      }
      corpus_criteria(root, std::getenv("OPSPAM_GLOVE_DIR"));
    } else {
      std::cerr << "usage: opspam_acceptance [offline|corpus]\n";
      return 2;
    }
  } catch (const std::exception& e) {
    std::cout << "error: " << e.what() << std::endl;
    return 1;
  }
  std::cout << ran - failures << "/" << ran << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
