#include "opspam/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include <CLI11.hpp>

#include "opspam/config.hpp"
#include "opspam/corpus.hpp"
#include "opspam/error.hpp"
#include "opspam/pipeline.hpp"
#include "opspam/reproduce.hpp"

namespace opspam {
namespace {

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError("--set expects section.key=value, got '" + s + "'");
    }
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
}

std::size_t percentile(std::vector<std::size_t> sorted, double q) {
  // Nearest-rank percentile.
  if (sorted.empty()) return 0;
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

// ---- corpus-stats -------------------------------------------------------

struct StatsArgs {
  std::string root;
  std::string jsonl;
};

int cmd_corpus_stats(const StatsArgs& a, std::ostream& out) {
  const auto docs = load_corpus(a.root);
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> cells;
  std::set<std::string> hotels;
  std::vector<std::size_t> lengths;
  const auto prep = PipelineConfig::neural_defaults();
  for (const auto& d : docs) {
    ++cells[{to_string(d.label), to_string(d.polarity), d.source}];
    hotels.insert(d.hotel);
    lengths.push_back(preprocess(d.text, prep).size());
  }
  std::sort(lengths.begin(), lengths.end());

  out << "documents: " << docs.size() << "\n\n";
  out << std::left << std::setw(11) << "label" << std::setw(10) << "polarity" << std::setw(13)
      << "source"
      << "count\n";
  for (const auto& [key, n] : cells) {
    const auto& [label, polarity, source] = key;
    out << std::setw(11) << label << std::setw(10) << polarity << std::setw(13) << source << n
        << '\n';
  }
  out << std::right << "\nhotels: " << hotels.size() << '\n';
  out << "tokens per review: p50 " << percentile(lengths, 0.50) << "  p90 "
      << percentile(lengths, 0.90) << "  p99 " << percentile(lengths, 0.99) << "  max "
      << lengths.back() << '\n';
  if (is_fixture(a.root)) out << "(synthetic fixture corpus)\n";
  if (!a.jsonl.empty()) {
    std::ofstream f(a.jsonl, std::ios::binary);
    if (!f) throw Error("cannot write " + a.jsonl);
    write_jsonl(docs, f);
  }
  return kExitOk;
}

// ---- fixture ------------------------------------------------------------

struct FixtureArgs {
  std::string out_dir;
  int n = 100;
  std::uint64_t seed = 1;
  std::string embeddings;
  int dim = 16;
};

int cmd_fixture(const FixtureArgs& a, std::ostream& out) {
  const auto root = make_fixture(a.n, a.seed, a.out_dir);
  out << "fixture corpus: " << root.string() << " (" << 4 * a.n << " reviews, seed " << a.seed
      << ")\n";
  if (!a.embeddings.empty()) {
    write_fixture_embeddings(a.dim, a.seed, a.embeddings);
    out << "fixture embeddings: " << a.embeddings << " (dim " << a.dim << ")\n";
  }
  return kExitOk;
}

// ---- train --------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string corpus;
  std::string model;
  std::string features;
  std::string embeddings;
  std::string out_dir;
  std::string polarity;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

RunConfig build_config(const TrainArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg.load_file(a.config);
  if (!a.corpus.empty()) cfg.set("corpus.root", a.corpus);
  if (!a.model.empty()) cfg.set("model.type", a.model);
  if (!a.features.empty()) cfg.set("features.set", a.features);
  if (!a.embeddings.empty()) cfg.set("neural.embeddings", a.embeddings);
  if (!a.out_dir.empty()) cfg.set("output.dir", a.out_dir);
  if (!a.polarity.empty()) cfg.set("corpus.polarity", a.polarity);
  if (a.seed) cfg.set("split.seed", std::to_string(*a.seed));
  apply_overrides(cfg, a.sets);
  cfg.finalize();
  if (cfg.corpus_root.empty()) throw UsageError("no corpus given (--corpus or corpus.root)");
  if (!std::filesystem::exists(cfg.corpus_root)) {
    throw CorpusError(cfg.corpus_root.string(), "corpus root does not exist");
  }
  if (!cfg.embeddings_path.empty() && !std::filesystem::exists(cfg.embeddings_path)) {
    throw Error("embedding file " + cfg.embeddings_path.string() + " does not exist");
  }
  return cfg;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const auto cfg = build_config(a);
  const auto corpus = load_corpus(cfg.corpus_root);
  const auto art = train_model(cfg, corpus);
  save_artifacts(art, cfg.output_dir);
  print_reports(out, {art.report});
  out << "split seed " << cfg.split_seed << ", " << art.train_size << " train / " << art.test_size
      << " test\n";
  if (art.train_accuracy) {
    out << "train accuracy " << std::fixed << std::setprecision(4) << *art.train_accuracy
        << " after " << art.history.size() << " epochs\n";
    out.unsetf(std::ios::floatfield);
  }
  err << "wrote " << (cfg.output_dir / kModelFileName).string() << '\n';
  return kExitOk;
}

// ---- evaluate -----------------------------------------------------------

struct EvaluateArgs {
  std::string model;
  std::string corpus;
  std::string report;
  bool all = false;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto lm = LoadedModel::load(a.model);
  const auto docs = filter_polarity(load_corpus(a.corpus), lm.polarity());
  std::vector<Document> eval_docs;
  if (a.all) {
    eval_docs = docs;
  } else {
    eval_docs = split(docs, lm.train_fraction(), lm.split_seed()).test;
  }
  std::vector<std::string> texts;
  for (const auto& d : eval_docs) texts.push_back(d.text);
  const auto pred = lm.predict(texts).prediction;
  const auto report = evaluate(labels_of(eval_docs), pred.labels, pred.scores, lm.split_seed(),
                               lm.model_name(), lm.features_name());
  print_reports(out, {report});
  if (!a.report.empty()) write_json_file(a.report, report.to_json());
  return kExitOk;
}

// ---- predict / explain ----------------------------------------------------

struct PredictArgs {
  std::string model;
  std::vector<std::string> texts;
  std::vector<std::string> files;
};

std::vector<std::string> gather_inputs(const PredictArgs& a) {
  std::vector<std::string> inputs = a.texts;
  for (const auto& f : a.files) inputs.push_back(read_text_file(f));
  if (inputs.empty()) throw UsageError("nothing to predict: pass --text or --file");
  return inputs;
}

void print_weights(std::ostream& out, const std::vector<TokenWeight>& weights) {
  out << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out << (i ? " " : "") << weights[i].token << ':' << weights[i].weight;
  }
  out.unsetf(std::ios::floatfield);
}

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
  const auto lm = LoadedModel::load(a.model);
  const auto inputs = gather_inputs(a);
  const auto res = lm.predict(inputs);
  for (auto i : res.empty_inputs) {
    err << "warning: input " << i + 1
        << " vectorized to an empty document; the prediction reflects the class prior only\n";
  }
  out << std::setprecision(10);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out << (res.prediction.labels[i] == 1 ? "deceptive" : "truthful") << '\t'
        << res.prediction.scores[i] << '\n';
    if (lm.has_attention()) {
      out << "attention\t";
      print_weights(out, lm.explain(inputs[i]));
      out << '\n';
    }
  }
  return kExitOk;
}

int cmd_explain(const PredictArgs& a, std::ostream& out) {
  const auto lm = LoadedModel::load(a.model);
  if (!lm.has_attention()) {
    throw UsageError("explain needs a bilstm-attn model, " + a.model + " is " + lm.model_name());
  }
  for (const auto& text : gather_inputs(a)) {
    out << std::fixed << std::setprecision(6);
    for (const auto& tw : lm.explain(text)) out << tw.token << '\t' << tw.weight << '\n';
    out.unsetf(std::ios::floatfield);
    out << '\n';
  }
  return kExitOk;
}

// ---- gradcheck ----------------------------------------------------------

struct GradcheckArgs {
  std::string architecture;
  std::size_t hidden = 4;
  std::size_t len = 6;
  std::size_t embedding_dim = 5;
  std::size_t filters = 3;
  std::vector<std::size_t> widths = {2, 3};
  std::size_t batch = 4;
  std::size_t vocab = 12;
  std::uint64_t seed = 1;
  bool trainable = false;
  bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  Rng rng(a.seed);
  std::vector<std::string> tokens;
  std::vector<double> vectors;
  for (std::size_t i = 0; i < a.vocab; ++i) {
    tokens.push_back("w" + std::to_string(i));
    for (std::size_t k = 0; k < a.embedding_dim; ++k) vectors.push_back(rng.uniform(-0.5, 0.5));
  }
  auto table = std::make_shared<const EmbeddingTable>(tokens, vectors, a.embedding_dim);

  ModelSpec spec;
  spec.architecture = parse_architecture(a.architecture);
  spec.embedding_dim = a.embedding_dim;
  spec.hidden_dim = a.hidden;
  spec.filters = a.filters;
  spec.filter_widths = a.widths;
  spec.max_len = a.len;
  spec.trainable_embeddings = a.trainable;
  if (spec.architecture == Architecture::RecurrentCnn) {
    spec.doc_input_dim = 5;
    spec.doc_feature_dim = 3;
  }
  spec.validate();

  // Full, half-padded, very short and random-length samples.
  EncodedBatch batch;
  batch.max_len = a.len;
  for (std::size_t i = 0; i < a.batch; ++i) {
    std::size_t len = a.len;
    if (i % 4 == 1) len = a.len / 2;
    if (i % 4 == 2) len = 1;
    if (i % 4 == 3) len = 1 + rng.index(a.len);
    for (std::size_t t = 0; t < a.len; ++t) {
      batch.indices.push_back(
          t < len ? static_cast<std::uint32_t>(1 + rng.index(table->rows() - 1)) : 0U);
    }
    batch.lengths.push_back(len);
    batch.labels.push_back(static_cast<int>(i % 2));
  }
  if (spec.architecture == Architecture::RecurrentCnn) {
    batch.doc_feature_dim = spec.doc_input_dim;
    for (std::size_t i = 0; i < a.batch * spec.doc_input_dim; ++i) {
      batch.doc_features.push_back(rng.uniform());
    }
  }

  const NeuralModel model(spec, table, a.seed + 1);
  std::function<void(ParamSet&)> tamper;
  if (a.corrupt) {
    tamper = [](ParamSet& g) {
      auto& first = g.begin()->second;
      first[0] = first[0] * 1.5 + 0.1;
    };
  }
  const auto report = gradient_check(model, batch, kGradCheckEpsilon, tamper);
  out << "gradient check " << to_string(spec.architecture) << " (hidden " << a.hidden << ", len "
      << a.len << ", embedding " << a.embedding_dim << ", batch " << a.batch << ", eps "
      << kGradCheckEpsilon << ")\n";
  out << std::left << std::setw(18) << "parameter" << std::right << std::setw(8) << "entries"
      << std::setw(16) << "max rel err" << std::setw(16) << "max abs err" << '\n';
  out << std::scientific << std::setprecision(3);
  for (const auto& e : report.entries) {
    out << std::left << std::setw(18) << e.param << std::right << std::setw(8) << e.count
        << std::setw(16) << e.max_rel_error << std::setw(16) << e.max_abs_error << '\n';
  }
  const bool ok = report.passed(kGradCheckTolerance);
  out << (ok ? "PASS" : "FAIL") << " max relative error " << report.max_rel_error << " (tolerance "
      << kGradCheckTolerance << ")\n";
  out.unsetf(std::ios::floatfield);
  return ok ? kExitOk : kExitRuntime;
}

// ---- reproduce ----------------------------------------------------------

struct ReproduceArgs {
  int table = 0;
  std::string corpus;
  std::string config;
  std::vector<std::string> sets;
  std::string embeddings_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> rows;
  std::string out_dir;
  std::string presets;
  bool allow_fixture = false;
};

int cmd_reproduce(const ReproduceArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig base;
  if (!a.config.empty()) base.load_file(a.config);
  if (!a.corpus.empty()) base.set("corpus.root", a.corpus);
  apply_overrides(base, a.sets);
  if (base.corpus_root.empty()) throw UsageError("no corpus given (--corpus or corpus.root)");
  if (!std::filesystem::exists(base.corpus_root)) {
    throw CorpusError(base.corpus_root.string(),
                      "corpus root does not exist; download the Deceptive Opinion Spam Corpus "
                      "and pass its op_spam_v1.4 directory");
  }
  if (is_fixture(base.corpus_root) && !a.allow_fixture) {
    throw UsageError("reproduce needs the real corpus; " + base.corpus_root.string() +
                     " is a synthetic fixture");
  }
  const auto preset =
      TablePreset::load(preset_path(a.table, a.presets.empty() ? default_preset_dir() : std::filesystem::path(a.presets)));
  ReproduceOptions opts;
  opts.base = base;
  if (!a.seeds.empty()) opts.seeds = a.seeds;
  opts.only_rows = a.rows;
  opts.embeddings_dir = a.embeddings_dir;
  if (preset.needs_embeddings() && a.embeddings_dir.empty()) {
    throw UsageError("table " + std::to_string(a.table) +
                     " needs GloVe vectors: pass --embeddings-dir DIR containing the preset files");
  }
  opts.progress = [&err](const std::string& what) { err << "running " << what << '\n'; };

  const auto corpus = load_corpus(base.corpus_root);
  const auto result = reproduce(preset, corpus, opts);
  result.print(out);
  const std::filesystem::path dir = a.out_dir.empty() ? base.output_dir : std::filesystem::path(a.out_dir);
  std::filesystem::create_directories(dir);
  const auto json_path = dir / ("table" + std::to_string(a.table) + ".json");
  write_json_file(json_path, result.to_json());
  err << "wrote " << json_path.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deceptive opinion spam classification toolkit", "opspam"};
  app.require_subcommand(1);

  StatsArgs stats;
  auto* c_stats = app.add_subcommand("corpus-stats", "Counts, hotels and review lengths of a corpus");
  c_stats->add_option("root", stats.root, "Corpus root directory")->required();
  c_stats->add_option("--jsonl", stats.jsonl, "Also export the corpus as JSON Lines");

  FixtureArgs fx;
  auto* c_fixture = app.add_subcommand("fixture", "Write a small synthetic corpus in the Ott layout");
  c_fixture->add_option("--out", fx.out_dir, "Output directory")->required();
  c_fixture->add_option("-n,--per-cell", fx.n, "Reviews per (polarity, class) cell")
      ->check(CLI::Range(2, 100000));
  c_fixture->add_option("--seed", fx.seed, "Generator seed");
  c_fixture->add_option("--embeddings", fx.embeddings, "Also write matching embedding vectors here");
  c_fixture->add_option("--dim", fx.dim, "Embedding dimension")->check(CLI::Range(2, 1000));

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model and evaluate it on the held-out split");
  c_train->add_option("--config", tr.config, "INI config file");
  c_train->add_option("--corpus", tr.corpus, "Corpus root");
  c_train->add_option("--model", tr.model, "mnb, lr, sgd, svm, cnn, lstm, bilstm, rcnn, bilstm-attn");
  c_train->add_option("--features", tr.features,
                      "count-word, tfidf-word, tfidf-ngram, tfidf-char, ...");
  c_train->add_option("--embeddings", tr.embeddings, "Pretrained vectors (neural models)");
  c_train->add_option("--seed", tr.seed, "Split seed");
  c_train->add_option("--polarity", tr.polarity, "all, positive or negative");
  c_train->add_option("--out", tr.out_dir, "Output directory");
  c_train->add_option("--set", tr.sets, "Config override section.key=value");

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Evaluate a saved model on its held-out split");
  c_eval->add_option("model", ev.model, "Model file")->required();
  c_eval->add_option("--corpus", ev.corpus, "Corpus root")->required();
  c_eval->add_flag("--all", ev.all, "Evaluate on every document instead of the held-out split");
  c_eval->add_option("--report", ev.report, "Write the report JSON here");

  PredictArgs pr;
  auto* c_pred = app.add_subcommand("predict", "Classify texts with a saved model");
  c_pred->add_option("model", pr.model, "Model file")->required();
  c_pred->add_option("--text", pr.texts, "Review text");
  c_pred->add_option("--file", pr.files, "File holding one review");

  PredictArgs ex;
  auto* c_explain = app.add_subcommand("explain", "Attention weight per token (bilstm-attn)");
  c_explain->add_option("model", ex.model, "Model file")->required();
  c_explain->add_option("--text", ex.texts, "Review text");
  c_explain->add_option("--file", ex.files, "File holding one review");

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of the neural gradients");
  c_grad->add_option("architecture", gc.architecture, "cnn, lstm, bilstm, rcnn, bilstm-attn")
      ->required()
      ->check(CLI::IsMember({"cnn", "lstm", "bilstm", "rcnn", "bilstm-attn"}));
  c_grad->add_option("--hidden", gc.hidden, "LSTM hidden size")->check(CLI::Range(1, 256));
  c_grad->add_option("--len", gc.len, "Sequence length")->check(CLI::Range(1, 256));
  c_grad->add_option("--embedding-dim", gc.embedding_dim, "Embedding size")->check(CLI::Range(1, 256));
  c_grad->add_option("--filters", gc.filters, "Filters per width")->check(CLI::Range(1, 256));
  c_grad->add_option("--widths", gc.widths, "Filter widths")->delimiter(',');
  c_grad->add_option("--batch", gc.batch, "Samples in the batch")->check(CLI::Range(1, 256));
  c_grad->add_option("--vocab", gc.vocab, "Vocabulary size")->check(CLI::Range(1, 10000));
  c_grad->add_option("--seed", gc.seed, "Seed for data and parameters");
  c_grad->add_flag("--trainable", gc.trainable, "Include the embedding matrix");
  c_grad->add_flag("--corrupt-gradient", gc.corrupt)->group("");

  ReproduceArgs rp;
  auto* c_repro = app.add_subcommand("reproduce", "Regenerate a result table from its preset");
  c_repro->add_option("table", rp.table, "Table number (1, 2 or 3)")
      ->required()
      ->check(CLI::IsMember({1, 2, 3}));
  c_repro->add_option("--corpus", rp.corpus, "Corpus root");
  c_repro->add_option("--config", rp.config, "INI config file");
  c_repro->add_option("--set", rp.sets, "Config override section.key=value");
  c_repro->add_option("--embeddings-dir", rp.embeddings_dir, "Directory holding GloVe files");
  c_repro->add_option("--seeds", rp.seeds, "Override the preset seeds")->delimiter(',');
  c_repro->add_option("--rows", rp.rows, "Only run these row labels");
  c_repro->add_option("--out", rp.out_dir, "Directory for the comparison JSON");
  c_repro->add_option("--presets", rp.presets, "Directory holding table<N>.ini");
  c_repro->add_flag("--allow-fixture", rp.allow_fixture)->group("");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    err << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (*c_stats) return cmd_corpus_stats(stats, out);
    if (*c_fixture) return cmd_fixture(fx, out);
    if (*c_train) return cmd_train(tr, out, err);
    if (*c_eval) return cmd_evaluate(ev, out);
    if (*c_pred) return cmd_predict(pr, out, err);
    if (*c_explain) return cmd_explain(ex, out);
    if (*c_grad) return cmd_gradcheck(gc, out);
    if (*c_repro) return cmd_reproduce(rp, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CorpusError& e) {
    err << "corpus error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace opspam
