#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "opspam/corpus.hpp"
#include "opspam/error.hpp"
#include "opspam/neural.hpp"
#include "opspam/textprep.hpp"
#include "support.hpp"

using namespace opspam;

namespace {

const std::vector<Architecture> kAllArchitectures = {
    Architecture::Cnn, Architecture::Lstm, Architecture::BiLstm, Architecture::RecurrentCnn,
    Architecture::BiLstmAttention};

std::shared_ptr<const EmbeddingTable> random_table(std::size_t vocab, std::size_t dim,
                                                   std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> tokens;
  std::vector<double> values;
  for (std::size_t i = 0; i < vocab; ++i) {
    tokens.push_back("w" + std::to_string(i));
    for (std::size_t k = 0; k < dim; ++k) values.push_back(rng.uniform(-1, 1));
  }
  return std::make_shared<const EmbeddingTable>(std::move(tokens), std::move(values), dim);
}

ModelSpec small_spec(Architecture arch, bool trainable = false) {
  ModelSpec s;
  s.architecture = arch;
  s.hidden_dim = 4;
  s.filters = 3;
  s.filter_widths = {2, 3};
  s.dropout = 0.0;
  s.max_len = 6;
  s.doc_input_dim = arch == Architecture::RecurrentCnn ? 5 : 0;
  s.doc_feature_dim = 3;
  s.trainable_embeddings = trainable;
  return s;
}

// Random index sequences with mixed lengths (including an empty one).
EncodedBatch random_batch(const ModelSpec& spec, const EmbeddingTable& table, std::size_t n,
                          std::uint64_t seed) {
  Rng rng(seed);
  EncodedBatch b;
  b.max_len = spec.max_len;
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = i == 0 ? spec.max_len : rng.index(spec.max_len + 1);
    for (std::size_t t = 0; t < spec.max_len; ++t) {
      b.indices.push_back(t < len ? static_cast<std::uint32_t>(1 + rng.index(table.rows() - 1))
                                  : static_cast<std::uint32_t>(EmbeddingTable::kPadIndex));
    }
    b.lengths.push_back(len);
    b.labels.push_back(static_cast<int>(i % 2));
  }
  b.doc_feature_dim = spec.doc_input_dim;
  for (std::size_t k = 0; k < n * spec.doc_input_dim; ++k) b.doc_features.push_back(rng.uniform(0, 1));
  return b;
}

// Same samples with `extra` additional pad columns.
EncodedBatch widen(const EncodedBatch& b, std::size_t extra) {
  EncodedBatch out = b;
  out.max_len = b.max_len + extra;
  out.indices.clear();
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t t = 0; t < out.max_len; ++t) {
      out.indices.push_back(t < b.max_len ? b.at(i, t)
                                          : static_cast<std::uint32_t>(EmbeddingTable::kPadIndex));
    }
  }
  return out;
}

ParamSet gradients(const NeuralModel& model, const EncodedBatch& batch) {
  Rng rng(0);
  const auto fwd = forward(model, batch, true, &rng);
  return backward(model, fwd.cache, batch.labels);
}

void swap_halves(Tensor& t) {
  const auto half = t.size() / 2;
  for (std::size_t k = 0; k < half; ++k) std::swap(t[k], t[half + k]);
}

void set_env_threads(const char* n) { ::setenv("OPSPAM_THREADS", n, 1); }

}  // namespace

TEST_CASE("analytic gradients agree with finite differences for every architecture") {
  const auto table = random_table(10, 5, 3);
  for (auto arch : kAllArchitectures) {
    for (bool trainable : {false, true}) {
      CAPTURE(to_string(arch));
      CAPTURE(trainable);
      const auto spec = small_spec(arch, trainable);
      const NeuralModel model(spec, table, 11);
      const auto batch = random_batch(model.spec(), *table, 4, 5);
      const auto report = gradient_check(model, batch);
      CHECK(report.max_rel_error <= kGradCheckTolerance);
      CHECK(report.passed(kGradCheckTolerance));
      CHECK_FALSE(report.entries.empty());
    }
  }
}

TEST_CASE("the gradient check notices a wrong gradient") {
  const auto table = random_table(10, 5, 3);
  const NeuralModel model(small_spec(Architecture::Lstm), table, 11);
  const auto batch = random_batch(model.spec(), *table, 4, 5);
  const auto report = gradient_check(model, batch, kGradCheckEpsilon,
                                     [](ParamSet& g) { g.at("output.b")[0] += 0.1; });
  CHECK_FALSE(report.passed(kGradCheckTolerance));
  CHECK(gradient_relative_error(1.0, 1.0) == 0.0);
  CHECK(gradient_relative_error(0.0, 1e-12) == doctest::Approx(1e-4));
  CHECK(gradient_relative_error(2.0, 1.0) == 0.5);
}

TEST_CASE("trailing padding never changes a prediction") {
  const auto table = random_table(10, 5, 3);
  for (auto arch : kAllArchitectures) {
    CAPTURE(to_string(arch));
    const NeuralModel model(small_spec(arch), table, 21);
    const auto batch = random_batch(model.spec(), *table, 6, 8);
    const auto a = predict_proba(model, batch);
    const auto b = predict_proba(model, widen(batch, 3));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-9);
  }
}

TEST_CASE("reversing inputs and swapping directions leaves BiLSTM outputs unchanged") {
  const auto table = random_table(10, 5, 3);
  for (auto arch : {Architecture::BiLstm, Architecture::BiLstmAttention}) {
    CAPTURE(to_string(arch));
    const NeuralModel model(small_spec(arch), table, 31);
    const auto batch = random_batch(model.spec(), *table, 6, 9);

    auto reversed = batch;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto len = batch.lengths[i];
      for (std::size_t t = 0; t < len; ++t) {
        reversed.indices[i * batch.max_len + t] = batch.at(i, len - 1 - t);
      }
    }
    ParamSet swapped = model.params();
    for (const char* p : {".W", ".U", ".b"}) {
      std::swap(swapped.at(std::string("lstm_fwd") + p), swapped.at(std::string("lstm_bwd") + p));
    }
    // Feature blocks [forward, backward] trade places as well.
    swap_halves(swapped.at("output.W"));
    if (arch == Architecture::BiLstmAttention) swap_halves(swapped.at("attention.w"));
    const NeuralModel mirror(model.spec(), table, swapped);

    const auto a = predict_proba(model, batch);
    const auto b = predict_proba(mirror, reversed);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-9);
  }
}

TEST_CASE("attention weights form a distribution over real tokens") {
  const auto table = random_table(10, 5, 3);
  const NeuralModel model(small_spec(Architecture::BiLstmAttention), table, 41);
  const auto batch = random_batch(model.spec(), *table, 8, 12);
  const auto alpha = attention_weights(model, batch);
  REQUIRE(alpha.rows() == batch.size());
  REQUIRE(alpha.cols() == batch.max_len);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double sum = 0.0;
    for (std::size_t t = 0; t < batch.max_len; ++t) {
      const double a = alpha.at(i, t);
      CHECK(a >= 0.0);
      if (t >= batch.lengths[i]) CHECK(a == 0.0);
      sum += a;
    }
    if (batch.lengths[i] > 0) CHECK(std::abs(sum - 1.0) <= 1e-9);
  }

  auto one = batch;
  one.lengths = std::vector<std::size_t>(batch.size(), 1);
  const auto single = attention_weights(model, one);
  CHECK(single.at(0, 0) == 1.0);
  for (std::size_t t = 1; t < one.max_len; ++t) CHECK(single.at(0, t) == 0.0);
}

TEST_CASE("identical hidden states give uniform attention") {
  const auto table = random_table(10, 5, 3);
  NeuralModel model(small_spec(Architecture::BiLstmAttention), table, 41);
  for (auto& [name, t] : model.mutable_params()) {
    if (name.rfind("lstm_", 0) == 0) t.fill(0.0);
  }
  const auto batch = random_batch(model.spec(), *table, 4, 12);
  const auto alpha = attention_weights(model, batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t t = 0; t < batch.lengths[i]; ++t) {
      CHECK(alpha.at(i, t) == doctest::Approx(1.0 / static_cast<double>(batch.lengths[i])));
    }
  }
}

TEST_CASE("an all-pad input with zero output bias predicts one half") {
  const auto table = random_table(10, 5, 3);
  NeuralModel model(small_spec(Architecture::BiLstmAttention), table, 51);
  model.mutable_params().at("output.b").fill(0.0);
  EncodedBatch b;
  b.max_len = 6;
  b.indices.assign(6, 0);
  b.lengths = {0};
  CHECK(predict_proba(model, b)[0] == 0.5);
}

TEST_CASE("one LSTM step matches a hand-evaluated cell") {
  const auto table = std::make_shared<const EmbeddingTable>(std::vector<std::string>{"x"},
                                                            std::vector<double>{0.5}, 1);
  ModelSpec spec;
  spec.architecture = Architecture::Lstm;
  spec.hidden_dim = 1;
  spec.dropout = 0.0;
  spec.max_len = 1;
  NeuralModel model(spec, table, 1);
  auto& p = model.mutable_params();
  // Gate order i, f, g, o.
  p.at("lstm_fwd.W") = Tensor({4, 1}, {1.0, -1.0, 2.0, 0.5});
  p.at("lstm_fwd.U") = Tensor({4, 1}, {0.3, 0.3, 0.3, 0.3});
  p.at("lstm_fwd.b") = Tensor({4}, {0.1, 0.2, -0.3, 0.0});
  p.at("output.W") = Tensor({1, 1}, {2.0});
  p.at("output.b") = Tensor({1}, {-0.2});

  const double x = 0.5;
  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double i = sig(1.0 * x + 0.1);
  const double g = std::tanh(2.0 * x - 0.3);
  const double o = sig(0.5 * x);
  const double c = i * g;  // the previous cell state is zero
  const double h = o * std::tanh(c);

  EncodedBatch b;
  b.max_len = 1;
  b.indices = {static_cast<std::uint32_t>(table->index_of("x"))};
  b.lengths = {1};
  CHECK(predict_proba(model, b)[0] == doctest::Approx(sig(2.0 * h - 0.2)).epsilon(1e-14));
}

TEST_CASE("gradient structure") {
  const auto table = random_table(10, 5, 3);
  SUBCASE("the frozen pad row is disconnected") {
    const NeuralModel model(small_spec(Architecture::Cnn, true), table, 61);
    const auto batch = random_batch(model.spec(), *table, 4, 3);
    const auto g = gradients(model, batch);
    const auto& emb = g.at("embedding");
    for (std::size_t k = 0; k < emb.cols(); ++k) CHECK(emb.at(EmbeddingTable::kPadIndex, k) == 0.0);
  }
  SUBCASE("duplicating the batch leaves mean gradients unchanged") {
    for (auto arch : kAllArchitectures) {
      CAPTURE(to_string(arch));
      const NeuralModel model(small_spec(arch), table, 62);
      const auto batch = random_batch(model.spec(), *table, 4, 3);
      std::vector<std::size_t> twice = {0, 1, 2, 3, 0, 1, 2, 3};
      const auto g1 = gradients(model, batch);
      const auto g2 = gradients(model, batch.select(twice));
      for (const auto& [name, t] : g1) {
        for (std::size_t k = 0; k < t.size(); ++k) CHECK(std::abs(t[k] - g2.at(name)[k]) <= 1e-9);
      }
    }
  }
}

TEST_CASE("inference is deterministic and leaves the random stream alone") {
  const auto table = random_table(10, 5, 3);
  auto spec = small_spec(Architecture::BiLstmAttention);
  spec.dropout = 0.5;
  const NeuralModel model(spec, table, 71);
  const auto batch = random_batch(model.spec(), *table, 5, 4);
  Rng rng(5);
  const Rng before = rng;
  const auto a = forward(model, batch, false, &rng);
  const auto b = forward(model, batch, false, &rng);
  CHECK(a.probabilities == b.probabilities);
  Rng untouched = before;
  CHECK(rng.next() == untouched.next());

  CHECK_THROWS_AS(forward(model, batch, true, nullptr), UsageError);
  CHECK_THROWS_AS(backward(model, a.cache, batch.labels), UsageError);
}

TEST_CASE("a cache from before a parameter update is rejected") {
  const auto table = random_table(10, 5, 3);
  NeuralModel model(small_spec(Architecture::Lstm), table, 81);
  const auto batch = random_batch(model.spec(), *table, 3, 4);
  Rng rng(1);
  const auto fwd = forward(model, batch, true, &rng);
  model.mutable_params().at("output.b")[0] += 1.0;
  CHECK_THROWS_AS(backward(model, fwd.cache, batch.labels), UsageError);
}

TEST_CASE("thread count does not change results") {
  const auto table = random_table(10, 5, 3);
  for (auto arch : kAllArchitectures) {
    CAPTURE(to_string(arch));
    const NeuralModel model(small_spec(arch), table, 91);
    const auto batch = random_batch(model.spec(), *table, 19, 6);
    set_env_threads("1");
    const auto p1 = predict_proba(model, batch);
    const auto g1 = gradients(model, batch);
    set_env_threads("3");
    const auto p3 = predict_proba(model, batch);
    const auto g3 = gradients(model, batch);
    ::unsetenv("OPSPAM_THREADS");
    CHECK(p1 == p3);
    CHECK(g1 == g3);
  }
}

TEST_CASE("bce loss clamps extreme probabilities") {
  const std::vector<double> p = {0.0, 1.0};
  const std::vector<int> y = {1, 0};
  CHECK(bce_loss(p, y) == doctest::Approx(-std::log(kProbClamp)));
  CHECK(bce_loss(std::vector<double>{0.5}, std::vector<int>{1}) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(bce_loss(p, std::vector<int>{1}), DimensionError);
}

TEST_CASE("parameters round-trip through JSON bit-exactly") {
  const auto table = random_table(10, 5, 3);
  const NeuralModel model(small_spec(Architecture::RecurrentCnn), table, 101);
  const auto batch = random_batch(model.spec(), *table, 5, 4);
  const auto json = nlohmann::json::parse(params_to_json(model.params()).dump());
  const NeuralModel back(ModelSpec::from_json(model.spec().to_json()), table,
                         params_from_json(json));
  CHECK(predict_proba(back, batch) == predict_proba(model, batch));
}

TEST_CASE("training is reproducible and validates its configuration") {
  const auto table = random_table(10, 5, 3);
  const auto spec = small_spec(Architecture::Cnn);
  const auto data = random_batch(spec, *table, 20, 4);
  const auto val = random_batch(spec, *table, 6, 5);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  const auto a = train(spec, table, cfg, data, &val);
  const auto b = train(spec, table, cfg, data, &val);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].train_loss == b.history[e].train_loss);
    CHECK(a.history[e].val_loss == b.history[e].val_loss);
  }
  CHECK(a.model.params() == b.model.params());
  CHECK(a.best_epoch >= 1);

  std::ostringstream csv;
  write_history_csv(csv, a.history);
  CHECK(csv.str().rfind("epoch,train_loss,train_acc,val_loss,val_acc\n", 0) == 0);

  cfg.epochs = 0;
  CHECK_THROWS_AS(train(spec, table, cfg, data, &val), UsageError);
}

TEST_CASE("attention model memorizes 32 fixture reviews") {
  test::TempDir dir;
  make_fixture(8, 3, dir.path());
  write_fixture_embeddings(16, 3, dir / "emb.txt");
  const auto docs = load_corpus(dir.path());
  REQUIRE(docs.size() == 32);
  const auto table = std::make_shared<const EmbeddingTable>(load_embeddings(dir / "emb.txt"));

  std::vector<TokenSequence> seqs;
  std::vector<int> labels;
  for (const auto& d : docs) {
    seqs.push_back(preprocess(d.id, d.text, PipelineConfig::neural_defaults()));
    labels.push_back(d.label_value());
  }
  ModelSpec spec;
  spec.architecture = Architecture::BiLstmAttention;
  spec.hidden_dim = 16;
  spec.dropout = 0.0;
  spec.max_len = 40;
  const auto batch = encode_batch(seqs, labels, *table, spec.max_len);

  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.patience = 0;
  cfg.learning_rate = 1e-2;
  const auto result = train(spec, table, cfg, batch);
  double best = 0.0;
  for (const auto& rec : result.history) best = std::max(best, rec.train_acc);
  CHECK(best == 1.0);
}
