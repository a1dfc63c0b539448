#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "opspam/error.hpp"
#include "opspam/neural.hpp"

namespace opspam {

const char* to_string(Architecture arch) {
  switch (arch) {
    case Architecture::Cnn:
      return "cnn";
    case Architecture::Lstm:
      return "lstm";
    case Architecture::BiLstm:
      return "bilstm";
    case Architecture::RecurrentCnn:
      return "rcnn";
    case Architecture::BiLstmAttention:
      return "bilstm-attn";
  }
  return "?";
}

Architecture parse_architecture(const std::string& name) {
  for (auto a : {Architecture::Cnn, Architecture::Lstm, Architecture::BiLstm,
                 Architecture::RecurrentCnn, Architecture::BiLstmAttention}) {
    if (name == to_string(a)) return a;
  }
  throw UsageError("unknown architecture '" + name +
                   "' (expected cnn, lstm, bilstm, rcnn or bilstm-attn)");
}

bool ModelSpec::uses_cnn() const {
  return architecture == Architecture::Cnn || architecture == Architecture::RecurrentCnn;
}

bool ModelSpec::uses_lstm() const { return architecture != Architecture::Cnn; }

bool ModelSpec::bidirectional() const {
  return architecture == Architecture::BiLstm || architecture == Architecture::RecurrentCnn ||
         architecture == Architecture::BiLstmAttention;
}

std::size_t ModelSpec::feature_dim() const {
  switch (architecture) {
    case Architecture::Cnn:
      return filters * filter_widths.size();
    case Architecture::Lstm:
      return hidden_dim;
    case Architecture::BiLstm:
    case Architecture::BiLstmAttention:
      return 2 * hidden_dim;
    case Architecture::RecurrentCnn:
      return filters * filter_widths.size() + 2 * hidden_dim + doc_feature_dim;
  }
  return 0;
}

void ModelSpec::validate() const {
  if (embedding_dim < 1) throw UsageError("embedding_dim must be >= 1");
  if (hidden_dim < 1) throw UsageError("hidden_dim must be >= 1");
  if (max_len < 1) throw UsageError("max_len must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("dropout must lie in [0, 1)");
  if (uses_cnn()) {
    if (filters < 1) throw UsageError("filters must be >= 1");
    if (filter_widths.empty()) throw UsageError("at least one filter width is required");
    for (auto w : filter_widths) {
      if (w < 1) throw UsageError("filter widths must be >= 1");
    }
  }
  if (architecture == Architecture::RecurrentCnn) {
    if (doc_input_dim < 1) throw UsageError("rcnn needs a document feature input (doc_input_dim)");
    if (doc_feature_dim < 1) throw UsageError("doc_feature_dim must be >= 1");
  }
}

nlohmann::json ModelSpec::to_json() const {
  return {{"architecture", to_string(architecture)},
          {"embedding_dim", embedding_dim},
          {"hidden_dim", hidden_dim},
          {"filter_widths", filter_widths},
          {"filters", filters},
          {"dropout", dropout},
          {"max_len", max_len},
          {"doc_input_dim", doc_input_dim},
          {"doc_feature_dim", doc_feature_dim},
          {"trainable_embeddings", trainable_embeddings}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  try {
    ModelSpec s;
    s.architecture = parse_architecture(j.at("architecture").get<std::string>());
    s.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    s.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    s.filter_widths = j.at("filter_widths").get<std::vector<std::size_t>>();
    s.filters = j.at("filters").get<std::size_t>();
    s.dropout = j.at("dropout").get<double>();
    s.max_len = j.at("max_len").get<std::size_t>();
    s.doc_input_dim = j.at("doc_input_dim").get<std::size_t>();
    s.doc_feature_dim = j.at("doc_feature_dim").get<std::size_t>();
    s.trainable_embeddings = j.at("trainable_embeddings").get<bool>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model spec: ") + e.what());
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning rate must be > 0");
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (patience < 0) throw UsageError("patience must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    throw UsageError("invalid Adam hyperparameters");
  }
}

namespace {

std::string conv_name(std::size_t width, const char* field) {
  return "conv" + std::to_string(width) + "." + field;
}

// Expected parameter shapes with the fan-in used for initialization.
std::vector<std::tuple<std::string, std::vector<std::size_t>, std::size_t>> param_layout(
    const ModelSpec& s, std::size_t embedding_rows) {
  std::vector<std::tuple<std::string, std::vector<std::size_t>, std::size_t>> out;
  const auto e = s.embedding_dim;
  const auto h = s.hidden_dim;
  if (s.trainable_embeddings) out.emplace_back("embedding", std::vector{embedding_rows, e}, 0);
  if (s.uses_cnn()) {
    for (auto w : s.filter_widths) {
      out.emplace_back(conv_name(w, "W"), std::vector{s.filters, w * e}, w * e);
      out.emplace_back(conv_name(w, "b"), std::vector{s.filters}, w * e);
    }
  }
  if (s.uses_lstm()) {
    for (const char* dir : {"lstm_fwd", "lstm_bwd"}) {
      if (std::string(dir) == "lstm_bwd" && !s.bidirectional()) break;
      out.emplace_back(std::string(dir) + ".W", std::vector{4 * h, e}, e);
      out.emplace_back(std::string(dir) + ".U", std::vector{4 * h, h}, h);
      out.emplace_back(std::string(dir) + ".b", std::vector{4 * h}, h);
    }
  }
  if (s.architecture == Architecture::BiLstmAttention) {
    out.emplace_back("attention.w", std::vector{2 * h}, 2 * h);
  }
  if (s.architecture == Architecture::RecurrentCnn) {
    out.emplace_back("doc_proj.W", std::vector{s.doc_feature_dim, s.doc_input_dim},
                     s.doc_input_dim);
    out.emplace_back("doc_proj.b", std::vector{s.doc_feature_dim}, s.doc_input_dim);
  }
  out.emplace_back("output.W", std::vector<std::size_t>{1, s.feature_dim()}, s.feature_dim());
  out.emplace_back("output.b", std::vector<std::size_t>{1}, s.feature_dim());
  return out;
}

}  // namespace

NeuralModel::NeuralModel(ModelSpec spec, std::shared_ptr<const EmbeddingTable> table,
                         std::uint64_t init_seed)
    : spec_(std::move(spec)), table_(std::move(table)) {
  if (!table_) throw UsageError("neural model needs an embedding table");
  if (spec_.embedding_dim == 0) spec_.embedding_dim = table_->dim();
  spec_.validate();
  Rng rng(init_seed);
  for (const auto& [name, shape, fan_in] : param_layout(spec_, table_->rows())) {
    Tensor t(shape);
    if (name == "embedding") {
      std::copy(table_->matrix().begin(), table_->matrix().end(), t.data());
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.values()) v = rng.uniform(-bound, bound);
    }
    params_.emplace(name, std::move(t));
  }
  check_params();
}

NeuralModel::NeuralModel(ModelSpec spec, std::shared_ptr<const EmbeddingTable> table,
                         ParamSet params)
    : spec_(std::move(spec)), table_(std::move(table)), params_(std::move(params)) {
  if (!table_) throw UsageError("neural model needs an embedding table");
  spec_.validate();
  check_params();
}

void NeuralModel::check_params() const {
  if (spec_.embedding_dim != table_->dim()) {
    throw DimensionError("model expects " + std::to_string(spec_.embedding_dim) +
                         "-dimensional embeddings, table has " + std::to_string(table_->dim()));
  }
  const auto layout = param_layout(spec_, table_->rows());
  if (layout.size() != params_.size()) {
    throw DimensionError("model has " + std::to_string(params_.size()) + " parameters, " +
                         std::string(to_string(spec_.architecture)) + " needs " +
                         std::to_string(layout.size()));
  }
  for (const auto& [name, shape, fan_in] : layout) {
    const auto it = params_.find(name);
    if (it == params_.end()) throw DimensionError("missing parameter '" + name + "'");
    if (it->second.shape() != shape) throw DimensionError("parameter '" + name + "' has wrong shape");
  }
}

ParamSet& NeuralModel::mutable_params() {
  ++generation_;
  return params_;
}

const double* NeuralModel::embedding_row(std::size_t idx) const {
  if (spec_.trainable_embeddings) {
    return params_.at("embedding").data() + idx * spec_.embedding_dim;
  }
  return table_->matrix().data() + idx * spec_.embedding_dim;
}

namespace {

// Samples are cut into a fixed number of contiguous partitions so that the
// gradient reduction order, and hence every result bit, does not depend on
// how many threads run them.
constexpr std::size_t kPartitions = 8;

std::pair<std::size_t, std::size_t> partition_range(std::size_t n, std::size_t parts,
                                                    std::size_t p) {
  return {n * p / parts, n * (p + 1) / parts};
}

std::size_t worker_count() {
  if (const char* env = std::getenv("OPSPAM_THREADS"); env && *env) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

template <typename Fn>
void run_partitions(std::size_t parts, Fn&& fn) {
  const auto threads = std::min(worker_count(), parts);
  if (threads <= 1) {
    for (std::size_t p = 0; p < parts; ++p) fn(p);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (auto p = next++; p < parts; p = next++) {
          try {
            fn(p);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// y += W x, W is rows x cols.
void gemv_add(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

// y += W^T v.
void gemv_t_add(const double* w, std::size_t rows, std::size_t cols, const double* v, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w + r * cols;
    const double vr = v[r];
    if (vr == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) y[c] += wr[c] * vr;
  }
}

// G += a b^T.
void outer_add(double* g, std::size_t rows, std::size_t cols, const double* a, const double* b) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    double* gr = g + r * cols;
    for (std::size_t c = 0; c < cols; ++c) gr[c] += ar * b[c];
  }
}

void require_finite(std::span<const double> values, const char* layer) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite activation in layer ") + layer);
  }
}

struct LstmRefs {
  const double* w = nullptr;
  const double* u = nullptr;
  const double* b = nullptr;
};

struct LstmGrads {
  double* w = nullptr;
  double* u = nullptr;
  double* b = nullptr;
};

void lstm_forward(const LstmRefs& p, const std::vector<double>& x, std::size_t len,
                  std::size_t e, std::size_t h, bool reverse, detail::LstmTrace& tr) {
  tr.gates.assign(len * 4 * h, 0.0);
  tr.c.assign(len * h, 0.0);
  tr.h.assign(len * h, 0.0);
  std::vector<double> zeros(h, 0.0);
  std::vector<double> a(4 * h);
  const double* h_prev = zeros.data();
  const double* c_prev = zeros.data();
  for (std::size_t k = 0; k < len; ++k) {
    const std::size_t t = reverse ? len - 1 - k : k;
    std::copy(p.b, p.b + 4 * h, a.begin());
    gemv_add(p.w, 4 * h, e, x.data() + t * e, a.data());
    gemv_add(p.u, 4 * h, h, h_prev, a.data());
    double* g = tr.gates.data() + t * 4 * h;
    double* c = tr.c.data() + t * h;
    double* hs = tr.h.data() + t * h;
    for (std::size_t j = 0; j < h; ++j) {
      const double ig = sigmoid(a[j]);
      const double fg = sigmoid(a[h + j]);
      const double gg = std::tanh(a[2 * h + j]);
      const double og = sigmoid(a[3 * h + j]);
      g[j] = ig;
      g[h + j] = fg;
      g[2 * h + j] = gg;
      g[3 * h + j] = og;
      c[j] = fg * c_prev[j] + ig * gg;
      hs[j] = og * std::tanh(c[j]);
    }
    h_prev = hs;
    c_prev = c;
  }
}

// dh_by_time is L x H (gradient arriving at each step's output). dx, when
// non-null, receives L x E input gradients.
void lstm_backward(const LstmRefs& p, const LstmGrads& gr, const detail::LstmTrace& tr,
                   const std::vector<double>& x, const std::vector<double>& dh_by_time,
                   std::size_t len, std::size_t e, std::size_t h, bool reverse,
                   std::vector<double>* dx) {
  std::vector<double> dh_next(h, 0.0);
  std::vector<double> dc_next(h, 0.0);
  std::vector<double> zeros(h, 0.0);
  std::vector<double> da(4 * h);
  for (std::size_t kk = len; kk-- > 0;) {
    const std::size_t t = reverse ? len - 1 - kk : kk;
    const bool has_prev = kk > 0;
    const std::size_t tp = reverse ? t + 1 : t - 1;
    const double* c_prev = has_prev ? tr.c.data() + tp * h : zeros.data();
    const double* h_prev = has_prev ? tr.h.data() + tp * h : zeros.data();
    const double* g = tr.gates.data() + t * 4 * h;
    const double* c = tr.c.data() + t * h;
    for (std::size_t j = 0; j < h; ++j) {
      const double ig = g[j];
      const double fg = g[h + j];
      const double gg = g[2 * h + j];
      const double og = g[3 * h + j];
      const double tc = std::tanh(c[j]);
      const double dh = dh_by_time[t * h + j] + dh_next[j];
      const double d_o = dh * tc;
      const double dc = dc_next[j] + dh * og * (1.0 - tc * tc);
      da[j] = dc * gg * ig * (1.0 - ig);
      da[h + j] = dc * c_prev[j] * fg * (1.0 - fg);
      da[2 * h + j] = dc * ig * (1.0 - gg * gg);
      da[3 * h + j] = d_o * og * (1.0 - og);
      dc_next[j] = dc * fg;
    }
    outer_add(gr.w, 4 * h, e, da.data(), x.data() + t * e);
    outer_add(gr.u, 4 * h, h, da.data(), h_prev);
    for (std::size_t j = 0; j < 4 * h; ++j) gr.b[j] += da[j];
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    gemv_t_add(p.u, 4 * h, h, da.data(), dh_next.data());
    if (dx) gemv_t_add(p.w, 4 * h, e, da.data(), dx->data() + t * e);
  }
}

// Max over valid windows of relu(conv). A window starts at t and covers
// t..t+w-1; positions at or beyond `len` read as the zero pad vector. There
// is one window per start in [0, max(len - w, 0)], none when len == 0.
void conv_forward(const double* w, const double* b, std::size_t width, std::size_t filters,
                  const std::vector<double>& x, std::size_t len, std::size_t e,
                  std::vector<double>& pooled, std::vector<int>& argmax) {
  pooled.assign(filters, 0.0);
  argmax.assign(filters, -1);
  if (len == 0) return;
  const std::size_t n_windows = len >= width ? len - width + 1 : 1;
  std::vector<double> best(filters, -std::numeric_limits<double>::infinity());
  std::vector<int> best_t(filters, 0);
  for (std::size_t t = 0; t < n_windows; ++t) {
    const std::size_t span = std::min(width, len - t);
    for (std::size_t f = 0; f < filters; ++f) {
      const double* wf = w + f * width * e;
      double acc = b[f];
      for (std::size_t k = 0; k < span * e; ++k) acc += wf[k] * x[t * e + k];
      if (acc > best[f]) {
        best[f] = acc;
        best_t[f] = static_cast<int>(t);
      }
    }
  }
  for (std::size_t f = 0; f < filters; ++f) {
    if (best[f] > 0.0) {
      pooled[f] = best[f];
      argmax[f] = best_t[f];
    }
  }
}

void conv_backward(const double* w, double* gw, double* gb, std::size_t width, std::size_t filters,
                   const std::vector<double>& x, std::size_t len, std::size_t e,
                   const std::vector<int>& argmax, const double* d_pooled, std::vector<double>* dx) {
  for (std::size_t f = 0; f < filters; ++f) {
    if (argmax[f] < 0 || d_pooled[f] == 0.0) continue;
    const auto t = static_cast<std::size_t>(argmax[f]);
    const std::size_t span = std::min(width, len - t);
    const double d = d_pooled[f];
    gb[f] += d;
    double* gwf = gw + f * width * e;
    const double* wf = w + f * width * e;
    for (std::size_t k = 0; k < span * e; ++k) {
      gwf[k] += d * x[t * e + k];
      if (dx) (*dx)[t * e + k] += d * wf[k];
    }
  }
}

// Masked softmax attention over the L valid BiLSTM states.
void attention_forward(const double* aw, std::size_t len, std::size_t width,
                       detail::SampleCache& s) {
  s.alpha.assign(len, 0.0);
  s.r.assign(width, 0.0);
  s.hstar.assign(width, 0.0);
  if (len == 0) return;
  std::vector<double> scores(len, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    const double* ht = s.states.data() + t * width;
    double acc = 0.0;
    for (std::size_t j = 0; j < width; ++j) acc += aw[j] * std::tanh(ht[j]);
    scores[t] = acc;
  }
  const double top = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    s.alpha[t] = std::exp(scores[t] - top);
    z += s.alpha[t];
  }
  for (auto& a : s.alpha) a /= z;
  for (std::size_t t = 0; t < len; ++t) {
    const double* ht = s.states.data() + t * width;
    for (std::size_t j = 0; j < width; ++j) s.r[j] += s.alpha[t] * ht[j];
  }
  for (std::size_t j = 0; j < width; ++j) s.hstar[j] = std::tanh(s.r[j]);
}

// Returns dStates (L x width) given dh* and accumulates the attention-vector
// gradient.
std::vector<double> attention_backward(const double* aw, double* gaw, std::size_t len,
                                       std::size_t width, const detail::SampleCache& s,
                                       const double* d_hstar) {
  std::vector<double> d_states(len * width, 0.0);
  if (len == 0) return d_states;
  std::vector<double> dr(width);
  for (std::size_t j = 0; j < width; ++j) dr[j] = d_hstar[j] * (1.0 - s.hstar[j] * s.hstar[j]);
  std::vector<double> d_alpha(len, 0.0);
  double weighted = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    const double* ht = s.states.data() + t * width;
    double acc = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      acc += ht[j] * dr[j];
      d_states[t * width + j] += s.alpha[t] * dr[j];
    }
    d_alpha[t] = acc;
    weighted += s.alpha[t] * acc;
  }
  for (std::size_t t = 0; t < len; ++t) {
    const double d_score = s.alpha[t] * (d_alpha[t] - weighted);
    if (d_score == 0.0) continue;
    const double* ht = s.states.data() + t * width;
    for (std::size_t j = 0; j < width; ++j) {
      const double m = std::tanh(ht[j]);
      gaw[j] += d_score * m;
      d_states[t * width + j] += d_score * aw[j] * (1.0 - m * m);
    }
  }
  return d_states;
}

struct Refs {
  std::vector<const double*> conv_w;
  std::vector<const double*> conv_b;
  LstmRefs fwd;
  LstmRefs bwd;
  const double* attention = nullptr;
  const double* doc_w = nullptr;
  const double* doc_b = nullptr;
  const double* out_w = nullptr;
  double out_b = 0.0;
};

Refs resolve(const NeuralModel& model) {
  const auto& p = model.params();
  const auto& s = model.spec();
  Refs r;
  if (s.uses_cnn()) {
    for (auto w : s.filter_widths) {
      r.conv_w.push_back(p.at(conv_name(w, "W")).data());
      r.conv_b.push_back(p.at(conv_name(w, "b")).data());
    }
  }
  if (s.uses_lstm()) {
    r.fwd = {p.at("lstm_fwd.W").data(), p.at("lstm_fwd.U").data(), p.at("lstm_fwd.b").data()};
    if (s.bidirectional()) {
      r.bwd = {p.at("lstm_bwd.W").data(), p.at("lstm_bwd.U").data(), p.at("lstm_bwd.b").data()};
    }
  }
  if (s.architecture == Architecture::BiLstmAttention) r.attention = p.at("attention.w").data();
  if (s.architecture == Architecture::RecurrentCnn) {
    r.doc_w = p.at("doc_proj.W").data();
    r.doc_b = p.at("doc_proj.b").data();
  }
  r.out_w = p.at("output.W").data();
  r.out_b = p.at("output.b")[0];
  return r;
}

void check_batch(const NeuralModel& model, const EncodedBatch& batch) {
  const auto& s = model.spec();
  const auto rows = model.table().rows();
  for (auto idx : batch.indices) {
    if (idx >= rows) {
      throw DimensionError("batch index " + std::to_string(idx) +
                           " is outside the embedding table (" + std::to_string(rows) + " rows)");
    }
  }
  if (s.architecture == Architecture::RecurrentCnn &&
      (batch.doc_feature_dim != s.doc_input_dim ||
       batch.doc_features.size() != batch.size() * s.doc_input_dim)) {
    throw DimensionError("rcnn expects " + std::to_string(s.doc_input_dim) +
                         "-dimensional document features, batch has " +
                         std::to_string(batch.doc_feature_dim));
  }
}

void forward_sample(const NeuralModel& model, const Refs& r, const EncodedBatch& batch,
                    std::size_t i, const std::vector<double>* dropout_mask,
                    detail::SampleCache& s) {
  const auto& spec = model.spec();
  const auto e = spec.embedding_dim;
  const auto h = spec.hidden_dim;
  s.length = std::min(batch.lengths[i], batch.max_len);
  const auto len = s.length;
  s.tokens.resize(len);
  s.x.resize(len * e);
  for (std::size_t t = 0; t < len; ++t) {
    s.tokens[t] = batch.at(i, t);
    const double* row = model.embedding_row(s.tokens[t]);
    std::copy(row, row + e, s.x.begin() + static_cast<std::ptrdiff_t>(t * e));
  }

  s.features.clear();
  if (spec.uses_cnn()) {
    s.conv_pooled.resize(spec.filter_widths.size());
    s.conv_argmax.resize(spec.filter_widths.size());
    for (std::size_t k = 0; k < spec.filter_widths.size(); ++k) {
      conv_forward(r.conv_w[k], r.conv_b[k], spec.filter_widths[k], spec.filters, s.x, len, e,
                   s.conv_pooled[k], s.conv_argmax[k]);
      require_finite(s.conv_pooled[k], "conv");
      s.features.insert(s.features.end(), s.conv_pooled[k].begin(), s.conv_pooled[k].end());
    }
  }
  if (spec.uses_lstm()) {
    lstm_forward(r.fwd, s.x, len, e, h, false, s.fwd);
    require_finite(s.fwd.h, "lstm_fwd");
    if (spec.bidirectional()) {
      lstm_forward(r.bwd, s.x, len, e, h, true, s.bwd);
      require_finite(s.bwd.h, "lstm_bwd");
    }
    if (spec.architecture == Architecture::BiLstmAttention) {
      s.states.assign(len * 2 * h, 0.0);
      for (std::size_t t = 0; t < len; ++t) {
        std::copy_n(s.fwd.h.begin() + static_cast<std::ptrdiff_t>(t * h), h,
                    s.states.begin() + static_cast<std::ptrdiff_t>(t * 2 * h));
        std::copy_n(s.bwd.h.begin() + static_cast<std::ptrdiff_t>(t * h), h,
                    s.states.begin() + static_cast<std::ptrdiff_t>(t * 2 * h + h));
      }
      attention_forward(r.attention, len, 2 * h, s);
      require_finite(s.hstar, "attention");
      s.features.insert(s.features.end(), s.hstar.begin(), s.hstar.end());
    } else {
      // Final states: forward reads up to len-1, backward ends at position 0.
      std::vector<double> last_fwd(h, 0.0);
      std::vector<double> last_bwd(h, 0.0);
      if (len > 0) {
        std::copy_n(s.fwd.h.begin() + static_cast<std::ptrdiff_t>((len - 1) * h), h, last_fwd.begin());
        if (spec.bidirectional()) std::copy_n(s.bwd.h.begin(), h, last_bwd.begin());
      }
      s.features.insert(s.features.end(), last_fwd.begin(), last_fwd.end());
      if (spec.bidirectional()) s.features.insert(s.features.end(), last_bwd.begin(), last_bwd.end());
    }
  }
  if (spec.architecture == Architecture::RecurrentCnn) {
    const auto din = spec.doc_input_dim;
    const auto dout = spec.doc_feature_dim;
    s.doc_in.assign(batch.doc_features.begin() + static_cast<std::ptrdiff_t>(i * din),
                    batch.doc_features.begin() + static_cast<std::ptrdiff_t>((i + 1) * din));
    s.doc_out.assign(r.doc_b, r.doc_b + dout);
    gemv_add(r.doc_w, dout, din, s.doc_in.data(), s.doc_out.data());
    for (auto& v : s.doc_out) v = std::tanh(v);
    require_finite(s.doc_out, "doc_proj");
    s.features.insert(s.features.end(), s.doc_out.begin(), s.doc_out.end());
  }

  s.dropout_scale.clear();
  if (dropout_mask) s.dropout_scale = *dropout_mask;
  double z = r.out_b;
  for (std::size_t j = 0; j < s.features.size(); ++j) {
    const double f = s.dropout_scale.empty() ? s.features[j] : s.features[j] * s.dropout_scale[j];
    z += r.out_w[j] * f;
  }
  if (!std::isfinite(z)) throw NumericError("non-finite activation in layer output");
  s.logit = z;
  s.prob = sigmoid(z);
}

void backward_sample(const NeuralModel& model, const Refs& refs, const detail::SampleCache& s,
                     int label, double n, ParamSet& grads) {
  const auto& spec = model.spec();
  const auto e = spec.embedding_dim;
  const auto h = spec.hidden_dim;
  std::vector<double*> g_conv_w;
  std::vector<double*> g_conv_b;
  if (spec.uses_cnn()) {
    for (auto w : spec.filter_widths) {
      g_conv_w.push_back(grads.at(conv_name(w, "W")).data());
      g_conv_b.push_back(grads.at(conv_name(w, "b")).data());
    }
  }
  LstmGrads g_fwd;
  LstmGrads g_bwd;
  if (spec.uses_lstm()) {
    g_fwd = {grads.at("lstm_fwd.W").data(), grads.at("lstm_fwd.U").data(),
             grads.at("lstm_fwd.b").data()};
    if (spec.bidirectional()) {
      g_bwd = {grads.at("lstm_bwd.W").data(), grads.at("lstm_bwd.U").data(),
               grads.at("lstm_bwd.b").data()};
    }
  }
  double* g_out_w = grads.at("output.W").data();
  double* g_out_b = grads.at("output.b").data();
  const auto len = s.length;
  // Gradient of the clamped cross-entropy: zero where the clamp is active.
  const bool clamped = s.prob < kProbClamp || s.prob > 1.0 - kProbClamp;
  const double dz = clamped ? 0.0 : (s.prob - static_cast<double>(label)) / n;
  if (dz == 0.0) return;

  std::vector<double> d_features(s.features.size());
  for (std::size_t j = 0; j < s.features.size(); ++j) {
    const double scale = s.dropout_scale.empty() ? 1.0 : s.dropout_scale[j];
    g_out_w[j] += dz * s.features[j] * scale;
    d_features[j] = dz * refs.out_w[j] * scale;
  }
  g_out_b[0] += dz;

  std::vector<double> dx;
  std::vector<double>* dx_ptr = nullptr;
  if (spec.trainable_embeddings) {
    dx.assign(len * e, 0.0);
    dx_ptr = &dx;
  }

  std::size_t offset = 0;
  if (spec.uses_cnn()) {
    for (std::size_t k = 0; k < spec.filter_widths.size(); ++k) {
      conv_backward(refs.conv_w[k], g_conv_w[k], g_conv_b[k], spec.filter_widths[k],
                    spec.filters, s.x, len, e, s.conv_argmax[k], d_features.data() + offset,
                    dx_ptr);
      offset += spec.filters;
    }
  }
  if (spec.uses_lstm() && len > 0) {
    std::vector<double> dh_fwd(len * h, 0.0);
    std::vector<double> dh_bwd(spec.bidirectional() ? len * h : 0, 0.0);
    if (spec.architecture == Architecture::BiLstmAttention) {
      const auto d_states = attention_backward(refs.attention, grads.at("attention.w").data(),
                                               len, 2 * h, s, d_features.data() + offset);
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t j = 0; j < h; ++j) {
          dh_fwd[t * h + j] = d_states[t * 2 * h + j];
          dh_bwd[t * h + j] = d_states[t * 2 * h + h + j];
        }
      }
    } else {
      for (std::size_t j = 0; j < h; ++j) dh_fwd[(len - 1) * h + j] = d_features[offset + j];
      if (spec.bidirectional()) {
        for (std::size_t j = 0; j < h; ++j) dh_bwd[j] = d_features[offset + h + j];
      }
    }
    lstm_backward(refs.fwd, g_fwd, s.fwd, s.x, dh_fwd, len, e, h, false, dx_ptr);
    if (spec.bidirectional()) {
      lstm_backward(refs.bwd, g_bwd, s.bwd, s.x, dh_bwd, len, e, h, true, dx_ptr);
    }
  }
  if (spec.uses_lstm()) offset += spec.bidirectional() ? 2 * h : h;
  if (spec.architecture == Architecture::RecurrentCnn) {
    const auto din = spec.doc_input_dim;
    const auto dout = spec.doc_feature_dim;
    std::vector<double> d_pre(dout);
    for (std::size_t j = 0; j < dout; ++j) {
      d_pre[j] = d_features[offset + j] * (1.0 - s.doc_out[j] * s.doc_out[j]);
    }
    outer_add(grads.at("doc_proj.W").data(), dout, din, d_pre.data(), s.doc_in.data());
    double* gb = grads.at("doc_proj.b").data();
    for (std::size_t j = 0; j < dout; ++j) gb[j] += d_pre[j];
  }

  if (dx_ptr) {
    double* g_emb = grads.at("embedding").data();
    for (std::size_t t = 0; t < len; ++t) {
      if (s.tokens[t] == EmbeddingTable::kPadIndex) continue;
      double* row = g_emb + static_cast<std::size_t>(s.tokens[t]) * e;
      for (std::size_t k = 0; k < e; ++k) row[k] += dx[t * e + k];
    }
  }
}

}  // namespace

ForwardResult forward(const NeuralModel& model, const EncodedBatch& batch, bool train_mode,
                      Rng* dropout_rng) {
  check_batch(model, batch);
  const auto& spec = model.spec();
  const auto refs = resolve(model);
  // Masks are drawn up front, sample by sample, so the generator sequence
  // does not depend on scheduling.
  std::vector<std::vector<double>> masks;
  if (train_mode && spec.dropout > 0.0) {
    if (!dropout_rng) throw UsageError("dropout in training mode needs a random generator");
    const double keep = 1.0 - spec.dropout;
    masks.assign(batch.size(), std::vector<double>(spec.feature_dim()));
    for (auto& mask : masks) {
      for (auto& m : mask) m = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    }
  }
  ForwardResult out;
  out.cache.model = &model;
  out.cache.generation = model.generation();
  out.cache.train_mode = train_mode;
  out.cache.samples.resize(batch.size());
  out.probabilities.resize(batch.size());
  const auto parts = std::min(kPartitions, batch.size());
  run_partitions(parts, [&](std::size_t p) {
    const auto [lo, hi] = partition_range(batch.size(), parts, p);
    for (std::size_t i = lo; i < hi; ++i) {
      forward_sample(model, refs, batch, i, masks.empty() ? nullptr : &masks[i],
                     out.cache.samples[i]);
      out.probabilities[i] = out.cache.samples[i].prob;
    }
  });
  return out;
}

double bce_loss(std::span<const double> probs, std::span<const int> labels) {
  if (probs.size() != labels.size() || probs.empty()) {
    throw DimensionError("bce_loss: need equal, non-zero numbers of probabilities and labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
    total -= labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

ParamSet backward(const NeuralModel& model, const ForwardCache& cache,
                  std::span<const int> labels) {
  if (cache.model != &model || cache.generation != model.generation()) {
    throw UsageError("stale forward cache: parameters changed since the forward pass");
  }
  if (!cache.train_mode) throw UsageError("backward needs a cache from a training-mode forward pass");
  if (labels.size() != cache.samples.size() || labels.empty()) {
    throw DimensionError("backward: label count does not match the cached batch");
  }
  const auto refs = resolve(model);
  const double n = static_cast<double>(labels.size());
  const auto parts = std::min(kPartitions, labels.size());
  std::vector<ParamSet> partial(parts);
  run_partitions(parts, [&](std::size_t p) {
    partial[p] = zeros_like(model.params());
    const auto [lo, hi] = partition_range(labels.size(), parts, p);
    for (std::size_t i = lo; i < hi; ++i) {
      backward_sample(model, refs, cache.samples[i], labels[i], n, partial[p]);
    }
  });
  ParamSet grads = std::move(partial[0]);
  for (std::size_t p = 1; p < parts; ++p) {
    for (auto& [name, g] : grads) {
      const auto& other = partial[p].at(name);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += other[k];
    }
  }
  return grads;
}

Tensor attention_weights(const NeuralModel& model, const EncodedBatch& batch) {
  if (model.spec().architecture != Architecture::BiLstmAttention) {
    throw UsageError(std::string("attention weights need a bilstm-attn model, got ") +
                     to_string(model.spec().architecture));
  }
  const auto result = forward(model, batch, false);
  Tensor out({batch.size(), batch.max_len});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& alpha = result.cache.samples[i].alpha;
    for (std::size_t t = 0; t < alpha.size(); ++t) out.at(i, t) = alpha[t];
  }
  return out;
}

}  // namespace opspam
