#include "opspam/embeddings.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <fstream>

#include "opspam/error.hpp"
#include "opspam/features.hpp"
#include "opspam/rng.hpp"

namespace opspam {

EmbeddingTable::EmbeddingTable(std::vector<std::string> tokens, std::vector<double> vectors,
                               std::size_t dim, std::uint64_t oov_seed)
    : dim_(dim), oov_seed_(oov_seed), tokens_(std::move(tokens)) {
  if (dim_ == 0) throw UsageError("embedding dim must be >= 1");
  if (vectors.size() != tokens_.size() * dim_) {
    throw DimensionError("embedding matrix has " + std::to_string(vectors.size()) +
                         " values, expected " + std::to_string(tokens_.size() * dim_));
  }
  matrix_.assign(2 * dim_, 0.0);
  Rng rng(oov_seed_);
  for (std::size_t k = 0; k < dim_; ++k) matrix_[dim_ + k] = rng.uniform(-kOovRange, kOovRange);
  matrix_.insert(matrix_.end(), vectors.begin(), vectors.end());
  vocab_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!vocab_.emplace(tokens_[i], i + 2).second) {
      throw ParseError("duplicate embedding token '" + tokens_[i] + "'");
    }
  }
}

std::size_t EmbeddingTable::index_of(const std::string& token) const {
  const auto it = vocab_.find(token);
  return it == vocab_.end() ? kOovIndex : it->second;
}

std::span<const double> EmbeddingTable::row(std::size_t index) const {
  if (index >= rows()) throw DimensionError("embedding row out of range");
  return std::span<const double>(matrix_).subspan(index * dim_, dim_);
}

std::uint64_t EmbeddingTable::content_hash() const {
  auto h = fnv1a(std::to_string(dim_) + ":" + std::to_string(oov_seed_));
  for (const auto& t : tokens_) h = fnv1a(t + '\n', h);
  for (double v : matrix_) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(&bits), sizeof bits), h);
  }
  return h;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const auto start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  const auto* first = s.data();
  if (!s.empty() && s.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool is_integer(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

EmbeddingTable load_embeddings(const std::filesystem::path& path,
                               std::optional<std::size_t> expected_dim,
                               const std::unordered_set<std::string>* restrict_to,
                               std::uint64_t oov_seed) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open embedding file " + path.string());

  std::vector<std::string> tokens;
  std::unordered_set<std::string> seen;
  std::vector<double> values;
  std::optional<std::size_t> dim = expected_dim;
  std::string line;
  std::size_t line_no = 0;
  std::size_t entries = 0;
  const auto fail = [&](const std::string& what) -> void {
    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };

  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2 && is_integer(fields[0]) && is_integer(fields[1])) {
      const auto header_dim = std::stoul(std::string(fields[1]));
      if (dim && *dim != header_dim) {
        fail("header dim " + std::to_string(header_dim) + " does not match expected dim " +
             std::to_string(*dim));
      }
      if (header_dim != 1) {
        dim = header_dim;
        continue;
      }
    }
    if (fields.size() < 2) fail("expected a token followed by vector values");
    const auto file_dim = fields.size() - 1;
    if (!dim) {
      dim = file_dim;
    } else if (*dim != file_dim) {
      fail("expected " + std::to_string(*dim) + " values, found " + std::to_string(file_dim));
    }
    ++entries;
    std::string token(fields[0]);
    if (restrict_to && restrict_to->count(token) == 0) continue;
    if (!seen.insert(token).second) continue;
    const auto offset = values.size();
    values.resize(offset + file_dim);
    for (std::size_t k = 0; k < file_dim; ++k) {
      if (!parse_double(fields[k + 1], values[offset + k])) {
        fail("value '" + std::string(fields[k + 1]) + "' is not a number");
      }
    }
    tokens.push_back(std::move(token));
  }
  if (entries == 0) throw ParseError(path.string() + ": embedding file is empty");
  return EmbeddingTable(std::move(tokens), std::move(values), *dim, oov_seed);
}

EncodedBatch EncodedBatch::select(std::span<const std::size_t> order) const {
  EncodedBatch out;
  out.max_len = max_len;
  out.doc_feature_dim = doc_feature_dim;
  for (auto i : order) {
    out.indices.insert(out.indices.end(), indices.begin() + static_cast<std::ptrdiff_t>(i * max_len),
                       indices.begin() + static_cast<std::ptrdiff_t>((i + 1) * max_len));
    out.lengths.push_back(lengths[i]);
    if (!labels.empty()) out.labels.push_back(labels[i]);
    if (doc_feature_dim > 0) {
      const auto first = doc_features.begin() + static_cast<std::ptrdiff_t>(i * doc_feature_dim);
      out.doc_features.insert(out.doc_features.end(), first,
                              first + static_cast<std::ptrdiff_t>(doc_feature_dim));
    }
  }
  return out;
}

EncodedBatch encode_batch(const std::vector<TokenSequence>& seqs, const std::vector<int>& labels,
                          const EmbeddingTable& table, std::size_t max_len) {
  if (max_len < 1) throw UsageError("max_len must be >= 1");
  if (!labels.empty() && labels.size() != seqs.size()) {
    throw DimensionError("encode_batch: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(seqs.size()) + " sequences");
  }
  EncodedBatch out;
  out.max_len = max_len;
  out.indices.assign(seqs.size() * max_len, static_cast<std::uint32_t>(EmbeddingTable::kPadIndex));
  out.labels = labels;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto n = std::min(max_len, seqs[s].tokens.size());
    for (std::size_t t = 0; t < n; ++t) {
      out.indices[s * max_len + t] = static_cast<std::uint32_t>(table.index_of(seqs[s].tokens[t]));
    }
    out.lengths.push_back(n);
  }
  return out;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::uint64_t h = fnv1a("");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), h);
  }
  return h;
}

}  // namespace opspam
