#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "opspam/textprep.hpp"

namespace opspam {

// Pretrained token vectors plus two reserved rows: 0 is padding (all zeros)
// and 1 is the shared out-of-vocabulary vector.
class EmbeddingTable {
 public:
  static constexpr std::size_t kPadIndex = 0;
  static constexpr std::size_t kOovIndex = 1;
  static constexpr std::uint64_t kDefaultOovSeed = 7;
  static constexpr double kOovRange = 0.25;

  EmbeddingTable() = default;
  // tokens[k] gets row k + 2; vectors is row-major tokens.size() x dim.
  EmbeddingTable(std::vector<std::string> tokens, std::vector<double> vectors, std::size_t dim,
                 std::uint64_t oov_seed = kDefaultOovSeed);

  std::size_t dim() const { return dim_; }
  // Number of real tokens (excluding the pad and OOV rows).
  std::size_t vocab_size() const { return tokens_.size(); }
  std::size_t rows() const { return tokens_.size() + 2; }
  std::uint64_t oov_seed() const { return oov_seed_; }

  std::size_t index_of(const std::string& token) const;  // kOovIndex when unknown
  bool contains(const std::string& token) const { return vocab_.count(token) != 0; }
  std::span<const double> row(std::size_t index) const;
  std::span<const double> lookup(const std::string& token) const { return row(index_of(token)); }

  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<double>& matrix() const { return matrix_; }

  // FNV-1a over dim, oov seed, tokens and the exact bits of every value.
  std::uint64_t content_hash() const;

  bool operator==(const EmbeddingTable& other) const {
    return dim_ == other.dim_ && oov_seed_ == other.oov_seed_ && tokens_ == other.tokens_ &&
           matrix_ == other.matrix_;
  }

 private:
  std::size_t dim_ = 0;
  std::uint64_t oov_seed_ = kDefaultOovSeed;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> vocab_;
  std::vector<double> matrix_;
};

// Text format: one entry per line, token followed by dim decimal values.
// A leading "<count> <dim>" header line (word2vec text export) is skipped.
// Duplicate tokens keep their first vector.
EmbeddingTable load_embeddings(const std::filesystem::path& path,
                               std::optional<std::size_t> expected_dim = std::nullopt,
                               const std::unordered_set<std::string>* restrict_to = nullptr,
                               std::uint64_t oov_seed = EmbeddingTable::kDefaultOovSeed);

// Row-major batch of padded index sequences. doc_features is an optional
// dense batch x doc_feature_dim block consumed by the hybrid model.
struct EncodedBatch {
  std::size_t max_len = 0;
  std::vector<std::uint32_t> indices;  // batch x max_len
  std::vector<std::size_t> lengths;
  std::vector<int> labels;
  std::size_t doc_feature_dim = 0;
  std::vector<double> doc_features;  // batch x doc_feature_dim

  std::size_t size() const { return lengths.size(); }
  std::uint32_t at(std::size_t sample, std::size_t t) const { return indices[sample * max_len + t]; }

  // Samples selected by `order`, in that order.
  EncodedBatch select(std::span<const std::size_t> order) const;
};

inline constexpr std::size_t kDefaultMaxLen = 200;

// Keeps the first max_len tokens, pads the rest with kPadIndex; unknown
// tokens map to kOovIndex. labels may be empty (prediction).
EncodedBatch encode_batch(const std::vector<TokenSequence>& seqs, const std::vector<int>& labels,
                          const EmbeddingTable& table, std::size_t max_len);

std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace opspam
