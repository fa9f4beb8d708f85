#pragma once

#include "mmrl/common.hpp"
#include "mmrl/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mmrl {

inline constexpr Index kEmbeddingDim = 128;

/// Joins the top tweets of an article; contains characters the tokenizer
/// always splits, so it never collides with a real token.
inline constexpr std::string_view kTweetSeparator = "<|sep|>";
inline constexpr std::string_view kOovToken = "<|oov|>";

using Tokens = std::vector<std::string>;

/// Lowercased tokens split on whitespace and punctuation. Hashtags,
/// mentions and URLs stay whole; each emoji is its own token.
Tokens tokenize(std::string_view text);

Tokens title_tokens(const Article& article);
/// Tokens of the top-k tweets joined by kTweetSeparator.
Tokens tweet_tokens(const Article& article, std::size_t k = 5);

enum class SpaceTag { title, tweet };
std::string_view to_string(SpaceTag tag);

/// Token -> vector map. Row 0 is the out-of-vocabulary vector, fixed at zero.
class EmbeddingTable {
 public:
  EmbeddingTable(std::vector<std::string> tokens, RowMat<float> vectors, SpaceTag tag);

  Index size() const { return vectors_.rows(); }
  Index dim() const { return vectors_.cols(); }
  SpaceTag space() const { return tag_; }
  Index index_of(const std::string& token) const;  // 0 when unknown
  const std::vector<std::string>& tokens() const { return tokens_; }
  const RowMat<float>& vectors() const { return vectors_; }
  auto row(Index i) const { return vectors_.row(i); }

  void save(const std::filesystem::path& path) const;
  static EmbeddingTable load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Index> index_;
  RowMat<float> vectors_;
  SpaceTag tag_;
};

struct Word2VecConfig {
  Index dim = kEmbeddingDim;
  int window = 5;
  int min_count = 2;
  int epochs = 10;
  int negative = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;
};

/// Skip-gram with negative sampling, single-threaded and seeded.
EmbeddingTable train_word_embeddings(const std::vector<Tokens>& corpus, SpaceTag tag,
                                     const Word2VecConfig& config = {});

/// Token rows of a fixed-length sequence; rows at and beyond `length` are zero.
struct EncodedSequence {
  RowMat<float> rows;
  Index length = 0;
};

EncodedSequence encode_sequence(const Tokens& tokens, const EmbeddingTable& table, Index max_length);

/// 99th percentile of lengths, or the maximum when pad_to_longest is set.
Index choose_max_length(std::vector<Index> lengths, bool pad_to_longest = false);

/// Mean of in-vocabulary token vectors (zero when none are known).
Vec<double> document_embedding(const Tokens& tokens, const EmbeddingTable& table);

}  // namespace mmrl
