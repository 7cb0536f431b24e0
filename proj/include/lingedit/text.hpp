#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lingedit/parameters.hpp"

namespace lingedit {

/// Token <-> index map. Index 0 is padding, 1 is the unknown token.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnknownToken = "<unk>";

  Vocabulary();

  /// Builds a vocabulary from the normalized tokens of `texts`, sorted so the
  /// result does not depend on input order.
  static Vocabulary build(const std::vector<std::string>& texts);

  /// One token per line; the line number is the index.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int add(const std::string& token);
  int lookup(const std::string& token) const;
  const std::string& token(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Hex SHA-256 over the newline-joined token list.
  std::string hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct TokenSequence {
  std::vector<int> ids;
  std::vector<std::string> words;

  std::size_t length() const { return ids.size(); }
};

/// Lowercases, strips punctuation and splits on whitespace.
std::vector<std::string> normalize_words(const std::string& text);

/// Maps a description to vocabulary indices. Throws InvalidDescription when
/// nothing is left after normalization; truncates to `max_length` with a
/// warning on stderr.
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_length = 20);

/// A padded batch of token sequences: ids is (max_length x batch), column b
/// holds sequence b followed by pad indices.
struct TokenBatch {
  Eigen::MatrixXi ids;
  std::vector<Index> lengths;

  Index batch() const { return static_cast<Index>(lengths.size()); }
  Index max_length() const { return ids.rows(); }

  static TokenBatch from(const std::vector<TokenSequence>& sequences);
  static TokenBatch from(const std::vector<TokenSequence>& sequences, Index padded_length);
};

/// Word-level text features for a batch: `features` holds a
/// (D x batch*max_length) map whose column b*max_length + j is word j of
/// sample b. Columns at j >= lengths[b] are zero and masked downstream.
template <typename Scalar>
struct WordBatch {
  Var<Scalar> features;
  std::vector<Index> lengths;
  Index max_length = 0;

  Index batch() const { return static_cast<Index>(lengths.size()); }
  Index width() const { return features.value().rows(); }

  /// Embedding matrix (D x L) of sample b without padding.
  Matrix<Scalar> sample(Index b) const {
    return features.value().middleCols(b * max_length, lengths[static_cast<std::size_t>(b)]);
  }

  WordBatch detach() const { return WordBatch{features.detach(), lengths, max_length}; }

  /// Wraps explicit per-sample matrices (all with D rows) as a constant batch.
  static WordBatch from_matrices(const std::vector<Matrix<Scalar>>& words);
};

template <typename Scalar>
WordBatch<Scalar> WordBatch<Scalar>::from_matrices(const std::vector<Matrix<Scalar>>& words) {
  require(!words.empty(), "WordBatch: empty batch");
  Index max_len = 0;
  for (const auto& w : words) max_len = std::max(max_len, w.cols());
  const Index d = words.front().rows();
  Matrix<Scalar> features = Matrix<Scalar>::Zero(d, max_len * Index(words.size()));
  std::vector<Index> lengths;
  for (std::size_t b = 0; b < words.size(); ++b) {
    require(words[b].rows() == d, "WordBatch: inconsistent embedding width");
    features.middleCols(Index(b) * max_len, words[b].cols()) = words[b];
    lengths.push_back(words[b].cols());
  }
  return WordBatch{Var<Scalar>::constant(std::move(features), Shape{Index(words.size()), d, 1, max_len}),
                   std::move(lengths), max_len};
}

struct TextEncoderConfig {
  Index vocab_size = 2;
  Index embedding_width = 300;
  Index hidden_width = 128;  // per direction; D = 2 * hidden_width
  double embedding_init = 0.1;  // random embeddings are uniform in [-embedding_init, embedding_init]

  Index output_width() const { return 2 * hidden_width; }
};

/// Word embedding table followed by a bidirectional LSTM. Column j of the
/// output concatenates the forward state after word j with the backward state
/// after reading words L-1 .. j.
template <typename Scalar>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const TextEncoderConfig& config, std::mt19937_64& rng);

  WordBatch<Scalar> encode(const TokenBatch& tokens) const;
  WordBatch<Scalar> encode(const TokenSequence& tokens) const { return encode(TokenBatch::from({tokens})); }

  /// Overwrites rows of the embedding table with pretrained vectors for the
  /// tokens present in `vectors` (token -> vector of embedding_width floats).
  std::size_t load_pretrained(const Vocabulary& vocab,
                              const std::unordered_map<std::string, std::vector<float>>& vectors);

  ParameterSet<Scalar>& params() { return params_; }
  const ParameterSet<Scalar>& params() const { return params_; }
  const TextEncoderConfig& config() const { return config_; }

 private:
  TextEncoderConfig config_;
  ParameterSet<Scalar> params_;
};

/// Reads whitespace-separated word vector text files (fastText .vec style,
/// optional "count dim" header line).
std::unordered_map<std::string, std::vector<float>> read_word_vectors(const std::filesystem::path& path,
                                                                      std::size_t expected_width);

}  // namespace lingedit

#include "lingedit/text_encoder_impl.hpp"
