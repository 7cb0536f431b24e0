#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "lingedit/text.hpp"

using namespace lingedit;

namespace {

Vocabulary bird_vocab() { return Vocabulary::build({"this bird is red", "the bird is blue", "a small red bird"}); }

TextEncoder<double> small_encoder(const Vocabulary& vocab, Index hidden, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  return TextEncoder<double>(TextEncoderConfig{Index(vocab.size()), 5, hidden}, rng);
}

}  // namespace

TEST_CASE("tokenize lowercases, strips punctuation and maps unknown words") {
  const Vocabulary vocab = bird_vocab();
  const TokenSequence seq = tokenize("This bird is red.", vocab);
  CHECK(seq.words == std::vector<std::string>{"this", "bird", "is", "red"});
  CHECK(seq.length() == 4);
  for (int id : seq.ids) CHECK(id >= 2);

  const TokenSequence unk = tokenize("the zyxq is blue", vocab);
  CHECK(unk.ids[1] == Vocabulary::kUnknown);
  CHECK(unk.ids[0] == vocab.lookup("the"));
  CHECK(unk.ids[3] == vocab.lookup("blue"));

  CHECK_THROWS_AS(tokenize("", vocab), InvalidDescription);
  CHECK_THROWS_AS(tokenize("  ?! . ", vocab), InvalidDescription);
}

TEST_CASE("tokenize truncates long descriptions") {
  const Vocabulary vocab = bird_vocab();
  std::string text;
  for (int i = 0; i < 30; ++i) text += "red ";
  CHECK(tokenize(text, vocab).length() == 20);
  CHECK(tokenize(text, vocab, 5).length() == 5);
}

TEST_CASE("vocabulary reserves pad and unknown and round-trips through its file") {
  const Vocabulary vocab = bird_vocab();
  CHECK(vocab.token(0) == "<pad>");
  CHECK(vocab.token(1) == "<unk>");
  CHECK(vocab.lookup("never-seen") == Vocabulary::kUnknown);
  for (std::size_t i = 0; i < vocab.size(); ++i) CHECK(vocab.lookup(vocab.token(int(i))) == int(i));

  const auto path = std::filesystem::temp_directory_path() / "lingedit_vocab_test.txt";
  vocab.save(path);
  const Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.tokens() == vocab.tokens());
  CHECK(loaded.hash() == vocab.hash());
  CHECK(Vocabulary::build({"a small red bird", "this bird is red", "the bird is blue"}).hash() == vocab.hash());

  std::ofstream(path) << "red\nblue\n";
  CHECK_THROWS_AS(Vocabulary::load(path), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("encode_words output is D x L with D twice the hidden width") {
  const Vocabulary vocab = bird_vocab();
  auto one = small_encoder(vocab, 3);
  CHECK(one.encode(tokenize("red", vocab)).sample(0).cols() == 1);
  CHECK(one.encode(tokenize("red", vocab)).sample(0).rows() == 6);

  std::mt19937_64 rng(1);
  TextEncoder<float> wide(TextEncoderConfig{Index(vocab.size()), 16, 128}, rng);
  const auto w = wide.encode(tokenize("this small bird is red and blue", vocab));
  CHECK(w.sample(0).rows() == 256);
  CHECK(w.sample(0).cols() == 7);
  CHECK(w.sample(0).allFinite());
}

TEST_CASE("encode_words is order sensitive and deterministic") {
  const Vocabulary vocab = bird_vocab();
  auto enc = small_encoder(vocab, 4);
  TokenSequence seq = tokenize("this bird is red", vocab);
  TokenSequence rev = seq;
  std::reverse(rev.ids.begin(), rev.ids.end());
  const Matrix<double> forward = enc.encode(seq).sample(0);
  const Matrix<double> backward_order = enc.encode(rev).sample(0);
  // Same multiset of words, so any difference comes from sequence order.
  CHECK((forward - backward_order).cwiseAbs().maxCoeff() > 1e-6);
  CHECK(forward == enc.encode(seq).sample(0));
}

TEST_CASE("column j is the forward state at j stacked over the backward state at j") {
  const Vocabulary vocab = bird_vocab();
  auto enc = small_encoder(vocab, 3);
  const TokenSequence seq = tokenize("this bird is red", vocab);
  const Matrix<double> full = enc.encode(seq).sample(0);
  // The forward half at step j only sees the prefix; the backward half only the suffix.
  for (std::size_t j = 1; j <= seq.length(); ++j) {
    TokenSequence prefix{std::vector<int>(seq.ids.begin(), seq.ids.begin() + long(j)), {}};
    TokenSequence suffix{std::vector<int>(seq.ids.begin() + long(j - 1), seq.ids.end()), {}};
    CHECK((enc.encode(prefix).sample(0).col(Index(j) - 1).head(3) - full.col(Index(j) - 1).head(3)).norm() < 1e-12);
    CHECK((enc.encode(suffix).sample(0).col(0).tail(3) - full.col(Index(j) - 1).tail(3)).norm() < 1e-12);
  }
}

TEST_CASE("padding beyond L does not change the first L columns") {
  const Vocabulary vocab = bird_vocab();
  auto enc = small_encoder(vocab, 4);
  const TokenSequence seq = tokenize("the bird is blue", vocab);
  const Matrix<double> plain = enc.encode(seq).sample(0);
  const auto padded = enc.encode(TokenBatch::from({seq}, 9));
  CHECK(padded.max_length == 9);
  CHECK((padded.sample(0) - plain).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(padded.features.value().middleCols(4, 5).cwiseAbs().maxCoeff() == 0.0);

  // Mixed-length batches encode each member as if it were alone.
  const TokenSequence other = tokenize("a small red bird is red", vocab);
  const auto batch = enc.encode(TokenBatch::from({seq, other}));
  CHECK((batch.sample(0) - plain).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((batch.sample(1) - enc.encode(other).sample(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bidirectional encoder gradients match finite differences") {
  const Vocabulary vocab = bird_vocab();
  auto enc = small_encoder(vocab, 3);
  const TokenBatch batch = TokenBatch::from({tokenize("this bird is red", vocab), tokenize("blue bird", vocab)});
  std::mt19937_64 rng(11);
  const Matrix<double> probe = lingedit::testing::random_matrix(6, 2 * 4, rng);
  std::vector<Var<double>> leaves;
  for (auto& [name, p] : enc.params().entries()) leaves.push_back(p);
  auto r = lingedit::testing::check_gradients(
      [&] { return lingedit::testing::project_to_scalar(enc.encode(batch).features, probe); }, leaves);
  CHECK(r.relative_error < 1e-6);
  CHECK(r.analytic_norm > 0);
}

TEST_CASE("pretrained vectors overwrite matching embedding columns") {
  const Vocabulary vocab = bird_vocab();
  auto enc = small_encoder(vocab, 2);
  const auto path = std::filesystem::temp_directory_path() / "lingedit_vectors.vec";
  std::ofstream(path) << "2 5\nred 1 2 3 4 5\nnotinvocab 1 1 1 1 1\n";
  const auto vectors = read_word_vectors(path, 5);
  CHECK(vectors.size() == 2);
  CHECK(enc.load_pretrained(vocab, vectors) == 1);
  CHECK(enc.params()["text.embedding"].value()(4, vocab.lookup("red")) == 5.0);
  std::filesystem::remove(path);
}
