#include "lingedit/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "lingedit/hashing.hpp"

namespace lingedit {

Vocabulary::Vocabulary() {
  add(kPadToken);
  add(kUnknownToken);
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int idx = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, idx);
  return idx;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnknown : it->second;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> unique;
  for (const auto& t : texts)
    for (auto& w : normalize_words(t)) unique.insert(std::move(w));
  Vocabulary vocab;
  for (const auto& w : unique) vocab.add(w);
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < 2 || lines[0] != kPadToken || lines[1] != kUnknownToken) {
    throw DataError("vocabulary file must start with " + std::string(kPadToken) + " and " + kUnknownToken +
                    ": " + path.string());
  }
  Vocabulary vocab;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (vocab.index_.count(lines[i])) throw DataError("duplicate token '" + lines[i] + "' in " + path.string());
    vocab.add(lines[i]);
  }
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::string Vocabulary::hash() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  return sha256_hex(joined);
}

std::vector<std::string> normalize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      current.push_back(static_cast<char>(std::tolower(ch)));
    } else if (std::isspace(ch)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    }
    // other punctuation is dropped without splitting ("bird's" -> "birds")
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_length) {
  std::vector<std::string> words = normalize_words(text);
  if (words.empty()) throw InvalidDescription("description is empty after normalization");
  if (words.size() > max_length) {
    std::clog << "warning: description truncated from " << words.size() << " to " << max_length << " words\n";
    words.resize(max_length);
  }
  TokenSequence seq;
  for (auto& w : words) {
    seq.ids.push_back(vocab.lookup(w));
    seq.words.push_back(std::move(w));
  }
  return seq;
}

TokenBatch TokenBatch::from(const std::vector<TokenSequence>& sequences) {
  Index longest = 0;
  for (const auto& s : sequences) longest = std::max(longest, Index(s.length()));
  return from(sequences, longest);
}

TokenBatch TokenBatch::from(const std::vector<TokenSequence>& sequences, Index padded_length) {
  if (sequences.empty()) throw ShapeError("TokenBatch: no sequences");
  TokenBatch batch;
  batch.ids = Eigen::MatrixXi::Constant(padded_length, Index(sequences.size()), Vocabulary::kPad);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    const auto& s = sequences[b];
    if (s.length() == 0) throw ShapeError("TokenBatch: empty sequence");
    if (Index(s.length()) > padded_length) throw ShapeError("TokenBatch: sequence longer than padding");
    for (std::size_t t = 0; t < s.length(); ++t) batch.ids(Index(t), Index(b)) = s.ids[t];
    batch.lengths.push_back(Index(s.length()));
  }
  return batch;
}

std::unordered_map<std::string, std::vector<float>> read_word_vectors(const std::filesystem::path& path,
                                                                      std::size_t expected_width) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open word vector file " + path.string());
  std::unordered_map<std::string, std::vector<float>> vectors;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    std::vector<float> values;
    float v;
    while (fields >> v) values.push_back(v);
    if (first && values.size() == 1) {  // "count dim" header
      first = false;
      continue;
    }
    first = false;
    if (values.size() != expected_width) continue;
    vectors.emplace(std::move(word), std::move(values));
  }
  return vectors;
}

}  // namespace lingedit
