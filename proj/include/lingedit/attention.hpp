#pragma once

// Word-region matching: words are projected into the channel space of an image
// feature map, every region takes a softmax over the words, and the region's
// word-context vector is the resulting convex combination of projected words.
//
// Shapes: features V is M x N (channels x regions), words W is D x L,
// projection U is M x D, attention is N x L, context V' is M x N.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "lingedit/text.hpp"

namespace lingedit {

template <typename DerivedW, typename DerivedU>
Matrix<typename DerivedW::Scalar> project_words(const Eigen::MatrixBase<DerivedW>& words,
                                                const Eigen::MatrixBase<DerivedU>& projection) {
  if (projection.cols() != words.rows()) {
    throw ShapeError("project_words: projection is " + std::to_string(projection.rows()) + "x" +
                     std::to_string(projection.cols()) + " but words have " + std::to_string(words.rows()) +
                     " rows");
  }
  return projection * words;
}

/// Row-wise softmax of the region-word logits V^T W', max-subtracted.
template <typename DerivedV, typename DerivedP>
Matrix<typename DerivedV::Scalar> attention_weights(const Eigen::MatrixBase<DerivedV>& features,
                                                    const Eigen::MatrixBase<DerivedP>& projected) {
  using Scalar = typename DerivedV::Scalar;
  if (features.rows() != projected.rows()) {
    throw ShapeError("attention_weights: features have " + std::to_string(features.rows()) +
                     " channels, projected words have " + std::to_string(projected.rows()));
  }
  if (projected.cols() < 1) throw ShapeError("attention_weights: no words");
  Matrix<Scalar> logits = features.transpose() * projected;
  const Vector<Scalar> row_max = logits.rowwise().maxCoeff();
  logits.colwise() -= row_max;
  logits = logits.array().exp();
  const Vector<Scalar> row_sum = logits.rowwise().sum();
  logits.array().colwise() /= row_sum.array();
  return logits;
}

template <typename Scalar>
struct AttentionResult {
  Matrix<Scalar> projected;  // M x L
  Matrix<Scalar> weights;    // N x L
  Matrix<Scalar> context;    // M x N
};

template <typename DerivedV, typename DerivedW, typename DerivedU>
AttentionResult<typename DerivedV::Scalar> attend(const Eigen::MatrixBase<DerivedV>& features,
                                                  const Eigen::MatrixBase<DerivedW>& words,
                                                  const Eigen::MatrixBase<DerivedU>& projection) {
  AttentionResult<typename DerivedV::Scalar> r;
  r.projected = project_words(words, projection);
  r.weights = attention_weights(features, r.projected);
  r.context = r.projected * r.weights.transpose();
  return r;
}

/// Word-context features V' = W' alpha^T.
template <typename DerivedV, typename DerivedW, typename DerivedU>
Matrix<typename DerivedV::Scalar> word_context_features(const Eigen::MatrixBase<DerivedV>& features,
                                                        const Eigen::MatrixBase<DerivedW>& words,
                                                        const Eigen::MatrixBase<DerivedU>& projection) {
  return attend(features, words, projection).context;
}

template <typename Scalar>
struct AttentionGradients {
  Matrix<Scalar> features;    // M x N
  Matrix<Scalar> words;       // D x L
  Matrix<Scalar> projection;  // M x D
};

/// Reverse pass of attend() for an upstream gradient on the context.
template <typename Scalar>
AttentionGradients<Scalar> attend_backward(const AttentionResult<Scalar>& forward, const Matrix<Scalar>& features,
                                           const Matrix<Scalar>& words, const Matrix<Scalar>& projection,
                                           const Matrix<Scalar>& d_context) {
  const Matrix<Scalar>& alpha = forward.weights;
  Matrix<Scalar> d_projected = d_context * alpha;                   // M x L
  const Matrix<Scalar> d_alpha = d_context.transpose() * forward.projected;  // N x L
  const Vector<Scalar> inner = (d_alpha.array() * alpha.array()).rowwise().sum();
  const Matrix<Scalar> d_logits = alpha.array() * (d_alpha.array().colwise() - inner.array());
  AttentionGradients<Scalar> g;
  g.features.noalias() = forward.projected * d_logits.transpose();
  d_projected.noalias() += features * d_logits;
  g.projection.noalias() = d_projected * words.transpose();
  g.words.noalias() = projection.transpose() * d_projected;
  return g;
}

/// Batched word-context features for a feature map var (M x B*N) and a word
/// batch. When `weights_out` is given it receives the per-sample attention
/// maps (N x L_b).
template <typename Scalar>
Var<Scalar> word_context(const Var<Scalar>& features, const WordBatch<Scalar>& words, const Var<Scalar>& projection,
                         std::vector<Matrix<Scalar>>* weights_out = nullptr) {
  const Shape fs = features.shape();
  if (fs.batch != words.batch()) {
    throw ShapeError("word_context: feature batch " + std::to_string(fs.batch) + " vs word batch " +
                     std::to_string(words.batch()));
  }
  if (projection.value().rows() != fs.channels) {
    throw ShapeError("word_context: projection rows must equal feature channels (" +
                     std::to_string(fs.channels) + ")");
  }
  const Index n = fs.spatial();
  auto results = std::make_shared<std::vector<AttentionResult<Scalar>>>();
  Matrix<Scalar> context(fs.channels, fs.columns());
  for (Index b = 0; b < fs.batch; ++b) {
    results->push_back(attend(features.value().middleCols(b * n, n), words.sample(b), projection.value()));
    context.middleCols(b * n, n) = results->back().context;
    if (weights_out) weights_out->push_back(results->back().weights);
  }
  const std::vector<Index> lengths = words.lengths;
  const Index max_len = words.max_length;
  return make_result<Scalar>(
      std::move(context), fs, {features, words.features, projection},
      [results, lengths, max_len, n](Node<Scalar>& self) {
        Node<Scalar>& fn = *self.parents[0];
        Node<Scalar>& wn = *self.parents[1];
        Node<Scalar>& un = *self.parents[2];
        for (std::size_t b = 0; b < results->size(); ++b) {
          const Index len = lengths[b];
          const Index first = Index(b) * max_len;
          const Matrix<Scalar> v = fn.value.middleCols(Index(b) * n, n);
          const Matrix<Scalar> w = wn.value.middleCols(first, len);
          const AttentionGradients<Scalar> g =
              attend_backward<Scalar>((*results)[b], v, w, un.value, self.grad.middleCols(Index(b) * n, n));
          if (fn.requires_grad) fn.grad_buffer().middleCols(Index(b) * n, n) += g.features;
          if (wn.requires_grad) wn.grad_buffer().middleCols(first, len) += g.words;
          if (un.requires_grad) un.grad_buffer() += g.projection;
        }
      });
}

/// Region-to-word weights of one image at one scale, with its grid extent.
struct AttentionMap {
  Matrix<float> weights;  // N x L, N = height * width
  Index height = 0;
  Index width = 0;
};

/// Binary export: four little-endian uint32 (N, L, H, W) followed by N*L
/// float32 values in row-major (region-major) order.
std::string encode_attention_map(const AttentionMap& map);
AttentionMap decode_attention_map(const std::string& bytes);
void write_attention_map(const std::filesystem::path& path, const AttentionMap& map);

}  // namespace lingedit
