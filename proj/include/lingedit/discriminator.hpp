#pragma once

// Two-headed discriminator: an unconditional realism score from pooled deep
// features, and a conditional image-text matching score that accumulates
// per-word local matching with attention over regions and over words.

#include <random>
#include <string>

#include "lingedit/generator.hpp"

namespace lingedit {

/// Forward quantities of the conditional head for one sample. F is the C x N
/// local feature map, W the D x L word matrix.
template <typename Scalar>
struct MatchingForward {
  Matrix<Scalar> keys;          // C x L, U_key W
  Matrix<Scalar> queries;       // C x L, U_score W
  Matrix<Scalar> region_attn;   // N x L, softmax over regions per word
  Matrix<Scalar> local_scores;  // N x L, sigmoid(F^T U_score W / sqrt(C))
  RowVector<Scalar> word_scores;   // 1 x L
  RowVector<Scalar> word_weights;  // 1 x L, softmax over words
  Scalar score = 0;
};

template <typename Scalar>
MatchingForward<Scalar> matching_forward(const Matrix<Scalar>& local, const Matrix<Scalar>& words,
                                         const Matrix<Scalar>& key_projection,
                                         const Matrix<Scalar>& score_projection,
                                         const Matrix<Scalar>& word_importance) {
  if (key_projection.rows() != local.rows() || score_projection.rows() != local.rows())
    throw ShapeError("matching: projection rows must equal local feature channels");
  if (key_projection.cols() != words.rows() || score_projection.cols() != words.rows() ||
      word_importance.cols() != words.rows())
    throw ShapeError("matching: projection columns must equal word width");
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(local.rows()));
  MatchingForward<Scalar> f;
  f.keys = key_projection * words;
  f.queries = score_projection * words;
  Matrix<Scalar> a = (local.transpose() * f.keys) * scale;
  a.rowwise() -= a.colwise().maxCoeff();
  a = a.array().exp();
  f.region_attn = a.array().rowwise() / a.colwise().sum().array();
  f.local_scores = sigmoid_values<Scalar>((local.transpose() * f.queries) * scale);
  f.word_scores = (f.region_attn.array() * f.local_scores.array()).colwise().sum();
  RowVector<Scalar> importance = word_importance * words;
  importance.array() -= importance.maxCoeff();
  importance = importance.array().exp();
  f.word_weights = importance / importance.sum();
  f.score = f.word_weights.dot(f.word_scores);
  return f;
}

template <typename Scalar>
struct MatchingGradients {
  Matrix<Scalar> local;
  Matrix<Scalar> words;
  Matrix<Scalar> key_projection;
  Matrix<Scalar> score_projection;
  Matrix<Scalar> word_importance;
};

template <typename Scalar>
MatchingGradients<Scalar> matching_backward(const MatchingForward<Scalar>& f, const Matrix<Scalar>& local,
                                            const Matrix<Scalar>& words, const Matrix<Scalar>& key_projection,
                                            const Matrix<Scalar>& score_projection,
                                            const Matrix<Scalar>& word_importance, Scalar d_score) {
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(local.rows()));
  const RowVector<Scalar> d_word_scores = d_score * f.word_weights;
  const RowVector<Scalar> d_weights = d_score * f.word_scores;
  const Scalar inner_w = d_weights.dot(f.word_weights);
  const RowVector<Scalar> d_importance = f.word_weights.array() * (d_weights.array() - inner_w);

  const Matrix<Scalar> d_attn = f.local_scores.array().rowwise() * d_word_scores.array();
  const Matrix<Scalar> d_local_scores = f.region_attn.array().rowwise() * d_word_scores.array();
  const RowVector<Scalar> inner = (d_attn.array() * f.region_attn.array()).colwise().sum();
  const Matrix<Scalar> d_a = (f.region_attn.array() * (d_attn.array().rowwise() - inner.array())) * scale;
  const Matrix<Scalar> d_z =
      (d_local_scores.array() * f.local_scores.array() * (Scalar(1) - f.local_scores.array())) * scale;

  MatchingGradients<Scalar> g;
  g.local = f.keys * d_a.transpose() + f.queries * d_z.transpose();
  const Matrix<Scalar> d_keys = local * d_a;
  const Matrix<Scalar> d_queries = local * d_z;
  g.key_projection = d_keys * words.transpose();
  g.score_projection = d_queries * words.transpose();
  g.word_importance = d_importance * words.transpose();
  g.words = key_projection.transpose() * d_keys + score_projection.transpose() * d_queries +
            word_importance.transpose() * d_importance;
  return g;
}

/// Batched conditional score (1 x B) for local features (C x B*N).
template <typename Scalar>
Var<Scalar> matching_score(const Var<Scalar>& local, const WordBatch<Scalar>& words, const Var<Scalar>& key_projection,
                           const Var<Scalar>& score_projection, const Var<Scalar>& word_importance) {
  const Shape ls = local.shape();
  if (ls.batch != words.batch()) throw ShapeError("matching_score: batch mismatch");
  const Index n = ls.spatial();
  auto forwards = std::make_shared<std::vector<MatchingForward<Scalar>>>();
  Matrix<Scalar> scores(1, ls.batch);
  for (Index b = 0; b < ls.batch; ++b) {
    forwards->push_back(matching_forward<Scalar>(local.value().middleCols(b * n, n), words.sample(b),
                                                 key_projection.value(), score_projection.value(),
                                                 word_importance.value()));
    scores(0, b) = forwards->back().score;
  }
  const std::vector<Index> lengths = words.lengths;
  const Index max_len = words.max_length;
  return make_result<Scalar>(
      std::move(scores), matrix_shape(1, ls.batch),
      {local, words.features, key_projection, score_projection, word_importance},
      [forwards, lengths, max_len, n](Node<Scalar>& self) {
        auto& p = self.parents;
        for (std::size_t b = 0; b < forwards->size(); ++b) {
          const Index first = Index(b) * max_len;
          const Matrix<Scalar> f = p[0]->value.middleCols(Index(b) * n, n);
          const Matrix<Scalar> w = p[1]->value.middleCols(first, lengths[b]);
          const auto g = matching_backward<Scalar>((*forwards)[b], f, w, p[2]->value, p[3]->value, p[4]->value,
                                                   self.grad(0, Index(b)));
          if (p[0]->requires_grad) p[0]->grad_buffer().middleCols(Index(b) * n, n) += g.local;
          if (p[1]->requires_grad) p[1]->grad_buffer().middleCols(first, lengths[b]) += g.words;
          if (p[2]->requires_grad) p[2]->grad_buffer() += g.key_projection;
          if (p[3]->requires_grad) p[3]->grad_buffer() += g.score_projection;
          if (p[4]->requires_grad) p[4]->grad_buffer() += g.word_importance;
        }
      });
}

struct DiscriminatorConfig {
  Index base_channels = 64;
  Index layers = 4;       // stride-2 4x4 convolutions
  Index local_layer = 2;  // output of this layer feeds the conditional head
  Index word_width = 256;
};

template <typename Scalar>
struct ScorePair {
  Var<Scalar> unconditional;  // 1 x B in (0,1)
  Var<Scalar> conditional;    // 1 x B in (0,1); undefined when no words were given
};

template <typename Scalar>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const DiscriminatorConfig& config, std::mt19937_64& rng);

  /// The unconditional score depends on the image alone; the conditional
  /// score is computed only when `words` is non-null.
  ScorePair<Scalar> score(const Var<Scalar>& image, const WordBatch<Scalar>* words, Phase phase) const;

  const DiscriminatorConfig& config() const { return config_; }
  ParameterSet<Scalar>& params() { return params_; }
  const ParameterSet<Scalar>& params() const { return params_; }

 private:
  DiscriminatorConfig config_;
  mutable ParameterSet<Scalar> params_;
};

template <typename Scalar>
Discriminator<Scalar>::Discriminator(const DiscriminatorConfig& config, std::mt19937_64& rng) : config_(config) {
  require(config.local_layer >= 1 && config.local_layer <= config.layers, "discriminator: bad local layer");
  Index in = 3;
  for (Index l = 1; l <= config.layers; ++l) {
    const Index out = config.base_channels << (l - 1);
    const std::string name = "disc.conv" + std::to_string(l);
    params_.add(name + ".w", init_normal<Scalar>(out, 16 * in, Scalar(0.02), rng));
    if (l > 1) {
      params_.add(name + ".bn.gamma", Matrix<Scalar>::Ones(out, 1));
      params_.add(name + ".bn.beta", Matrix<Scalar>::Zero(out, 1));
      params_.add_stats(name + ".bn", out);
    }
    in = out;
  }
  params_.add("disc.global.w", init_normal<Scalar>(1, in, Scalar(1.0 / std::sqrt(double(in))), rng));
  const Index local = config.base_channels << (config.local_layer - 1);
  const Scalar proj_std = Scalar(1.0 / std::sqrt(double(config.word_width)));
  params_.add("disc.match.key", init_normal<Scalar>(local, config.word_width, proj_std, rng));
  params_.add("disc.match.score", init_normal<Scalar>(local, config.word_width, proj_std, rng));
  params_.add("disc.match.importance", init_normal<Scalar>(1, config.word_width, proj_std, rng));
}

template <typename Scalar>
ScorePair<Scalar> Discriminator<Scalar>::score(const Var<Scalar>& image, const WordBatch<Scalar>* words,
                                               Phase phase) const {
  validate_image_batch(image);
  const ConvSpec down{4, 2, 1};
  Var<Scalar> x = image;
  Var<Scalar> local;
  for (Index l = 1; l <= config_.layers; ++l) {
    const std::string name = "disc.conv" + std::to_string(l);
    x = conv2d(x, params_[name + ".w"], down);
    if (l > 1)
      x = batch_norm(x, params_[name + ".bn.gamma"], params_[name + ".bn.beta"], params_.stats(name + ".bn"),
                     phase == Phase::train);
    x = leaky_relu(x, Scalar(0.2));
    if (l == config_.local_layer) local = x;
  }
  ScorePair<Scalar> scores;
  Var<Scalar> logits = matmul(params_["disc.global.w"], spatial_mean(x));
  scores.unconditional = sigmoid(logits);
  if (!scores.unconditional.value().allFinite()) throw NumericalFailure("discriminator: non-finite score");
  if (words) {
    if (words->width() != config_.word_width) throw ShapeError("discriminator: word width mismatch");
    scores.conditional = matching_score(local, *words, params_["disc.match.key"], params_["disc.match.score"],
                                        params_["disc.match.importance"]);
    if (!scores.conditional.value().allFinite()) throw NumericalFailure("discriminator: non-finite score");
  }
  return scores;
}

}  // namespace lingedit
