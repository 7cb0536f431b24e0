#pragma once

// Template implementation of Generator; included from generator.hpp.

namespace lingedit {

namespace detail {
inline const ConvSpec kSame3{3, 1, 1};
inline const ConvSpec kDown3{3, 2, 1};
}  // namespace detail

template <typename Scalar>
void Generator<Scalar>::add_conv(const std::string& name, Index out, Index in, Index kernel, bool with_bn,
                                 std::mt19937_64& rng) {
  params_.add(name + ".w", init_conv<Scalar>(out, in, kernel, rng));
  if (with_bn) {
    params_.add(name + ".bn.gamma", Matrix<Scalar>::Ones(out, 1));
    params_.add(name + ".bn.beta", Matrix<Scalar>::Zero(out, 1));
    params_.add_stats(name + ".bn", out);
  }
}

template <typename Scalar>
Generator<Scalar>::Generator(const GeneratorConfig& config, std::mt19937_64& rng) : config_(config) {
  if (config.mode == GeneratorMode::identity) return;
  require(config.scales >= 1, "generator: need at least one scale");
  const Index c = config.base_channels;
  const std::vector<Index> down = config.down_channels();
  const Index r = config.residual_channels;

  add_conv("gen.enc.stem", c, 3, 3, true, rng);
  if (config.moves_residual_conv()) add_conv("gen.enc.extra", c, c, 3, true, rng);
  Index in = c;
  for (std::size_t k = 0; k < down.size(); ++k) {
    add_conv("gen.enc.down" + std::to_string(k), down[k], in, 3, true, rng);
    in = down[k];
  }

  const Scalar proj_std = Scalar(1.0 / std::sqrt(double(config.word_width)));
  if (config.mode == GeneratorMode::single) {
    params_.add("gen.attn.U1", init_normal<Scalar>(config.scale_channels(1), config.word_width, proj_std, rng));
    add_conv("gen.join", r, 2 * config.scale_channels(1), 3, true, rng);
  } else {
    Index h_channels = config.scale_channels(1);
    for (Index i = 1; i <= config.scales; ++i) {
      params_.add("gen.attn.U" + std::to_string(i),
                  init_normal<Scalar>(config.scale_channels(i), config.word_width, proj_std, rng));
      if (i >= 2) {
        add_conv("gen.fuse" + std::to_string(i), config.fusion_channels, config.scale_channels(i) + h_channels, 3,
                 true, rng);
        h_channels = config.fusion_channels;
      }
    }
    add_conv("gen.join", r, h_channels + down[0], 3, true, rng);
  }

  for (Index b = 0; b < config.residual_blocks; ++b) {
    const std::string name = "gen.res" + std::to_string(b);
    const bool single_conv = config.moves_residual_conv() && b == config.residual_blocks - 1;
    params_.add(name + ".bn1.gamma", Matrix<Scalar>::Ones(r, 1));
    params_.add(name + ".bn1.beta", Matrix<Scalar>::Zero(r, 1));
    params_.add_stats(name + ".bn1", r);
    params_.add(name + ".conv1.w", init_conv<Scalar>(r, r, 3, rng));
    if (!single_conv) {
      params_.add(name + ".bn2.gamma", Matrix<Scalar>::Ones(r, 1));
      params_.add(name + ".bn2.beta", Matrix<Scalar>::Zero(r, 1));
      params_.add_stats(name + ".bn2", r);
      params_.add(name + ".conv2.w", init_conv<Scalar>(r, r, 3, rng));
    }
  }

  // Decoder: (upsample, conv) pairs back to full resolution; the last pair
  // runs at half width.
  const Index stages = config.mode == GeneratorMode::single ? config.scales + 1 : 1;
  Index dec_in = r;
  for (Index s = 0; s < stages; ++s) {
    const Index out = s + 1 == stages ? std::max<Index>(r / 2, 8) : r;
    add_conv("gen.dec" + std::to_string(s), out, dec_in, 3, true, rng);
    dec_in = out;
  }
  params_.add("gen.out.w", init_normal<Scalar>(3, 9 * dec_in, Scalar(0.5 / std::sqrt(9.0 * double(dec_in))), rng));
}

template <typename Scalar>
Var<Scalar> Generator<Scalar>::bn(const Var<Scalar>& x, const std::string& name, Phase phase) const {
  return batch_norm(x, params_[name + ".gamma"], params_[name + ".beta"], params_.stats(name), phase == Phase::train);
}

template <typename Scalar>
Var<Scalar> Generator<Scalar>::conv_bn_relu(const Var<Scalar>& x, const std::string& name, ConvSpec spec,
                                            Phase phase) const {
  return relu(bn(conv2d(x, params_[name + ".w"], spec), name + ".bn", phase));
}

template <typename Scalar>
Var<Scalar> Generator<Scalar>::residual_block(const Var<Scalar>& x, Index block, bool single_conv,
                                              Phase phase) const {
  const std::string name = "gen.res" + std::to_string(block);
  Var<Scalar> y = conv2d(relu(bn(x, name + ".bn1", phase)), params_[name + ".conv1.w"], detail::kSame3);
  if (!single_conv) y = conv2d(relu(bn(y, name + ".bn2", phase)), params_[name + ".conv2.w"], detail::kSame3);
  return add(x, y);
}

template <typename Scalar>
FeaturePyramid<Scalar> Generator<Scalar>::encode_image(const Var<Scalar>& image, Phase phase) const {
  validate_image_batch(image);
  if (config_.mode == GeneratorMode::identity) throw ShapeError("identity generator has no encoder");
  Var<Scalar> x = conv_bn_relu(image, "gen.enc.stem", detail::kSame3, phase);
  if (config_.moves_residual_conv()) x = conv_bn_relu(x, "gen.enc.extra", detail::kSame3, phase);
  FeaturePyramid<Scalar> pyramid;
  const std::vector<Index> down = config_.down_channels();
  std::vector<Var<Scalar>> finest_first;
  for (std::size_t k = 0; k < down.size(); ++k) {
    x = conv_bn_relu(x, "gen.enc.down" + std::to_string(k), detail::kDown3, phase);
    if (k == 0) {
      pyramid.skip = x;
    } else {
      finest_first.push_back(x);
    }
  }
  pyramid.levels.assign(finest_first.rbegin(), finest_first.rend());
  return pyramid;
}

template <typename Scalar>
Var<Scalar> Generator<Scalar>::context(const Var<Scalar>& features, const WordBatch<Scalar>& words, Index scale,
                                       AttentionCapture<Scalar>* capture) const {
  if (words.width() != config_.word_width) {
    throw ShapeError("generator: word embeddings have width " + std::to_string(words.width()) + ", expected " +
                     std::to_string(config_.word_width));
  }
  std::vector<Matrix<Scalar>> maps;
  Var<Scalar> out = word_context(features, words, params_["gen.attn.U" + std::to_string(scale)],
                                 capture ? &maps : nullptr);
  if (capture) {
    const std::size_t slot = std::size_t(scale - 1);
    if (capture->maps.size() <= slot) {
      capture->maps.resize(slot + 1);
      capture->grids.resize(slot + 1);
    }
    capture->maps[slot] = std::move(maps);
    capture->grids[slot] = {features.shape().height, features.shape().width};
  }
  return out;
}

template <typename Scalar>
Var<Scalar> Generator<Scalar>::attn_fusion(const Var<Scalar>& h_prev, const Var<Scalar>& features,
                                           const WordBatch<Scalar>& words, Index scale, Phase phase,
                                           AttentionCapture<Scalar>* capture) const {
  const Shape hs = h_prev.shape();
  const Shape fs = features.shape();
  if (hs.height != fs.height || hs.width != fs.width || hs.batch != fs.batch) {
    throw ShapeError("attn_fusion: hidden state " + hs.str() + " does not align with features " + fs.str());
  }
  Var<Scalar> joined = concat_channels(context(features, words, scale, capture), h_prev);
  return upsample_nearest2x(conv_bn_relu(joined, "gen.fuse" + std::to_string(scale), detail::kSame3, phase));
}

template <typename Scalar>
Var<Scalar> Generator<Scalar>::generate(const Var<Scalar>& image, const WordBatch<Scalar>& words, Phase phase,
                                        AttentionCapture<Scalar>* capture) const {
  validate_image_batch(image);
  if (words.batch() != image.shape().batch) {
    throw ShapeError("generate: " + std::to_string(image.shape().batch) + " images but " +
                     std::to_string(words.batch()) + " descriptions");
  }
  if (config_.mode == GeneratorMode::identity) return image;

  const FeaturePyramid<Scalar> pyramid = encode_image(image, phase);
  Var<Scalar> x;
  if (config_.mode == GeneratorMode::single) {
    const Var<Scalar>& deepest = pyramid.scale(1);
    x = concat_channels(deepest, context(deepest, words, 1, capture));
  } else {
    Var<Scalar> h = upsample_nearest2x(context(pyramid.scale(1), words, 1, capture));
    for (Index i = 2; i <= config_.scales; ++i) h = attn_fusion(h, pyramid.scale(i), words, i, phase, capture);
    x = concat_channels(h, pyramid.skip);
  }
  x = conv_bn_relu(x, "gen.join", detail::kSame3, phase);
  for (Index b = 0; b < config_.residual_blocks; ++b)
    x = residual_block(x, b, config_.moves_residual_conv() && b == config_.residual_blocks - 1, phase);
  x = relu(x);
  const Index stages = config_.mode == GeneratorMode::single ? config_.scales + 1 : 1;
  for (Index s = 0; s < stages; ++s)
    x = conv_bn_relu(upsample_nearest2x(x), "gen.dec" + std::to_string(s), detail::kSame3, phase);
  Var<Scalar> out = tanh(conv2d(x, params_["gen.out.w"], detail::kSame3));
  if (out.shape() != image.shape()) {
    throw ShapeError("generate: output " + out.shape().str() + " differs from input " + image.shape().str());
  }
  if (!out.value().allFinite()) throw NumericalFailure("generator produced non-finite output");
  return out;
}

}  // namespace lingedit
