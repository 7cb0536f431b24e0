#pragma once

#include <random>
#include <string>
#include <vector>

#include "lingedit/attention.hpp"

namespace lingedit {

enum class Phase { train, eval };

enum class GeneratorMode { single, multi, identity };

std::string to_string(GeneratorMode mode);
GeneratorMode generator_mode_from_string(const std::string& name);

struct GeneratorConfig {
  GeneratorMode mode = GeneratorMode::multi;
  Index scales = 3;              // pyramid depth m
  Index base_channels = 32;      // stem width
  Index pyramid_channels = 256;  // cap on pyramid widths
  Index fusion_channels = 128;
  Index residual_channels = 128;
  Index residual_blocks = 4;
  Index word_width = 256;  // D
  // Multi mode: the encoder gains a stride-1 convolution after the stem and
  // the last residual block keeps only one convolution.
  bool relocate_residual_conv = true;

  /// Widths of the stride-2 encoder stages: entry 0 is the half-resolution
  /// skip level, entries 1..m are V_m .. V_1.
  std::vector<Index> down_channels() const;
  /// Channel count of V_i, i = 1 (deepest) .. m.
  Index scale_channels(Index i) const { return down_channels()[std::size_t(scales + 1 - i)]; }
  bool moves_residual_conv() const { return mode == GeneratorMode::multi && relocate_residual_conv; }
};

/// Per-scale attention maps recorded during a forward pass. maps[s][b] is the
/// N x L weight matrix of sample b at scale s (s = 0 is V_1, the deepest).
template <typename Scalar>
struct AttentionCapture {
  std::vector<std::vector<Matrix<Scalar>>> maps;
  std::vector<std::pair<Index, Index>> grids;  // (height, width) per scale
};

template <typename Scalar>
struct FeaturePyramid {
  std::vector<Var<Scalar>> levels;  // levels[0] = V_1 (deepest) .. levels[m-1] = V_m
  Var<Scalar> skip;                 // half-resolution encoder features

  const Var<Scalar>& scale(Index i) const { return levels[std::size_t(i - 1)]; }
};

/// Checks a batch of images: square, side in {64, 128, 256}, three channels,
/// values in [-1, 1].
template <typename Scalar>
void validate_image_batch(const Var<Scalar>& image) {
  const Shape s = image.shape();
  if (s.channels != 3) throw ShapeError("image must have 3 channels, got " + s.str());
  if (s.height != s.width) throw ShapeError("image must be square, got " + s.str());
  if (s.height != 64 && s.height != 128 && s.height != 256)
    throw ShapeError("unsupported image size " + std::to_string(s.height) + " (expected 64, 128 or 256)");
  if (!image.value().allFinite()) throw NumericalFailure("image contains non-finite values");
  const Scalar tol = Scalar(1e-4);
  if (image.value().maxCoeff() > Scalar(1) + tol || image.value().minCoeff() < Scalar(-1) - tol)
    throw ShapeError("image values must lie in [-1, 1]");
}

template <typename Scalar>
class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& config, std::mt19937_64& rng);

  FeaturePyramid<Scalar> encode_image(const Var<Scalar>& image, Phase phase) const;

  /// NN-up(Conv([word_context(V_i, W) ; h_prev])). `scale` is i (1 = deepest).
  Var<Scalar> attn_fusion(const Var<Scalar>& h_prev, const Var<Scalar>& features, const WordBatch<Scalar>& words,
                          Index scale, Phase phase, AttentionCapture<Scalar>* capture = nullptr) const;

  /// Output has the input's shape with values in [-1, 1].
  Var<Scalar> generate(const Var<Scalar>& image, const WordBatch<Scalar>& words, Phase phase,
                       AttentionCapture<Scalar>* capture = nullptr) const;

  const GeneratorConfig& config() const { return config_; }
  ParameterSet<Scalar>& params() { return params_; }
  const ParameterSet<Scalar>& params() const { return params_; }

 private:
  Var<Scalar> conv_bn_relu(const Var<Scalar>& x, const std::string& name, ConvSpec spec, Phase phase) const;
  Var<Scalar> bn(const Var<Scalar>& x, const std::string& name, Phase phase) const;
  Var<Scalar> residual_block(const Var<Scalar>& x, Index block, bool single_conv, Phase phase) const;
  Var<Scalar> context(const Var<Scalar>& features, const WordBatch<Scalar>& words, Index scale,
                      AttentionCapture<Scalar>* capture) const;
  void add_conv(const std::string& name, Index out, Index in, Index kernel, bool with_bn, std::mt19937_64& rng);

  GeneratorConfig config_;
  // Running statistics are updated during Phase::train forwards.
  mutable ParameterSet<Scalar> params_;
};

}  // namespace lingedit

#include "lingedit/generator_impl.hpp"
