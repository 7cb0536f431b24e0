#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "lingedit/objectives.hpp"

namespace lingedit {

/// Parses `key = value` lines; `#` starts a comment. Duplicate keys and
/// malformed lines raise DataError.
std::map<std::string, std::string> parse_key_values(const std::string& text);

struct TrainingConfig {
  // data
  std::string dataset = "synth";  // synth | cub | oxford102
  std::string data_root;
  Index image_size = 64;
  Index max_caption_length = 20;
  Index synth_items = 500;
  std::uint64_t synth_seed = 7;

  // model
  GeneratorMode mode = GeneratorMode::multi;
  Index scales = 3;
  Index base_channels = 16;
  Index pyramid_channels = 64;
  Index fusion_channels = 32;
  Index residual_channels = 32;
  Index residual_blocks = 4;
  bool relocate_residual_conv = true;
  Index embedding_width = 128;
  Index hidden_width = 128;  // per direction; word features are 2x this
  double embedding_init = 0.1;
  Index disc_base_channels = 16;
  Index disc_layers = 4;
  Index disc_local_layer = 2;
  std::string word_vectors;  // optional pretrained vectors file

  // optimization
  Index epochs = 600;
  Index batch_size = 32;
  double step_size = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  Index decay_every = 100;
  double decay_factor = 0.5;
  double gamma1 = 10.0;
  double gamma2 = -1.0;  // negative selects the mode default
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  bool freeze_text = false;
  bool flip = true;
  bool crop = true;
  std::uint64_t seed = 1;

  // output
  std::string output_dir = "runs/default";
  Index checkpoint_every = 10;

  LossWeights loss_weights() const;
  GeneratorConfig generator_config() const;
  DiscriminatorConfig discriminator_config() const;
  TextEncoderConfig text_config(Index vocab_size) const;
  /// Step size in effect during `epoch` (0-based).
  double step_size_at(Index epoch) const;

  /// Throws DataError describing the first violated constraint.
  void validate() const;

  std::string to_text() const;
  static TrainingConfig from_text(const std::string& text);
  static TrainingConfig from_file(const std::filesystem::path& path);
  /// Applies one `key=value` override.
  void set(const std::string& key, const std::string& value);
};

}  // namespace lingedit
