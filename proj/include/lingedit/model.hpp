#pragma once

// A complete trainable system (text encoder, generator, discriminator and the
// vocabulary it was built with) plus checkpoint I/O.

#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include "lingedit/archive.hpp"
#include "lingedit/config.hpp"
#include "lingedit/image.hpp"

namespace lingedit {

struct Model {
  TrainingConfig config;
  Vocabulary vocab;
  TextEncoder<float> text;
  Generator<float> generator;
  Discriminator<float> discriminator;

  static Model create(const TrainingConfig& config, Vocabulary vocab, std::mt19937_64& rng);
  /// A model whose generator returns its input unchanged.
  static Model identity(const TrainingConfig& config, Vocabulary vocab);

  Index image_size() const { return config.image_size; }

  TokenSequence tokenize(const std::string& description) const {
    return lingedit::tokenize(description, vocab, config.max_caption_length);
  }
  /// Encodes a description with gradients disabled.
  WordBatch<float> encode(const TokenSequence& tokens) const;
};

/// Optimizer and progress state that accompany a model during training.
struct TrainState {
  Model model;
  Adam<float> opt_generator;
  Adam<float> opt_discriminator;
  Adam<float> opt_text;
  long long epoch = 0;  // completed epochs
  long long step = 0;   // completed steps
  std::mt19937_64 rng;
};

/// Short stable identifier of a checkpoint's parameters.
std::string model_id(const Model& model);

Archive checkpoint_archive(const TrainState& state);
TrainState state_from_archive(const Archive& archive);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Loads only the model. When `expected_vocab` is given its hash must match
/// the checkpoint's vocabulary; otherwise DataError.
Model load_model(const std::filesystem::path& path, const Vocabulary* expected_vocab = nullptr);

// Inference on 8-bit images. Inputs of a different size are resized and
// centre-cropped to the model's resolution first.

Var<float> model_input(const Model& model, const RgbImage& image);

struct Manipulation {
  RgbImage output;
  std::vector<std::string> words;
  AttentionCapture<float> attention;
};

Manipulation manipulate(const Model& model, const RgbImage& image, const std::string& description);
/// Batched form: all images must already be at the model resolution.
std::vector<RgbImage> manipulate_batch(const Model& model, const std::vector<const RgbImage*>& images,
                                       const std::vector<std::string>& descriptions);

}  // namespace lingedit
