#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lingedit/archive.hpp"
#include "lingedit/image.hpp"

namespace lingedit {

inline constexpr std::size_t kCaptionsPerImage = 10;

struct CaptionedImage {
  std::string id;
  RgbImage image;
  std::vector<std::string> captions;
  int label = 0;  // index into Dataset::class_names
  // Synthetic items only.
  GrayImage mask;
  std::string shape;
  std::string color;
};

struct Dataset {
  std::vector<CaptionedImage> items;
  std::vector<std::string> class_names;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  /// All captions in item order, used to build a vocabulary.
  std::vector<std::string> all_captions() const;
};

enum class CorpusKind { cub, oxford102 };
enum class Split { train, val, test };

CorpusKind corpus_kind_from_string(const std::string& name);
Split split_from_string(const std::string& name);
std::string to_string(Split split);

/// Reads `root/splits/<split>.txt` (one image id per line), the image
/// `root/images/<id>.{jpg,jpeg,png}` and its captions `root/text_c10/<id>.txt`.
/// The class label is the id's directory prefix (`<class>/<name>`). CUB has no
/// validation split.
Dataset load_split(const std::filesystem::path& root, CorpusKind kind, Split split);

// Synthetic shapes corpus

inline const std::array<std::string, 3> kSynthShapes{"square", "circle", "triangle"};
inline const std::array<std::string, 6> kSynthColors{"red", "green", "blue", "yellow", "purple", "white"};
/// Reference RGB for each named color, aligned with kSynthColors.
inline const std::array<std::array<int, 3>, 6> kSynthPalette{{
    {220, 30, 30}, {30, 190, 40}, {30, 60, 225}, {230, 215, 30}, {150, 40, 190}, {240, 240, 240}}};

struct SynthSpec {
  int canvas = 64;
  double min_coverage = 0.2;
  double max_coverage = 0.5;
  int color_jitter = 12;
};

/// Renders one object on a dark smooth background. The mask is exactly the
/// set of painted object pixels.
CaptionedImage render_synthetic(const std::string& shape, const std::string& color, std::mt19937_64& rng,
                                const SynthSpec& spec = {});

/// The 10 caption templates filled in for one (shape, color).
std::vector<std::string> synthetic_captions(const std::string& shape, const std::string& color);

/// n >= 2 items; deterministic under the seed. Class labels index
/// shape x color combinations.
Dataset synth_generate(std::size_t n, std::uint64_t seed, const SynthSpec& spec = {});
std::vector<std::string> synthetic_class_names();
int synthetic_label(const std::string& shape, const std::string& color);

/// Nearest named color to the mean RGB of the masked pixels.
std::string oracle_color(const RgbImage& image, const GrayImage& mask);
/// Mean of one channel (0..255) over the masked pixels.
double masked_channel_mean(const RgbImage& image, const GrayImage& mask, int channel);

Archive dataset_to_archive(const Dataset& data);
Dataset dataset_from_archive(const Archive& archive);
/// SHA-256 of the encoded corpus archive.
std::string dataset_hash(const Dataset& data);

// Augmentation

struct AugmentDraw {
  bool flip = false;
  int offset_x = 0;
  int offset_y = 0;
};

/// Horizontal flip with p = 0.5, then a random `target` crop of the image
/// resized so its shorter side is target + target / 8.
RgbImage augment(const RgbImage& image, int target, std::mt19937_64& rng, bool flip = true, bool crop = true);
/// Deterministic form of augment() with explicit draws.
RgbImage augment_with(const RgbImage& image, int target, const AugmentDraw& draw, bool crop = true);
/// Uniform draw of a mismatching caption: a random other item, then one of
/// its captions. Needs at least two items.
const std::string& sample_mismatch(const Dataset& data, std::size_t current, std::mt19937_64& rng);

}  // namespace lingedit
