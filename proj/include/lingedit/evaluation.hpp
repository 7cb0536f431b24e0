#pragma once

// Measurement tools: pixel losses, ranking aggregation with a chi-square
// independence test, text interpolation, attention heatmaps and the
// label-entropy probe.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "lingedit/datasets.hpp"
#include "lingedit/model.hpp"

namespace lingedit {

// Pixel losses

/// Per-pixel means in the [0, 1] display range.
struct PixelLosses {
  double l1 = 0;
  double l2 = 0;
  std::size_t pixels = 0;  // channel values averaged over
};

/// Compares paired 8-bit images. With `masks`, only pixels whose mask value
/// is zero (`outside` = true) or nonzero (`outside` = false) count.
PixelLosses pixel_losses(const std::vector<RgbImage>& inputs, const std::vector<RgbImage>& outputs,
                         const std::vector<GrayImage>* masks = nullptr, bool outside = true);

/// Reconstruction losses of positive pairs (each item with its caption
/// `caption_index`). DataError on an empty split.
PixelLosses pixel_losses(const Model& model, const Dataset& split, std::size_t caption_index = 0,
                         std::size_t batch_size = 16);

/// The preprocessed model input for an item (what the loss compares against).
RgbImage model_ready(const Model& model, const RgbImage& image);

// Human-study aggregation

/// Each response lists method indices from best (rank 1) to worst.
struct RankingTable {
  std::vector<std::string> methods;
  std::vector<std::vector<std::size_t>> responses;
};

/// Mean rank per method. DataError on an empty table or an incomplete
/// permutation.
std::map<std::string, double> rank_aggregate(const RankingTable& table);
/// methods x ranks table of how often each method received each rank.
std::vector<std::vector<double>> rank_counts(const RankingTable& table);

struct ChiSquareResult {
  double statistic = 0;
  int dof = 0;
  double p_value = 1;
};

/// Pearson test of independence for a rows x cols contingency table.
/// DataError on ragged input, negative counts or a zero expected count.
ChiSquareResult chi_square_independence(const std::vector<std::vector<double>>& counts);

// Text interpolation

/// Generates with W = (1 - t) W_a + t W_b for t = 0, 1/(steps-1), ..., 1.
/// The descriptions must tokenize to the same length (InvalidDescription).
std::vector<RgbImage> interpolate_text(const Model& model, const RgbImage& image, const std::string& text_a,
                                       const std::string& text_b, int steps);

// Attention heatmaps

struct HeatmapSet {
  std::vector<std::string> words;
  std::vector<Matrix<float>> maps;  // height x width, values in [0, 1]
};

/// Per-word attention of one scale (0 = deepest), upsampled to the image
/// size and normalized so each map's maximum is 1 (zero maps stay zero).
HeatmapSet attention_heatmaps(const Model& model, const RgbImage& image, const std::string& description,
                              std::size_t scale = 0);
/// Same, from weights already captured during generation.
HeatmapSet heatmaps_from_capture(const AttentionCapture<float>& capture, const std::vector<std::string>& words,
                                 int image_size, std::size_t scale = 0);

/// Mean of the map inside the mask divided by its mean outside.
double mask_contrast(const Matrix<float>& map, const GrayImage& mask);

/// One row: the image followed by one overlay per word.
RgbImage heatmap_grid(const RgbImage& image, const HeatmapSet& heatmaps);
/// A map as an 8-bit grayscale image.
GrayImage heatmap_image(const Matrix<float>& map);

// Label-entropy probe

struct ClassifierConfig {
  int pool = 8;  // images are average-pooled to pool x pool before the linear layer
  int epochs = 400;
  double step_size = 0.5;
  double l2 = 1e-4;
};

/// Softmax regression over pooled pixels, trained on a labelled corpus.
class LabelClassifier {
 public:
  static LabelClassifier train(const Dataset& data, const ClassifierConfig& config = {});

  Eigen::VectorXd predict(const RgbImage& image) const;
  std::size_t classes() const { return class_names_.size(); }
  const std::vector<std::string>& class_names() const { return class_names_; }
  double accuracy(const Dataset& data) const;

 private:
  Eigen::VectorXd features(const RgbImage& image) const;

  ClassifierConfig config_;
  std::vector<std::string> class_names_;
  Eigen::MatrixXd weights_;  // classes x (features + 1)
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
};

/// Shannon entropy in nats.
double entropy_nats(const Eigen::VectorXd& distribution);
inline double nats_to_bits(double nats) { return nats / std::log(2.0); }

struct EntropyProbe {
  std::vector<Eigen::VectorXd> distributions;
  std::vector<double> entropies;  // nats
  double mean_nats = 0;
  double mean_bits = 0;
};

/// DataError when the classifier's classes differ from `class_names`.
EntropyProbe label_entropy_probe(const LabelClassifier& classifier, const std::vector<RgbImage>& images,
                                 const std::vector<std::string>& class_names);

// Reporting

/// Writes `record` as JSON and returns an aligned two-column text table.
std::string write_metrics(const std::filesystem::path& path, const nlohmann::json& record);
std::string metrics_table(const nlohmann::json& record);

}  // namespace lingedit
