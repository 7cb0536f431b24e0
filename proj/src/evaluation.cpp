#include "lingedit/evaluation.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace lingedit {

PixelLosses pixel_losses(const std::vector<RgbImage>& inputs, const std::vector<RgbImage>& outputs,
                         const std::vector<GrayImage>* masks, bool outside) {
  if (inputs.size() != outputs.size()) throw ShapeError("pixel_losses: input and output counts differ");
  if (masks && masks->size() != inputs.size()) throw ShapeError("pixel_losses: mask count differs");
  double l1 = 0, l2 = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const RgbImage& a = inputs[i];
    const RgbImage& b = outputs[i];
    if (a.width != b.width || a.height != b.height) throw ShapeError("pixel_losses: image sizes differ");
    const GrayImage* mask = masks ? &(*masks)[i] : nullptr;
    if (mask && (mask->width != a.width || mask->height != a.height)) throw ShapeError("pixel_losses: mask size differs");
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        if (mask && ((mask->at(x, y) == 0) != outside)) continue;
        for (int c = 0; c < 3; ++c) {
          const double d = std::abs(double(a.at(x, y, c)) - double(b.at(x, y, c))) / 255.0;
          l1 += d;
          l2 += d * d;
          ++n;
        }
      }
  }
  if (n == 0) throw DataError("pixel_losses: no pixels to compare");
  return PixelLosses{l1 / double(n), l2 / double(n), n};
}

RgbImage model_ready(const Model& model, const RgbImage& image) {
  const int side = int(model.image_size());
  if (image.width == side && image.height == side) return image;
  return preprocess_eval(image, side);
}

PixelLosses pixel_losses(const Model& model, const Dataset& split, std::size_t caption_index, std::size_t batch_size) {
  if (split.empty()) throw DataError("pixel_losses: empty split");
  std::vector<RgbImage> inputs, outputs;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    const std::size_t end = std::min(split.size(), start + batch_size);
    std::vector<RgbImage> chunk;
    std::vector<std::string> captions;
    for (std::size_t i = start; i < end; ++i) {
      const auto& item = split.items[i];
      if (item.captions.empty()) throw DataError("item " + item.id + " has no captions");
      chunk.push_back(model_ready(model, item.image));
      captions.push_back(item.captions[std::min(caption_index, item.captions.size() - 1)]);
    }
    std::vector<const RgbImage*> pointers;
    for (const auto& img : chunk) pointers.push_back(&img);
    std::vector<RgbImage> out = manipulate_batch(model, pointers, captions);
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      inputs.push_back(std::move(chunk[k]));
      outputs.push_back(std::move(out[k]));
    }
  }
  return pixel_losses(inputs, outputs);
}

std::map<std::string, double> rank_aggregate(const RankingTable& table) {
  const std::vector<std::vector<double>> counts = rank_counts(table);
  std::map<std::string, double> out;
  const double responses = double(table.responses.size());
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    double total = 0;
    for (std::size_t r = 0; r < counts[m].size(); ++r) total += double(r + 1) * counts[m][r];
    out[table.methods[m]] = total / responses;
  }
  return out;
}

std::vector<std::vector<double>> rank_counts(const RankingTable& table) {
  const std::size_t k = table.methods.size();
  if (k == 0) throw DataError("ranking table has no methods");
  if (table.responses.empty()) throw DataError("ranking table has no responses");
  std::vector<std::vector<double>> counts(k, std::vector<double>(k, 0.0));
  for (std::size_t r = 0; r < table.responses.size(); ++r) {
    const auto& response = table.responses[r];
    std::vector<bool> seen(k, false);
    if (response.size() != k) throw DataError("response " + std::to_string(r) + " does not rank every method");
    for (std::size_t pos = 0; pos < k; ++pos) {
      const std::size_t m = response[pos];
      if (m >= k || seen[m]) throw DataError("response " + std::to_string(r) + " is not a permutation");
      seen[m] = true;
      counts[m][pos] += 1;
    }
  }
  return counts;
}

ChiSquareResult chi_square_independence(const std::vector<std::vector<double>>& counts) {
  const std::size_t rows = counts.size();
  if (rows < 2) throw DataError("chi-square needs at least two rows");
  const std::size_t cols = counts[0].size();
  if (cols < 2) throw DataError("chi-square needs at least two columns");
  std::vector<double> row_sum(rows, 0.0), col_sum(cols, 0.0);
  double total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (counts[i].size() != cols) throw DataError("chi-square table is ragged");
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = counts[i][j];
      if (!(v >= 0) || !std::isfinite(v)) throw DataError("chi-square counts must be finite and nonnegative");
      row_sum[i] += v;
      col_sum[j] += v;
      total += v;
    }
  }
  ChiSquareResult result;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double expected = row_sum[i] * col_sum[j] / (total > 0 ? total : 1.0);
      if (expected <= 0)
        throw DataError("expected count is zero in cell (" + std::to_string(i) + ", " + std::to_string(j) +
                        "); pool sparse rows or columns");
      const double d = counts[i][j] - expected;
      result.statistic += d * d / expected;
    }
  result.dof = int((rows - 1) * (cols - 1));
  result.p_value = boost::math::gamma_q(double(result.dof) / 2.0, result.statistic / 2.0);
  return result;
}

std::vector<RgbImage> interpolate_text(const Model& model, const RgbImage& image, const std::string& text_a,
                                       const std::string& text_b, int steps) {
  if (steps < 2) throw DataError("interpolation needs at least two steps");
  const TokenSequence a = model.tokenize(text_a);
  const TokenSequence b = model.tokenize(text_b);
  if (a.length() != b.length())
    throw InvalidDescription("interpolation endpoints must have the same length (" + std::to_string(a.length()) +
                             " vs " + std::to_string(b.length()) + " words)");
  NoGradGuard guard;
  const Matrix<float> wa = model.encode(a).sample(0);
  const Matrix<float> wb = model.encode(b).sample(0);
  const Var<float> input = model_input(model, image);
  std::vector<RgbImage> out;
  for (int k = 0; k < steps; ++k) {
    const float t = float(double(k) / double(steps - 1));
    const Matrix<float> mix = (1.0f - t) * wa + t * wb;
    const WordBatch<float> words = WordBatch<float>::from_matrices({mix});
    out.push_back(batch_image(model.generator.generate(input, words, Phase::eval), 0));
  }
  return out;
}

HeatmapSet heatmaps_from_capture(const AttentionCapture<float>& capture, const std::vector<std::string>& words,
                                 int image_size, std::size_t scale) {
  if (scale >= capture.maps.size() || capture.maps[scale].empty())
    throw DataError("no attention captured at scale " + std::to_string(scale));
  const Matrix<float>& alpha = capture.maps[scale][0];  // N x L
  const auto [h, w] = capture.grids[scale];
  if (alpha.rows() != h * w || std::size_t(alpha.cols()) != words.size())
    throw ShapeError("captured attention does not match the description");
  HeatmapSet set;
  set.words = words;
  for (Index j = 0; j < alpha.cols(); ++j) {
    Matrix<float> grid(h, w);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) grid(y, x) = alpha(y * w + x, j);
    Matrix<float> up = resize_bilinear(grid, image_size, image_size);
    const float peak = up.maxCoeff();
    if (peak > 0) up /= peak;
    set.maps.push_back(up.cwiseMax(0.0f).cwiseMin(1.0f));
  }
  return set;
}

HeatmapSet attention_heatmaps(const Model& model, const RgbImage& image, const std::string& description,
                              std::size_t scale) {
  const Manipulation m = manipulate(model, image, description);
  return heatmaps_from_capture(m.attention, m.words, int(model.image_size()), scale);
}

double mask_contrast(const Matrix<float>& map, const GrayImage& mask) {
  if (map.rows() != mask.height || map.cols() != mask.width) throw ShapeError("mask_contrast: size mismatch");
  double inside = 0, outside = 0;
  std::size_t n_in = 0, n_out = 0;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y)) {
        inside += map(y, x);
        ++n_in;
      } else {
        outside += map(y, x);
        ++n_out;
      }
    }
  if (n_in == 0 || n_out == 0) throw DataError("mask_contrast: mask must have both inside and outside pixels");
  const double mean_out = outside / double(n_out);
  const double mean_in = inside / double(n_in);
  if (mean_out == 0) return mean_in > 0 ? std::numeric_limits<double>::infinity() : 1.0;
  return mean_in / mean_out;
}

GrayImage heatmap_image(const Matrix<float>& map) {
  GrayImage out(int(map.cols()), int(map.rows()));
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(x, y) = std::uint8_t(std::lround(std::clamp(double(map(y, x)), 0.0, 1.0) * 255.0));
  return out;
}

RgbImage heatmap_grid(const RgbImage& image, const HeatmapSet& heatmaps) {
  const int s = image.width;
  if (image.height != s) throw ShapeError("heatmap_grid: image must be square");
  const int gap = 2;
  RgbImage out(int(heatmaps.maps.size() + 1) * (s + gap) - gap, s);
  auto paste = [&](int tile, auto pixel) {
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        for (int c = 0; c < 3; ++c) out.at(tile * (s + gap) + x, y, c) = pixel(x, y, c);
  };
  paste(0, [&](int x, int y, int c) { return image.at(x, y, c); });
  for (std::size_t k = 0; k < heatmaps.maps.size(); ++k) {
    const Matrix<float>& m = heatmaps.maps[k];
    if (m.rows() != s || m.cols() != s) throw ShapeError("heatmap_grid: map size differs from the image");
    // dimmed image with a warm overlay where attention is high
    paste(int(k) + 1, [&](int x, int y, int c) {
      const double v = m(y, x);
      const double base = 0.4 * image.at(x, y, c);
      const double heat = c == 0 ? 255.0 * v : (c == 1 ? 200.0 * v * v : 0.0);
      return std::uint8_t(std::lround(std::min(255.0, base + 0.8 * heat)));
    });
  }
  return out;
}

Eigen::VectorXd LabelClassifier::features(const RgbImage& image) const {
  const int p = config_.pool;
  const RgbImage small = (image.width == p && image.height == p) ? image : resize_bilinear(image, p, p);
  Eigen::VectorXd f(3 * p * p);
  for (int y = 0; y < p; ++y)
    for (int x = 0; x < p; ++x)
      for (int c = 0; c < 3; ++c) f((c * p + y) * p + x) = small.at(x, y, c) / 255.0;
  return f;
}

LabelClassifier LabelClassifier::train(const Dataset& data, const ClassifierConfig& config) {
  if (data.empty()) throw DataError("classifier needs training data");
  if (config.pool < 1 || config.epochs < 1) throw DataError("classifier: pool and epochs must be positive");
  LabelClassifier c;
  c.config_ = config;
  c.class_names_ = data.class_names;
  const Index k = Index(c.class_names_.size());
  if (k < 2) throw DataError("classifier needs at least two classes");
  const Index n = Index(data.size());
  const Index d = 3 * config.pool * config.pool;

  Eigen::MatrixXd x(d + 1, n);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(k, n);
  for (Index i = 0; i < n; ++i) {
    const auto& item = data.items[std::size_t(i)];
    if (item.label < 0 || item.label >= k) throw DataError("item " + item.id + " has an out-of-range label");
    x.col(i).head(d) = c.features(item.image);
    y(item.label, i) = 1;
  }
  c.mean_ = x.topRows(d).rowwise().mean();
  c.scale_ = ((x.topRows(d).colwise() - c.mean_).array().square().rowwise().mean().sqrt() + 1e-6).inverse();
  x.topRows(d) = (x.topRows(d).colwise() - c.mean_).array().colwise() * c.scale_.array();
  x.row(d).setOnes();

  c.weights_ = Eigen::MatrixXd::Zero(k, d + 1);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Eigen::MatrixXd logits = c.weights_ * x;
    logits.rowwise() -= logits.colwise().maxCoeff();
    Eigen::MatrixXd prob = logits.array().exp();
    prob.array().rowwise() /= prob.colwise().sum().array();
    Eigen::MatrixXd grad = (prob - y) * x.transpose() / double(n);
    grad.leftCols(d) += config.l2 * c.weights_.leftCols(d);
    c.weights_ -= config.step_size * grad;
  }
  return c;
}

Eigen::VectorXd LabelClassifier::predict(const RgbImage& image) const {
  const Index d = mean_.size();
  Eigen::VectorXd x(d + 1);
  x.head(d) = (features(image) - mean_).cwiseProduct(scale_);
  x(d) = 1;
  Eigen::VectorXd logits = weights_ * x;
  logits.array() -= logits.maxCoeff();
  Eigen::VectorXd p = logits.array().exp();
  return p / p.sum();
}

double LabelClassifier::accuracy(const Dataset& data) const {
  if (data.empty()) throw DataError("accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& item : data.items) {
    Eigen::Index best = 0;
    predict(item.image).maxCoeff(&best);
    correct += best == item.label;
  }
  return double(correct) / double(data.size());
}

double entropy_nats(const Eigen::VectorXd& distribution) {
  double h = 0;
  for (Index k = 0; k < distribution.size(); ++k) {
    const double p = distribution(k);
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

EntropyProbe label_entropy_probe(const LabelClassifier& classifier, const std::vector<RgbImage>& images,
                                 const std::vector<std::string>& class_names) {
  if (classifier.class_names() != class_names)
    throw DataError("classifier classes do not match the corpus (" + std::to_string(classifier.classes()) + " vs " +
                    std::to_string(class_names.size()) + ")");
  if (images.empty()) throw DataError("entropy probe needs at least one image");
  EntropyProbe probe;
  for (const auto& img : images) {
    probe.distributions.push_back(classifier.predict(img));
    probe.entropies.push_back(entropy_nats(probe.distributions.back()));
    probe.mean_nats += probe.entropies.back();
  }
  probe.mean_nats /= double(images.size());
  probe.mean_bits = nats_to_bits(probe.mean_nats);
  return probe;
}

std::string metrics_table(const nlohmann::json& record) {
  std::size_t width = 0;
  for (const auto& [key, value] : record.items()) width = std::max(width, key.size());
  std::ostringstream out;
  for (const auto& [key, value] : record.items()) {
    out << std::left << std::setw(int(width) + 2) << key;
    if (value.is_number_float())
      out << std::setprecision(6) << value.get<double>();
    else if (value.is_string())
      out << value.get<std::string>();
    else
      out << value.dump();
    out << '\n';
  }
  return out.str();
}

std::string write_metrics(const std::filesystem::path& path, const nlohmann::json& record) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << record.dump(2) << '\n';
  return metrics_table(record);
}

}  // namespace lingedit
