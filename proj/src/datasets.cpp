#include "lingedit/datasets.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "lingedit/hashing.hpp"

namespace lingedit {

std::vector<std::string> Dataset::all_captions() const {
  std::vector<std::string> out;
  for (const auto& item : items) out.insert(out.end(), item.captions.begin(), item.captions.end());
  return out;
}

CorpusKind corpus_kind_from_string(const std::string& name) {
  if (name == "cub") return CorpusKind::cub;
  if (name == "oxford102") return CorpusKind::oxford102;
  throw DataError("unknown corpus '" + name + "' (expected cub or oxford102)");
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw DataError("unknown split '" + name + "' (expected train, val or test)");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "";
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::filesystem::path find_image(const std::filesystem::path& root, const std::string& id) {
  for (const char* ext : {".jpg", ".jpeg", ".png"}) {
    std::filesystem::path p = root / "images" / (id + ext);
    if (std::filesystem::exists(p)) return p;
  }
  throw DataError("missing image for " + id + " under " + (root / "images").string());
}

}  // namespace

Dataset load_split(const std::filesystem::path& root, CorpusKind kind, Split split) {
  if (kind == CorpusKind::cub && split == Split::val)
    throw DataError("the CUB corpus has no validation split (use train or test)");
  const std::vector<std::string> ids = read_lines(root / "splits" / (to_string(split) + ".txt"));
  Dataset data;
  std::map<std::string, int> classes;
  std::set<std::string> seen;
  for (const std::string& id : ids) {
    if (!seen.insert(id).second) throw DataError("duplicate id " + id + " in split " + to_string(split));
    CaptionedImage item;
    item.id = id;
    item.image = read_image(find_image(root, id));
    item.captions = read_lines(root / "text_c10" / (id + ".txt"));
    if (item.captions.size() != kCaptionsPerImage) {
      throw DataError((root / "text_c10" / (id + ".txt")).string() + ": expected " +
                      std::to_string(kCaptionsPerImage) + " captions, found " + std::to_string(item.captions.size()));
    }
    const auto slash = id.find('/');
    const std::string cls = slash == std::string::npos ? std::string("unlabeled") : id.substr(0, slash);
    auto [it, inserted] = classes.emplace(cls, int(classes.size()));
    item.label = it->second;
    data.items.push_back(std::move(item));
  }
  // Relabel by sorted class name so labels do not depend on file order.
  std::vector<std::string> names;
  for (const auto& [name, idx] : classes) names.push_back(name);
  std::map<int, int> remap;
  for (std::size_t k = 0; k < names.size(); ++k) remap[classes[names[k]]] = int(k);
  for (auto& item : data.items) item.label = remap[item.label];
  data.class_names = std::move(names);
  return data;
}

std::vector<std::string> synthetic_captions(const std::string& shape, const std::string& color) {
  return {"the " + shape + " is " + color,
          "a " + color + " " + shape,
          "this is a " + color + " " + shape,
          "a " + color + " " + shape + " on a dark background",
          "the object is a " + color + " " + shape,
          "there is a " + color + " " + shape + " in the picture",
          "a " + shape + " that is " + color,
          "this " + shape + " has a " + color + " color",
          "a " + color + " colored " + shape,
          "the picture shows a " + color + " " + shape};
}

std::vector<std::string> synthetic_class_names() {
  std::vector<std::string> names;
  for (const auto& s : kSynthShapes)
    for (const auto& c : kSynthColors) names.push_back(c + " " + s);
  return names;
}

int synthetic_label(const std::string& shape, const std::string& color) {
  const auto s = std::find(kSynthShapes.begin(), kSynthShapes.end(), shape);
  const auto c = std::find(kSynthColors.begin(), kSynthColors.end(), color);
  if (s == kSynthShapes.end() || c == kSynthColors.end()) throw DataError("unknown synthetic class " + color + " " + shape);
  return int(s - kSynthShapes.begin()) * int(kSynthColors.size()) + int(c - kSynthColors.begin());
}

namespace {

std::size_t color_index(const std::string& color) {
  const auto c = std::find(kSynthColors.begin(), kSynthColors.end(), color);
  if (c == kSynthColors.end()) throw DataError("unknown color " + color);
  return std::size_t(c - kSynthColors.begin());
}

void paint_background(RgbImage& img, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dark(0, 70);
  std::uniform_int_distribution<int> style(0, 3);
  int a[3], b[3];
  for (int c = 0; c < 3; ++c) {
    a[c] = dark(rng);
    b[c] = dark(rng);
  }
  const int kind = style(rng);  // 0 solid, 1 horizontal, 2 vertical, 3 diagonal
  const double span = double(img.width - 1 + img.height - 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double t = 0;
      if (kind == 1) t = double(x) / (img.width - 1);
      if (kind == 2) t = double(y) / (img.height - 1);
      if (kind == 3) t = double(x + y) / span;
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(a[c] * (1 - t) + b[c] * t));
    }
}

// Point-in-shape test at pixel centres.
bool inside(const std::string& shape, double px, double py, double cx, double cy, double size) {
  if (shape == "square") return std::abs(px - cx) <= size / 2 && std::abs(py - cy) <= size / 2;
  if (shape == "circle") return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= size * size / 4;
  // isosceles triangle, apex up, base `size`, height 0.9 * size, centred on (cx, cy)
  const double h = 0.9 * size;
  const double top = cy - h / 2;
  const double t = (py - top) / h;
  if (t < 0 || t > 1) return false;
  return std::abs(px - cx) <= t * size / 2;
}

double shape_area(const std::string& shape, double size) {
  if (shape == "square") return size * size;
  if (shape == "circle") return M_PI * size * size / 4;
  return 0.45 * size * size;
}

}  // namespace

CaptionedImage render_synthetic(const std::string& shape, const std::string& color, std::mt19937_64& rng,
                                const SynthSpec& spec) {
  if (std::find(kSynthShapes.begin(), kSynthShapes.end(), shape) == kSynthShapes.end())
    throw DataError("unknown shape " + shape);
  const std::array<int, 3> base = kSynthPalette[color_index(color)];
  const int w = spec.canvas;
  const double canvas_area = double(w) * w;
  std::uniform_real_distribution<double> coverage(spec.min_coverage + 0.02, spec.max_coverage - 0.05);
  std::uniform_int_distribution<int> jitter(-spec.color_jitter, spec.color_jitter);
  for (int attempt = 0; attempt < 100; ++attempt) {
    CaptionedImage item;
    item.image = RgbImage(w, w);
    item.mask = GrayImage(w, w);
    paint_background(item.image, rng);
    const double target = coverage(rng) * canvas_area;
    double size = std::sqrt(target / (shape_area(shape, 1.0)));
    size = std::min(size, double(w) - 2);
    const double half_w = size / 2;
    const double half_h = shape == "triangle" ? 0.45 * size : size / 2;
    std::uniform_real_distribution<double> cx(half_w + 1, w - half_w - 1);
    std::uniform_real_distribution<double> cy(half_h + 1, w - half_h - 1);
    const double x0 = cx(rng);
    const double y0 = cy(rng);
    std::array<int, 3> rgb{};
    for (int c = 0; c < 3; ++c) rgb[std::size_t(c)] = std::clamp(base[std::size_t(c)] + jitter(rng), 0, 255);
    int painted = 0;
    for (int y = 0; y < w; ++y)
      for (int x = 0; x < w; ++x) {
        if (!inside(shape, x + 0.5, y + 0.5, x0, y0, size)) continue;
        for (int c = 0; c < 3; ++c) item.image.at(x, y, c) = static_cast<std::uint8_t>(rgb[std::size_t(c)]);
        item.mask.at(x, y) = 255;
        ++painted;
      }
    const double frac = painted / canvas_area;
    if (frac < spec.min_coverage || frac > spec.max_coverage) continue;
    item.shape = shape;
    item.color = color;
    item.captions = synthetic_captions(shape, color);
    item.label = synthetic_label(shape, color);
    return item;
  }
  throw DataError("could not place a " + shape + " within the coverage bounds");
}

Dataset synth_generate(std::size_t n, std::uint64_t seed, const SynthSpec& spec) {
  if (n < 2) throw InsufficientData("synthetic corpus needs at least 2 items");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_shape(0, kSynthShapes.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_color(0, kSynthColors.size() - 1);
  Dataset data;
  data.class_names = synthetic_class_names();
  for (std::size_t k = 0; k < n; ++k) {
    const std::string& shape = kSynthShapes[pick_shape(rng)];
    const std::string& color = kSynthColors[pick_color(rng)];
    CaptionedImage item = render_synthetic(shape, color, rng, spec);
    char id[32];
    std::snprintf(id, sizeof id, "synth/%05zu", k);
    item.id = id;
    data.items.push_back(std::move(item));
  }
  return data;
}

double masked_channel_mean(const RgbImage& image, const GrayImage& mask, int channel) {
  if (mask.width != image.width || mask.height != image.height) throw ShapeError("mask does not match image");
  double sum = 0;
  long count = 0;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (mask.at(x, y) > 127) {
        sum += image.at(x, y, channel);
        ++count;
      }
  if (count == 0) throw DataError("empty mask");
  return sum / double(count);
}

std::string oracle_color(const RgbImage& image, const GrayImage& mask) {
  double mean[3];
  for (int c = 0; c < 3; ++c) mean[c] = masked_channel_mean(image, mask, c);
  std::size_t best = 0;
  double best_d = 1e300;
  for (std::size_t k = 0; k < kSynthPalette.size(); ++k) {
    double d = 0;
    for (int c = 0; c < 3; ++c) d += std::pow(mean[c] - kSynthPalette[k][std::size_t(c)], 2.0);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return kSynthColors[best];
}

Archive dataset_to_archive(const Dataset& data) {
  Archive a;
  a.manifest["kind"] = "captioned_corpus";
  a.manifest["class_names"] = data.class_names;
  nlohmann::json items = nlohmann::json::array();
  for (const auto& item : data.items) {
    nlohmann::json j = {{"id", item.id},
                        {"captions", item.captions},
                        {"label", item.label},
                        {"width", item.image.width},
                        {"height", item.image.height}};
    if (!item.shape.empty()) {
      j["shape"] = item.shape;
      j["color"] = item.color;
    }
    items.push_back(std::move(j));
    a.blobs[item.id + "/image"] = std::string(item.image.pixels.begin(), item.image.pixels.end());
    if (!item.mask.pixels.empty()) a.blobs[item.id + "/mask"] = std::string(item.mask.pixels.begin(), item.mask.pixels.end());
  }
  a.manifest["items"] = std::move(items);
  return a;
}

Dataset dataset_from_archive(const Archive& archive) {
  if (archive.manifest.value("kind", "") != "captioned_corpus") throw DataError("archive is not a corpus");
  Dataset data;
  try {
    data.class_names = archive.manifest.at("class_names").get<std::vector<std::string>>();
    for (const auto& j : archive.manifest.at("items")) {
      CaptionedImage item;
      item.id = j.at("id").get<std::string>();
      item.captions = j.at("captions").get<std::vector<std::string>>();
      item.label = j.at("label").get<int>();
      const int w = j.at("width").get<int>();
      const int h = j.at("height").get<int>();
      item.image = RgbImage(w, h);
      const std::string& px = archive.blob(item.id + "/image");
      if (px.size() != item.image.pixels.size()) throw DataError("corpus image size mismatch for " + item.id);
      std::copy(px.begin(), px.end(), item.image.pixels.begin());
      if (j.contains("shape")) {
        item.shape = j.at("shape").get<std::string>();
        item.color = j.at("color").get<std::string>();
        item.mask = GrayImage(w, h);
        const std::string& m = archive.blob(item.id + "/mask");
        if (m.size() != item.mask.pixels.size()) throw DataError("corpus mask size mismatch for " + item.id);
        std::copy(m.begin(), m.end(), item.mask.pixels.begin());
      }
      data.items.push_back(std::move(item));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corpus manifest: ") + e.what());
  }
  return data;
}

std::string dataset_hash(const Dataset& data) { return sha256_hex(encode_archive(dataset_to_archive(data))); }

RgbImage augment_with(const RgbImage& image, int target, const AugmentDraw& draw, bool crop_enabled) {
  if (image.width < target || image.height < target)
    throw ShapeError("augment: image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     " is smaller than the crop " + std::to_string(target));
  RgbImage out = draw.flip ? flip_horizontal(image) : image;
  if (!crop_enabled) {
    if (out.width == target && out.height == target) return out;
    return center_crop(resize_shorter_side(out, target), target);
  }
  out = resize_shorter_side(out, target + target / 8);
  return crop(out, draw.offset_x, draw.offset_y, target, target);
}

RgbImage augment(const RgbImage& image, int target, std::mt19937_64& rng, bool flip, bool crop_enabled) {
  std::bernoulli_distribution coin(0.5);
  AugmentDraw draw;
  draw.flip = flip && coin(rng);
  if (crop_enabled) {
    if (image.width < target || image.height < target) throw ShapeError("augment: image smaller than the crop");
    const int side = target + target / 8;
    // matches resize_shorter_side's rounding
    int w = side, h = side;
    if (image.width <= image.height) {
      h = int(std::lround(double(image.height) * side / image.width));
    } else {
      w = int(std::lround(double(image.width) * side / image.height));
    }
    draw.offset_x = std::uniform_int_distribution<int>(0, w - target)(rng);
    draw.offset_y = std::uniform_int_distribution<int>(0, h - target)(rng);
  }
  return augment_with(image, target, draw, crop_enabled);
}

const std::string& sample_mismatch(const Dataset& data, std::size_t current, std::mt19937_64& rng) {
  if (data.size() < 2) throw InsufficientData("mismatch sampling needs at least two items");
  if (current >= data.size()) throw DataError("sample_mismatch: item index out of range");
  std::size_t other = std::uniform_int_distribution<std::size_t>(0, data.size() - 2)(rng);
  if (other >= current) ++other;
  const auto& captions = data.items[other].captions;
  if (captions.empty()) throw DataError("item " + data.items[other].id + " has no captions");
  return captions[std::uniform_int_distribution<std::size_t>(0, captions.size() - 1)(rng)];
}

}  // namespace lingedit
