#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lingedit/autograd.hpp"

namespace lingedit {

/// 8-bit interleaved RGB image.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(std::size_t(w) * std::size_t(h) * 3, 0) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(std::size_t(y) * std::size_t(width) + std::size_t(x)) * 3 + std::size_t(c)]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(std::size_t(y) * std::size_t(width) + std::size_t(x)) * 3 + std::size_t(c)];
  }
  bool empty() const { return pixels.empty(); }
  bool operator==(const RgbImage&) const = default;
};

/// Single-channel 8-bit mask (0 or 255 for binary masks).
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h) : width(w), height(h), pixels(std::size_t(w) * std::size_t(h), 0) {}
  std::uint8_t& at(int x, int y) { return pixels[std::size_t(y) * std::size_t(width) + std::size_t(x)]; }
  std::uint8_t at(int x, int y) const { return pixels[std::size_t(y) * std::size_t(width) + std::size_t(x)]; }
  bool operator==(const GrayImage&) const = default;
};

/// [0, 255] -> [-1, 1] as a 3 x (H*W) matrix (pixel-major columns).
Matrix<float> normalize(const RgbImage& image);
/// Inverse of normalize(); values are clamped to [-1, 1] and rounded.
RgbImage denormalize(const Matrix<float>& tensor, int width, int height);

/// Stacks images of one size into a (3 x B*H*W) batch var.
template <typename Scalar>
Var<Scalar> image_batch(const std::vector<const RgbImage*>& images) {
  if (images.empty()) throw ShapeError("image_batch: empty batch");
  const int w = images.front()->width;
  const int h = images.front()->height;
  const Index n = Index(w) * Index(h);
  Matrix<Scalar> data(3, n * Index(images.size()));
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b]->width != w || images[b]->height != h) throw ShapeError("image_batch: mixed image sizes");
    data.middleCols(Index(b) * n, n) = normalize(*images[b]).template cast<Scalar>();
  }
  return Var<Scalar>::constant(std::move(data), Shape{Index(images.size()), 3, h, w});
}

/// Extracts sample b of a batch var as an RGB image.
template <typename Scalar>
RgbImage batch_image(const Var<Scalar>& batch, Index b) {
  const Shape s = batch.shape();
  const Matrix<float> m = batch.value().middleCols(b * s.spatial(), s.spatial()).template cast<float>();
  return denormalize(m, int(s.width), int(s.height));
}

std::string encode_png(const RgbImage& image);
std::string encode_png(const GrayImage& image);
RgbImage decode_image(const std::string& bytes);  // PNG or JPEG; throws DataError
RgbImage read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const GrayImage& image);

RgbImage resize_bilinear(const RgbImage& image, int width, int height);
/// Bilinear resize of a single-channel float grid (row-major, height x width).
Matrix<float> resize_bilinear(const Matrix<float>& grid, int width, int height);

RgbImage flip_horizontal(const RgbImage& image);
RgbImage crop(const RgbImage& image, int x, int y, int width, int height);
RgbImage center_crop(const RgbImage& image, int size);
/// Resize so the shorter side is `side`, keeping the aspect ratio.
RgbImage resize_shorter_side(const RgbImage& image, int side);

/// Eval preprocessing: shorter side to target + 16, then center crop.
RgbImage preprocess_eval(const RgbImage& image, int target);

}  // namespace lingedit
