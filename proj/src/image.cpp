#include "lingedit/image.hpp"

#include <png.h>

#include <cstdio>
#include <csetjmp>
#include <cmath>
#include <fstream>
#include <iterator>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

namespace lingedit {

Matrix<float> normalize(const RgbImage& image) {
  const Index n = Index(image.width) * Index(image.height);
  Matrix<float> m(3, n);
  for (Index p = 0; p < n; ++p)
    for (Index c = 0; c < 3; ++c) m(c, p) = float(image.pixels[std::size_t(p * 3 + c)]) / 127.5f - 1.0f;
  return m;
}

RgbImage denormalize(const Matrix<float>& tensor, int width, int height) {
  if (tensor.rows() != 3 || tensor.cols() != Index(width) * Index(height))
    throw ShapeError("denormalize: tensor does not match image size");
  RgbImage image(width, height);
  for (Index p = 0; p < tensor.cols(); ++p) {
    for (Index c = 0; c < 3; ++c) {
      const float v = std::clamp(tensor(c, p), -1.0f, 1.0f);
      image.pixels[std::size_t(p * 3 + c)] = static_cast<std::uint8_t>(std::lround((v + 1.0f) * 127.5f));
    }
  }
  return image;
}

namespace {

std::string png_to_memory(const std::uint8_t* data, int width, int height, png_uint_32 format) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = png_uint_32(width);
  img.height = png_uint_32(height);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, data, 0, nullptr))
    throw DataError(std::string("png encode: ") + img.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, data, 0, nullptr))
    throw DataError(std::string("png encode: ") + img.message);
  out.resize(size);
  return out;
}

RgbImage decode_png(const std::string& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw DataError(std::string("png decode: ") + img.message);
  img.format = PNG_FORMAT_RGB;
  RgbImage out(int(img.width), int(img.height));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError(std::string("png decode: ") + img.message);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

RgbImage decode_jpeg(const std::string& bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  RgbImage out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("jpeg decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out = RgbImage(int(cinfo.output_width), int(cinfo.output_height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + std::size_t(cinfo.output_scanline) * std::size_t(out.width) * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

std::string encode_png(const RgbImage& image) {
  return png_to_memory(image.pixels.data(), image.width, image.height, PNG_FORMAT_RGB);
}

std::string encode_png(const GrayImage& image) {
  return png_to_memory(image.pixels.data(), image.width, image.height, PNG_FORMAT_GRAY);
}

RgbImage decode_image(const std::string& bytes) {
  if (bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0)
    return decode_png(bytes);
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xff &&
      static_cast<unsigned char>(bytes[1]) == 0xd8)
    return decode_jpeg(bytes);
  throw DataError("unrecognized image encoding");
}

RgbImage read_image(const std::filesystem::path& path) {
  try {
    return decode_image(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const RgbImage& image) { write_file(path, encode_png(image)); }
void write_png(const std::filesystem::path& path, const GrayImage& image) { write_file(path, encode_png(image)); }

namespace {

// Half-pixel-centre bilinear sampling with edge clamping.
template <typename Sample>
void bilinear(int src_w, int src_h, int dst_w, int dst_h, Sample&& sample) {
  const double sx = double(src_w) / double(dst_w);
  const double sy = double(src_h) / double(dst_h);
  for (int y = 0; y < dst_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src_h - 1));
    const int y0 = int(fy);
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < dst_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src_w - 1));
      const int x0 = int(fx);
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double tx = fx - x0;
      sample(x, y, x0, x1, y0, y1, tx, ty);
    }
  }
}

}  // namespace

RgbImage resize_bilinear(const RgbImage& image, int width, int height) {
  if (image.width == width && image.height == height) return image;
  RgbImage out(width, height);
  bilinear(image.width, image.height, width, height,
           [&](int x, int y, int x0, int x1, int y0, int y1, double tx, double ty) {
             for (int c = 0; c < 3; ++c) {
               const double top = image.at(x0, y0, c) * (1 - tx) + image.at(x1, y0, c) * tx;
               const double bottom = image.at(x0, y1, c) * (1 - tx) + image.at(x1, y1, c) * tx;
               out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(top * (1 - ty) + bottom * ty));
             }
           });
  return out;
}

Matrix<float> resize_bilinear(const Matrix<float>& grid, int width, int height) {
  Matrix<float> out(height, width);
  bilinear(int(grid.cols()), int(grid.rows()), width, height,
           [&](int x, int y, int x0, int x1, int y0, int y1, double tx, double ty) {
             const double top = grid(y0, x0) * (1 - tx) + grid(y0, x1) * tx;
             const double bottom = grid(y1, x0) * (1 - tx) + grid(y1, x1) * tx;
             out(y, x) = float(top * (1 - ty) + bottom * ty);
           });
  return out;
}

RgbImage flip_horizontal(const RgbImage& image) {
  RgbImage out(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(image.width - 1 - x, y, c);
  return out;
}

RgbImage crop(const RgbImage& image, int x, int y, int width, int height) {
  if (x < 0 || y < 0 || width <= 0 || height <= 0 || x + width > image.width || y + height > image.height)
    throw ShapeError("crop window outside image");
  RgbImage out(width, height);
  for (int yy = 0; yy < height; ++yy)
    for (int xx = 0; xx < width; ++xx)
      for (int c = 0; c < 3; ++c) out.at(xx, yy, c) = image.at(x + xx, y + yy, c);
  return out;
}

RgbImage center_crop(const RgbImage& image, int size) {
  if (image.width < size || image.height < size) throw ShapeError("center_crop: image smaller than crop");
  return crop(image, (image.width - size) / 2, (image.height - size) / 2, size, size);
}

RgbImage resize_shorter_side(const RgbImage& image, int side) {
  if (image.width <= image.height) {
    const int h = int(std::lround(double(image.height) * side / image.width));
    return resize_bilinear(image, side, h);
  }
  const int w = int(std::lround(double(image.width) * side / image.height));
  return resize_bilinear(image, w, side);
}

RgbImage preprocess_eval(const RgbImage& image, int target) {
  return center_crop(resize_shorter_side(image, target + 16), target);
}

}  // namespace lingedit
