#include "lingedit/attention.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace lingedit {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(in[offset + std::size_t(i)])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_attention_map(const AttentionMap& map) {
  const Index n = map.weights.rows();
  const Index l = map.weights.cols();
  if (n != map.height * map.width) throw ShapeError("attention map: N must equal H*W");
  std::string out;
  out.reserve(16 + std::size_t(n * l) * 4);
  put_u32(out, std::uint32_t(n));
  put_u32(out, std::uint32_t(l));
  put_u32(out, std::uint32_t(map.height));
  put_u32(out, std::uint32_t(map.width));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < l; ++j) put_u32(out, std::bit_cast<std::uint32_t>(map.weights(i, j)));
  }
  return out;
}

AttentionMap decode_attention_map(const std::string& bytes) {
  if (bytes.size() < 16) throw DataError("attention map: truncated header");
  AttentionMap map;
  const Index n = get_u32(bytes, 0);
  const Index l = get_u32(bytes, 4);
  map.height = get_u32(bytes, 8);
  map.width = get_u32(bytes, 12);
  if (n != map.height * map.width) throw DataError("attention map: N != H*W");
  if (bytes.size() != 16 + std::size_t(n * l) * 4) throw DataError("attention map: payload size mismatch");
  map.weights.resize(n, l);
  std::size_t offset = 16;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < l; ++j) {
      map.weights(i, j) = std::bit_cast<float>(get_u32(bytes, offset));
      offset += 4;
    }
  }
  return map;
}

void write_attention_map(const std::filesystem::path& path, const AttentionMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::string bytes = encode_attention_map(map);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace lingedit
