#include "lingedit/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lingedit/errors.hpp"

namespace lingedit {

namespace {

constexpr char kMagic[8] = {'L', 'G', 'E', 'D', 'A', 'R', 'C', '1'};
constexpr std::uint8_t kFloatArray = 0;
constexpr std::uint8_t kBlob = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + std::size_t(k)])) << (8 * k);
    pos_ += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::string take(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, std::size_t(n));
    pos_ += std::size_t(n);
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw DataError("archive truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Matrix<float>& Archive::array(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw DataError("archive has no array " + name);
  return it->second;
}

const std::string& Archive::blob(const std::string& name) const {
  auto it = blobs.find(name);
  if (it == blobs.end()) throw DataError("archive has no blob " + name);
  return it->second;
}

std::string encode_archive(const Archive& archive) {
  std::string out(kMagic, sizeof kMagic);
  const std::string manifest = archive.manifest.dump();
  put_u64(out, manifest.size());
  out += manifest;
  put_u64(out, archive.arrays.size() + archive.blobs.size());
  for (const auto& [name, m] : archive.arrays) {
    put_u64(out, name.size());
    out += name;
    out.push_back(static_cast<char>(kFloatArray));
    put_u64(out, std::uint64_t(m.rows()));
    put_u64(out, std::uint64_t(m.cols()));
    for (Index k = 0; k < m.size(); ++k) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(m.data()[k]);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  for (const auto& [name, bytes] : archive.blobs) {
    put_u64(out, name.size());
    out += name;
    out.push_back(static_cast<char>(kBlob));
    put_u64(out, bytes.size());
    out += bytes;
  }
  return out;
}

Archive decode_archive(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw DataError("not an archive (bad magic)");
  Reader in(bytes);
  in.take(sizeof kMagic);
  Archive a;
  try {
    a.manifest = nlohmann::json::parse(in.take(in.u64()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("archive manifest: ") + e.what());
  }
  const std::uint64_t entries = in.u64();
  for (std::uint64_t e = 0; e < entries; ++e) {
    const std::string name = in.take(in.u64());
    const std::uint8_t kind = in.u8();
    if (kind == kFloatArray) {
      const std::uint64_t rows = in.u64();
      const std::uint64_t cols = in.u64();
      if (rows != 0 && cols > (std::uint64_t(1) << 40) / rows) throw DataError("archive array too large: " + name);
      const std::string raw = in.take(rows * cols * 4);
      Matrix<float> m(static_cast<Index>(rows), static_cast<Index>(cols));
      for (Index k = 0; k < m.size(); ++k) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
          bits |= std::uint32_t(static_cast<unsigned char>(raw[std::size_t(k) * 4 + std::size_t(b)])) << (8 * b);
        m.data()[k] = std::bit_cast<float>(bits);
      }
      a.arrays.emplace(name, std::move(m));
    } else if (kind == kBlob) {
      a.blobs.emplace(name, in.take(in.u64()));
    } else {
      throw DataError("archive entry " + name + " has unknown kind");
    }
  }
  if (!in.done()) throw DataError("archive has trailing bytes");
  return a;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  const std::string bytes = encode_archive(archive);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw DataError("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  try {
    return decode_archive(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace lingedit
