#pragma once

// Single-file container: a JSON manifest followed by named float arrays and
// named byte blobs. Used for checkpoints and for the synthetic corpus.

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "lingedit/tensor.hpp"

namespace lingedit {

struct Archive {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, Matrix<float>> arrays;
  std::map<std::string, std::string> blobs;

  const Matrix<float>& array(const std::string& name) const;
  const std::string& blob(const std::string& name) const;
};

std::string encode_archive(const Archive& archive);
Archive decode_archive(const std::string& bytes);

/// Writes to a sibling temp file and renames it into place, so an existing
/// archive at `path` survives a failed write intact.
void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace lingedit
