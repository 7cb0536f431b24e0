#include "lingedit/generator.hpp"

namespace lingedit {

std::string to_string(GeneratorMode mode) {
  switch (mode) {
    case GeneratorMode::single:
      return "single";
    case GeneratorMode::multi:
      return "multi";
    case GeneratorMode::identity:
      return "identity";
  }
  return "unknown";
}

GeneratorMode generator_mode_from_string(const std::string& name) {
  if (name == "single") return GeneratorMode::single;
  if (name == "multi") return GeneratorMode::multi;
  if (name == "identity") return GeneratorMode::identity;
  throw DataError("unknown generator mode '" + name + "'");
}

std::vector<Index> GeneratorConfig::down_channels() const {
  std::vector<Index> widths;
  Index w = 2 * base_channels;
  widths.push_back(w);
  for (Index k = 1; k <= scales; ++k) {
    w = std::min(2 * w, pyramid_channels);
    widths.push_back(w);
  }
  return widths;
}

}  // namespace lingedit
