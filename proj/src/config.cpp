#include "lingedit/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace lingedit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw DataError("config: bad value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw DataError("config: bad boolean for " + key + ": '" + value + "'");
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(TrainingConfig&, const std::string&)> set;
  std::function<std::string(const TrainingConfig&)> get;
};

template <typename T>
Field field(T TrainingConfig::*member) {
  Field f;
  f.set = [member](TrainingConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<T, bool>) {
      c.*member = parse_bool("", v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      c.*member = v;
    } else {
      c.*member = parse_number<T>("", v);
    }
  };
  f.get = [member](const TrainingConfig& c) -> std::string {
    if constexpr (std::is_same_v<T, bool>) {
      return c.*member ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
      return c.*member;
    } else if constexpr (std::is_same_v<T, double>) {
      return format_double(c.*member);
    } else {
      return std::to_string(c.*member);
    }
  };
  return f;
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["dataset"] = field(&TrainingConfig::dataset);
    t["data_root"] = field(&TrainingConfig::data_root);
    t["image_size"] = field(&TrainingConfig::image_size);
    t["max_caption_length"] = field(&TrainingConfig::max_caption_length);
    t["synth_items"] = field(&TrainingConfig::synth_items);
    t["synth_seed"] = field(&TrainingConfig::synth_seed);
    t["mode"] = Field{[](TrainingConfig& c, const std::string& v) { c.mode = generator_mode_from_string(v); },
                      [](const TrainingConfig& c) { return to_string(c.mode); }};
    t["scales"] = field(&TrainingConfig::scales);
    t["base_channels"] = field(&TrainingConfig::base_channels);
    t["pyramid_channels"] = field(&TrainingConfig::pyramid_channels);
    t["fusion_channels"] = field(&TrainingConfig::fusion_channels);
    t["residual_channels"] = field(&TrainingConfig::residual_channels);
    t["residual_blocks"] = field(&TrainingConfig::residual_blocks);
    t["relocate_residual_conv"] = field(&TrainingConfig::relocate_residual_conv);
    t["embedding_width"] = field(&TrainingConfig::embedding_width);
    t["hidden_width"] = field(&TrainingConfig::hidden_width);
    t["embedding_init"] = field(&TrainingConfig::embedding_init);
    t["disc_base_channels"] = field(&TrainingConfig::disc_base_channels);
    t["disc_layers"] = field(&TrainingConfig::disc_layers);
    t["disc_local_layer"] = field(&TrainingConfig::disc_local_layer);
    t["word_vectors"] = field(&TrainingConfig::word_vectors);
    t["epochs"] = field(&TrainingConfig::epochs);
    t["batch_size"] = field(&TrainingConfig::batch_size);
    t["step_size"] = field(&TrainingConfig::step_size);
    t["beta1"] = field(&TrainingConfig::beta1);
    t["beta2"] = field(&TrainingConfig::beta2);
    t["decay_every"] = field(&TrainingConfig::decay_every);
    t["decay_factor"] = field(&TrainingConfig::decay_factor);
    t["gamma1"] = field(&TrainingConfig::gamma1);
    t["gamma2"] = field(&TrainingConfig::gamma2);
    t["clip_norm"] = field(&TrainingConfig::clip_norm);
    t["freeze_text"] = field(&TrainingConfig::freeze_text);
    t["flip"] = field(&TrainingConfig::flip);
    t["crop"] = field(&TrainingConfig::crop);
    t["seed"] = field(&TrainingConfig::seed);
    t["output_dir"] = field(&TrainingConfig::output_dir);
    t["checkpoint_every"] = field(&TrainingConfig::checkpoint_every);
    return t;
  }();
  return table;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw DataError("config line " + std::to_string(number) + ": empty key");
    if (!out.emplace(key, trim(line.substr(eq + 1))).second) throw DataError("config: duplicate key " + key);
  }
  return out;
}

void TrainingConfig::set(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw DataError("config: unknown key " + key);
  try {
    it->second.set(*this, value);
  } catch (const DataError&) {
    throw DataError("config: bad value for " + key + ": '" + value + "'");
  }
}

std::string TrainingConfig::to_text() const {
  std::string out;
  for (const auto& [key, f] : fields()) out += key + " = " + f.get(*this) + "\n";
  return out;
}

TrainingConfig TrainingConfig::from_text(const std::string& text) {
  TrainingConfig c;
  for (const auto& [key, value] : parse_key_values(text)) c.set(key, value);
  return c;
}

TrainingConfig TrainingConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

LossWeights TrainingConfig::loss_weights() const {
  LossWeights w = LossWeights::for_mode(mode);
  w.gamma1 = gamma1;
  if (gamma2 >= 0) w.gamma2 = gamma2;
  return w;
}

GeneratorConfig TrainingConfig::generator_config() const {
  GeneratorConfig g;
  g.mode = mode;
  g.scales = scales;
  g.base_channels = base_channels;
  g.pyramid_channels = pyramid_channels;
  g.fusion_channels = fusion_channels;
  g.residual_channels = residual_channels;
  g.residual_blocks = residual_blocks;
  g.relocate_residual_conv = relocate_residual_conv;
  g.word_width = 2 * hidden_width;
  return g;
}

DiscriminatorConfig TrainingConfig::discriminator_config() const {
  return DiscriminatorConfig{disc_base_channels, disc_layers, disc_local_layer, 2 * hidden_width};
}

TextEncoderConfig TrainingConfig::text_config(Index vocab_size) const {
  return TextEncoderConfig{vocab_size, embedding_width, hidden_width, embedding_init};
}

double TrainingConfig::step_size_at(Index epoch) const {
  return step_size * std::pow(decay_factor, double(epoch / decay_every));
}

void TrainingConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0)) throw DataError(std::string("config: ") + name + " must be positive");
  };
  if (dataset != "synth" && dataset != "cub" && dataset != "oxford102")
    throw DataError("config: dataset must be synth, cub or oxford102");
  if (image_size != 64 && image_size != 128 && image_size != 256)
    throw DataError("config: image_size must be 64, 128 or 256");
  positive("max_caption_length", double(max_caption_length));
  positive("scales", double(scales));
  positive("base_channels", double(base_channels));
  positive("pyramid_channels", double(pyramid_channels));
  positive("fusion_channels", double(fusion_channels));
  positive("residual_channels", double(residual_channels));
  positive("embedding_width", double(embedding_width));
  positive("hidden_width", double(hidden_width));
  positive("embedding_init", embedding_init);
  positive("disc_base_channels", double(disc_base_channels));
  positive("epochs", double(epochs));
  positive("batch_size", double(batch_size));
  positive("step_size", step_size);
  positive("decay_every", double(decay_every));
  positive("decay_factor", decay_factor);
  positive("checkpoint_every", double(checkpoint_every));
  if (residual_blocks < 1) throw DataError("config: residual_blocks must be at least 1");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw DataError("config: betas must lie in [0, 1)");
  if (gamma1 < 0) throw DataError("config: gamma1 must be non-negative");
  if (clip_norm < 0) throw DataError("config: clip_norm must be non-negative");
  if (disc_local_layer < 1 || disc_local_layer > disc_layers)
    throw DataError("config: disc_local_layer must lie in [1, disc_layers]");
  if ((image_size >> (scales + 1)) < 1) throw DataError("config: too many scales for the image size");
  if ((image_size >> disc_layers) < 1) throw DataError("config: too many discriminator layers for the image size");
  // Runs shorter than one decay interval never decay; longer runs must end on
  // an interval boundary.
  if (epochs >= decay_every && epochs % decay_every != 0)
    throw DataError("config: epochs must be a multiple of decay_every");
  if (dataset == "synth" && synth_items < 2) throw DataError("config: synth_items must be at least 2");
  if (dataset != "synth" && data_root.empty()) throw DataError("config: data_root is required for " + dataset);
}

}  // namespace lingedit
