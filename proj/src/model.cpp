#include "lingedit/model.hpp"

#include <sstream>

#include "lingedit/hashing.hpp"

namespace lingedit {

Model Model::create(const TrainingConfig& config, Vocabulary vocab, std::mt19937_64& rng) {
  config.validate();
  Model m;
  m.config = config;
  m.vocab = std::move(vocab);
  m.text = TextEncoder<float>(config.text_config(Index(m.vocab.size())), rng);
  m.generator = Generator<float>(config.generator_config(), rng);
  m.discriminator = Discriminator<float>(config.discriminator_config(), rng);
  if (!config.word_vectors.empty()) {
    m.text.load_pretrained(m.vocab, read_word_vectors(config.word_vectors, std::size_t(config.embedding_width)));
  }
  return m;
}

Model Model::identity(const TrainingConfig& config, Vocabulary vocab) {
  TrainingConfig c = config;
  c.mode = GeneratorMode::identity;
  std::mt19937_64 rng(c.seed);
  return create(c, std::move(vocab), rng);
}

WordBatch<float> Model::encode(const TokenSequence& tokens) const {
  NoGradGuard guard;
  return text.encode(tokens);
}

namespace {

template <typename Scalar>
void put_params(Archive& a, const std::string& prefix, const ParameterSet<Scalar>& params) {
  for (const auto& [name, p] : params.entries()) a.arrays[prefix + "/" + name] = p.value();
  for (const auto& [name, s] : params.all_stats()) {
    a.arrays[prefix + ".stats/" + name + "/mean"] = s.mean;
    a.arrays[prefix + ".stats/" + name + "/var"] = s.var;
  }
}

void get_params(const Archive& a, const std::string& prefix, ParameterSet<float>& params) {
  for (auto& [name, p] : params.entries()) {
    const Matrix<float>& stored = a.array(prefix + "/" + name);
    if (stored.rows() != p.value().rows() || stored.cols() != p.value().cols())
      throw DataError("checkpoint parameter " + name + " has the wrong shape");
    p.mutable_value() = stored;
  }
  for (auto& [name, s] : params.all_stats()) {
    const Matrix<float>& mean = a.array(prefix + ".stats/" + name + "/mean");
    const Matrix<float>& var = a.array(prefix + ".stats/" + name + "/var");
    if (mean.size() != s.mean.size() || var.size() != s.var.size())
      throw DataError("checkpoint statistics " + name + " have the wrong shape");
    s.mean = mean.col(0);
    s.var = var.col(0);
  }
  const std::string lead = prefix + "/";
  for (const auto& [key, value] : a.arrays) {
    if (key.starts_with(lead) && !params.contains(key.substr(lead.size())))
      throw DataError("checkpoint has unexpected parameter " + key);
  }
}

void put_adam(Archive& a, const std::string& prefix, Adam<float> opt, nlohmann::json& manifest) {
  for (const auto& [name, m] : opt.first_moments()) a.arrays[prefix + ".m/" + name] = m;
  for (const auto& [name, v] : opt.second_moments()) a.arrays[prefix + ".v/" + name] = v;
  manifest["optimizers"][prefix] = {{"steps", opt.steps()}, {"step_size", opt.step_size()}};
}

void get_adam(const Archive& a, const std::string& prefix, Adam<float>& opt) {
  const auto& info = a.manifest.at("optimizers").at(prefix);
  opt.set_steps(info.at("steps").get<long long>());
  opt.set_step_size(info.at("step_size").get<double>());
  for (const auto& [key, value] : a.arrays) {
    if (key.starts_with(prefix + ".m/")) opt.first_moments()[key.substr(prefix.size() + 3)] = value;
    if (key.starts_with(prefix + ".v/")) opt.second_moments()[key.substr(prefix.size() + 3)] = value;
  }
}

std::string vocab_text(const Vocabulary& vocab) {
  std::string out;
  for (const auto& t : vocab.tokens()) out += t + "\n";
  return out;
}

Vocabulary vocab_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> tokens;
  while (std::getline(in, line)) tokens.push_back(line);
  if (tokens.size() < 2 || tokens[0] != Vocabulary::kPadToken || tokens[1] != Vocabulary::kUnknownToken)
    throw DataError("checkpoint vocabulary is malformed");
  Vocabulary v;
  for (std::size_t k = 2; k < tokens.size(); ++k) {
    if (v.add(tokens[k]) != int(k)) throw DataError("checkpoint vocabulary has duplicate tokens");
  }
  return v;
}

Archive model_archive(const Model& model) {
  Archive a;
  a.manifest["kind"] = "checkpoint";
  a.manifest["format"] = 1;
  a.manifest["mode"] = to_string(model.config.mode);
  a.manifest["scales"] = model.config.scales;
  a.manifest["image_size"] = model.config.image_size;
  if (model.config.mode != GeneratorMode::identity) a.manifest["channel_plan"] = model.config.generator_config().down_channels();
  a.manifest["vocab_hash"] = model.vocab.hash();
  a.manifest["config"] = model.config.to_text();
  put_params(a, "text", model.text.params());
  put_params(a, "gen", model.generator.params());
  put_params(a, "disc", model.discriminator.params());
  a.blobs["vocab"] = vocab_text(model.vocab);
  return a;
}

Model model_from_archive(const Archive& a) {
  if (a.manifest.value("kind", "") != "checkpoint") throw DataError("archive is not a checkpoint");
  const TrainingConfig config = TrainingConfig::from_text(a.manifest.at("config").get<std::string>());
  Vocabulary vocab = vocab_from_text(a.blob("vocab"));
  if (vocab.hash() != a.manifest.at("vocab_hash").get<std::string>())
    throw DataError("checkpoint vocabulary does not match its recorded hash");
  std::mt19937_64 rng(config.seed);
  TrainingConfig structural = config;
  structural.word_vectors.clear();  // values come from the archive
  Model m = Model::create(structural, std::move(vocab), rng);
  m.config = config;
  get_params(a, "text", m.text.params());
  get_params(a, "gen", m.generator.params());
  get_params(a, "disc", m.discriminator.params());
  return m;
}

}  // namespace

std::string model_id(const Model& model) {
  const Archive a = model_archive(model);
  return sha256_hex(encode_archive(a)).substr(0, 16);
}

Archive checkpoint_archive(const TrainState& state) {
  Archive a = model_archive(state.model);
  a.manifest["model_id"] = sha256_hex(encode_archive(a)).substr(0, 16);
  a.manifest["epoch"] = state.epoch;
  a.manifest["step"] = state.step;
  put_adam(a, "adam.gen", state.opt_generator, a.manifest);
  put_adam(a, "adam.disc", state.opt_discriminator, a.manifest);
  put_adam(a, "adam.text", state.opt_text, a.manifest);
  std::ostringstream rng;
  rng << state.rng;
  a.blobs["rng"] = rng.str();
  return a;
}

TrainState state_from_archive(const Archive& a) {
  TrainState s;
  try {
    s.model = model_from_archive(a);
    s.epoch = a.manifest.at("epoch").get<long long>();
    s.step = a.manifest.at("step").get<long long>();
    const AdamSettings settings{s.model.config.step_size, s.model.config.beta1, s.model.config.beta2, 1e-8};
    s.opt_generator = Adam<float>(settings);
    s.opt_discriminator = Adam<float>(settings);
    s.opt_text = Adam<float>(settings);
    get_adam(a, "adam.gen", s.opt_generator);
    get_adam(a, "adam.disc", s.opt_discriminator);
    get_adam(a, "adam.text", s.opt_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint manifest: ") + e.what());
  }
  std::istringstream rng(a.blob("rng"));
  rng >> s.rng;
  if (!rng) throw DataError("checkpoint random state is malformed");
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  write_archive(path, checkpoint_archive(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  try {
    return state_from_archive(read_archive(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Model load_model(const std::filesystem::path& path, const Vocabulary* expected_vocab) {
  const Archive a = read_archive(path);
  Model m;
  try {
    m = model_from_archive(a);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": checkpoint manifest: " + e.what());
  }
  if (expected_vocab && expected_vocab->hash() != m.vocab.hash()) {
    throw DataError("vocabulary hash " + expected_vocab->hash().substr(0, 12) + " does not match checkpoint " +
                    m.vocab.hash().substr(0, 12));
  }
  return m;
}

Var<float> model_input(const Model& model, const RgbImage& image) {
  const int side = int(model.image_size());
  if (image.width == side && image.height == side) return image_batch<float>({&image});
  const RgbImage prepared = preprocess_eval(image, side);
  return image_batch<float>({&prepared});
}

Manipulation manipulate(const Model& model, const RgbImage& image, const std::string& description) {
  NoGradGuard guard;
  Manipulation out;
  const TokenSequence tokens = model.tokenize(description);
  out.words = tokens.words;
  const Var<float> input = model_input(model, image);
  const WordBatch<float> words = model.text.encode(tokens);
  const Var<float> result = model.generator.generate(input, words, Phase::eval, &out.attention);
  out.output = batch_image(result, 0);
  return out;
}

std::vector<RgbImage> manipulate_batch(const Model& model, const std::vector<const RgbImage*>& images,
                                       const std::vector<std::string>& descriptions) {
  if (images.size() != descriptions.size()) throw ShapeError("manipulate_batch: images and descriptions differ in count");
  NoGradGuard guard;
  std::vector<TokenSequence> seqs;
  for (const auto& d : descriptions) seqs.push_back(model.tokenize(d));
  const WordBatch<float> words = model.text.encode(TokenBatch::from(seqs));
  const Var<float> result = model.generator.generate(image_batch<float>(images), words, Phase::eval);
  std::vector<RgbImage> out;
  for (std::size_t b = 0; b < images.size(); ++b) out.push_back(batch_image(result, Index(b)));
  return out;
}

}  // namespace lingedit
