#include "lingedit/training.hpp"

#include <fstream>
#include <iostream>
#include <numeric>

namespace lingedit {

namespace {

WordBatch<float> slice_words(const WordBatch<float>& words, Index first, Index count) {
  std::vector<Index> lengths(words.lengths.begin() + first, words.lengths.begin() + first + count);
  return WordBatch<float>{slice_batch(words.features, first, count), std::move(lengths), words.max_length};
}

void clip_gradients(std::vector<ParameterSet<float>*> sets, double limit, const char* what) {
  if (limit <= 0) return;
  double sq = 0;
  for (auto* s : sets) sq += std::pow(gradient_norm(*s), 2.0);
  const double norm = std::sqrt(sq);
  if (norm <= limit) return;
  const float scale = float(limit / norm);
  for (auto* s : sets)
    for (auto& [name, p] : s->entries())
      if (p.has_grad()) p.node()->grad *= scale;
  std::cerr << "clipped " << what << " gradient norm " << norm << " to " << limit << "\n";
}

void add_into(LossReport& sum, const LossReport& r) {
  sum.d_total += r.d_total;
  sum.d_real_uncond += r.d_real_uncond;
  sum.d_fake_uncond += r.d_fake_uncond;
  sum.d_real_cond += r.d_real_cond;
  sum.d_fake_cond += r.d_fake_cond;
  sum.g_total += r.g_total;
  sum.g_fake_uncond += r.g_fake_uncond;
  sum.g_fake_cond += r.g_fake_cond;
  sum.reconstruction += r.reconstruction;
}

LossReport scaled(LossReport r, double k) {
  r.d_total *= k;
  r.d_real_uncond *= k;
  r.d_fake_uncond *= k;
  r.d_real_cond *= k;
  r.d_fake_cond *= k;
  r.g_total *= k;
  r.g_fake_uncond *= k;
  r.g_fake_cond *= k;
  r.reconstruction *= k;
  return r;
}

// Keeps the first `steps` records of an existing log so a resumed run
// continues it exactly.
void truncate_log(const std::filesystem::path& path, long long steps) {
  if (steps == 0 || !std::filesystem::exists(path)) {
    std::ofstream(path, std::ios::trunc);
    return;
  }
  std::ifstream in(path);
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line) && (long long)kept.size() < steps) kept.push_back(line);
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

}  // namespace

Dataset load_corpus(const TrainingConfig& config, Split split) {
  if (config.dataset == "synth") {
    if (split == Split::train) return synth_generate(std::size_t(config.synth_items), config.synth_seed);
    return synth_generate(std::max<std::size_t>(100, std::size_t(config.synth_items) / 5), config.synth_seed + 1);
  }
  return load_split(config.data_root, corpus_kind_from_string(config.dataset), split);
}

TrainState initial_state(const TrainingConfig& config, const Vocabulary& vocab) {
  config.validate();
  TrainState s;
  s.rng.seed(config.seed);
  s.model = Model::create(config, vocab, s.rng);
  const AdamSettings settings{config.step_size, config.beta1, config.beta2, 1e-8};
  s.opt_generator = Adam<float>(settings);
  s.opt_discriminator = Adam<float>(settings);
  s.opt_text = Adam<float>(settings);
  return s;
}

TrainBatch prepare_batch(const Dataset& data, const std::vector<std::size_t>& indices, TrainState& state) {
  const TrainingConfig& cfg = state.model.config;
  TrainBatch batch;
  for (std::size_t idx : indices) {
    const CaptionedImage& item = data.items.at(idx);
    batch.images.push_back(augment(item.image, int(cfg.image_size), state.rng, cfg.flip, cfg.crop));
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, item.captions.size() - 1)(state.rng);
    batch.positive.push_back(item.captions[pick]);
    batch.mismatch.push_back(sample_mismatch(data, idx, state.rng));
  }
  return batch;
}

LossReport train_step(TrainState& state, const TrainBatch& batch) {
  Model& m = state.model;
  const TrainingConfig& cfg = m.config;
  const Index b = Index(batch.images.size());
  require(b > 0 && batch.positive.size() == batch.images.size() && batch.mismatch.size() == batch.images.size(),
          "train_step: inconsistent batch");
  const LossWeights weights = cfg.loss_weights();

  std::vector<TokenSequence> seqs;
  for (const auto& t : batch.positive) seqs.push_back(m.tokenize(t));
  for (const auto& t : batch.mismatch) seqs.push_back(m.tokenize(t));
  const TokenBatch tokens = TokenBatch::from(seqs);

  m.text.params().zero_grad();
  m.generator.params().zero_grad();
  m.discriminator.params().zero_grad();

  WordBatch<float> words;
  if (cfg.freeze_text) {
    NoGradGuard guard;
    words = m.text.encode(tokens);
  } else {
    words = m.text.encode(tokens);
  }

  // (I, T) and (I, T^) pass through the generator as one batch.
  std::vector<const RgbImage*> pointers;
  for (const auto& img : batch.images) pointers.push_back(&img);
  const Var<float> real = image_batch<float>(pointers);
  pointers.insert(pointers.end(), pointers.begin(), pointers.end());
  const Var<float> generated = m.generator.generate(image_batch<float>(pointers), words, Phase::train);
  const Var<float> reconstructed = slice_batch(generated, 0, b);
  const Var<float> fake = slice_batch(generated, b, b);
  const WordBatch<float> positive_words = slice_words(words, 0, b).detach();
  const WordBatch<float> mismatch_words = slice_words(words, b, b).detach();

  LossReport report;
  report.epoch = state.epoch;

  {
    const ScorePair<float> real_scores = m.discriminator.score(real, &positive_words, Phase::train);
    const ScorePair<float> fake_scores = m.discriminator.score(fake.detach(), &mismatch_words, Phase::train);
    const Var<float> d_loss = discriminator_loss(real_scores, fake_scores, weights, &report);
    backward(d_loss);
    clip_gradients({&m.discriminator.params()}, cfg.clip_norm, "discriminator");
    state.opt_discriminator.step(m.discriminator.params());
    m.discriminator.params().zero_grad();
  }

  {
    const ScorePair<float> fake_scores = m.discriminator.score(fake, &mismatch_words, Phase::train);
    const Var<float> g_loss =
        generator_loss(fake_scores, reconstruction_loss(real, reconstructed), weights, &report);
    backward(g_loss);
    std::vector<ParameterSet<float>*> sets{&m.generator.params()};
    if (!cfg.freeze_text) sets.push_back(&m.text.params());
    clip_gradients(sets, cfg.clip_norm, "generator");
    state.opt_generator.step(m.generator.params());
    if (!cfg.freeze_text) state.opt_text.step(m.text.params());
  }

  m.text.params().zero_grad();
  m.generator.params().zero_grad();
  m.discriminator.params().zero_grad();
  ++state.step;
  report.step = state.step;
  return report;
}

TrainState run_training(TrainState state, const Dataset& data, const TrainingHooks& hooks) {
  const TrainingConfig& cfg = state.model.config;
  cfg.validate();
  if (data.size() < 2) throw InsufficientData("training needs at least two items");
  const std::filesystem::path out_dir = cfg.output_dir;
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream snapshot(out_dir / "config.txt", std::ios::trunc);
    snapshot << cfg.to_text();
  }
  const std::filesystem::path log_path = out_dir / "losses.ndjson";
  truncate_log(log_path, state.step);
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw DataError("cannot write " + log_path.string());

  const std::size_t batch_size = std::size_t(cfg.batch_size);
  std::vector<std::size_t> order(data.size());
  while (state.epoch < cfg.epochs) {
    const double lr = cfg.step_size_at(Index(state.epoch));
    state.opt_generator.set_step_size(lr);
    state.opt_discriminator.set_step_size(lr);
    state.opt_text.set_step_size(lr);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::shuffle(order.begin(), order.end(), state.rng);

    LossReport sum;
    long long steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::vector<std::size_t> indices(order.begin() + long(start),
                                             order.begin() + long(std::min(order.size(), start + batch_size)));
      const TrainBatch batch = prepare_batch(data, indices, state);
      LossReport r;
      try {
        r = train_step(state, batch);
      } catch (const NumericalFailure&) {
        save_checkpoint(out_dir / "postmortem.ckpt", state);
        throw;
      }
      log << r.to_json_line() << '\n';
      log.flush();
      add_into(sum, r);
      sum.gamma1 = r.gamma1;
      sum.gamma2 = r.gamma2;
      ++steps;
    }
    ++state.epoch;
    LossReport mean = scaled(sum, 1.0 / double(std::max<long long>(steps, 1)));
    mean.epoch = state.epoch;
    mean.step = state.step;
    if (hooks.on_epoch) hooks.on_epoch(state, mean);
    if (state.epoch % cfg.checkpoint_every == 0 || state.epoch == cfg.epochs) {
      save_checkpoint(out_dir / ("checkpoint-" + std::to_string(state.epoch) + ".ckpt"), state);
      save_checkpoint(out_dir / "latest.ckpt", state);
    }
    if (hooks.stop_after_epoch && state.epoch >= *hooks.stop_after_epoch) break;
  }
  return state;
}

std::vector<LossReport> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<LossReport> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(LossReport::from_json_line(line));
  return out;
}

}  // namespace lingedit
