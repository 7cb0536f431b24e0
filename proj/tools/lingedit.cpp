// Command-line entry point: train | eval | manipulate | interpolate | heatmap | synth | serve.

#include <filesystem>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "lingedit/evaluation.hpp"
#include "lingedit/service.hpp"
#include "lingedit/training.hpp"

using namespace lingedit;
namespace fs = std::filesystem;

namespace {

struct TrainArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string mode, dataset, data_root, output, resume;
  long long epochs = 0;
  long long seed = -1;
  bool identity_stub = false;
};

TrainingConfig build_config(const TrainArgs& a) {
  TrainingConfig c = a.config_file.empty() ? TrainingConfig{} : TrainingConfig::from_file(a.config_file);
  if (!a.mode.empty()) c.set("mode", a.mode);
  if (!a.dataset.empty()) c.set("dataset", a.dataset);
  if (!a.data_root.empty()) c.set("data_root", a.data_root);
  if (!a.output.empty()) c.set("output_dir", a.output);
  if (a.epochs > 0) c.epochs = a.epochs;
  if (a.seed >= 0) c.seed = std::uint64_t(a.seed);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw DataError("--set expects key=value, got " + kv);
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.validate();
  return c;
}

int run_train(const TrainArgs& a) {
  const TrainingConfig config = build_config(a);
  const Dataset data = load_corpus(config, Split::train);
  const Vocabulary vocab = Vocabulary::build(data.all_captions());
  fs::create_directories(config.output_dir);
  vocab.save(fs::path(config.output_dir) / "vocab.txt");
  if (a.identity_stub) {
    TrainState s;
    s.model = Model::identity(config, vocab);
    const fs::path path = fs::path(config.output_dir) / "identity.ckpt";
    save_checkpoint(path, s);
    std::cout << "wrote " << path.string() << "\n";
    return 0;
  }
  TrainState state;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume);
    if (state.model.vocab.hash() != vocab.hash()) throw DataError("resume checkpoint was trained on another vocabulary");
    std::cout << "resuming at epoch " << state.epoch << " step " << state.step << "\n";
  } else {
    state = initial_state(config, vocab);
  }
  std::cout << "training " << to_string(config.mode) << " on " << data.size() << " items for " << config.epochs
            << " epochs\n";
  TrainingHooks hooks;
  hooks.on_epoch = [](const TrainState& s, const LossReport& r) {
    std::cout << "epoch " << std::setw(4) << s.epoch << "  step " << std::setw(6) << s.step << std::fixed
              << std::setprecision(4) << "  L_D " << r.d_total << "  L_G " << r.g_total << "  L_R "
              << r.reconstruction << std::defaultfloat << std::endl;
  };
  const TrainState done = run_training(std::move(state), data, hooks);
  std::cout << "finished at epoch " << done.epoch << "; checkpoints in " << config.output_dir << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, split = "test", dataset, data_root, metrics;
  bool entropy = false;
  std::size_t limit = 0;
  std::uint64_t seed = 1;
};

int run_eval(const EvalArgs& a) {
  const Model model = load_model(a.checkpoint);
  TrainingConfig config = model.config;
  if (!a.dataset.empty()) config.dataset = a.dataset;
  if (!a.data_root.empty()) config.data_root = a.data_root;
  Dataset split = load_corpus(config, split_from_string(a.split));
  if (a.limit > 0 && split.size() > a.limit) split.items.resize(a.limit);

  const PixelLosses losses = pixel_losses(model, split);
  nlohmann::json record{{"checkpoint", a.checkpoint},
                        {"model_id", model_id(model)},
                        {"split", a.split},
                        {"items", split.size()},
                        {"l1", losses.l1},
                        {"l2", losses.l2}};
  if (a.entropy) {
    const Dataset train = load_corpus(config, Split::train);
    const LabelClassifier classifier = LabelClassifier::train(train);
    std::mt19937_64 rng(a.seed);
    std::vector<RgbImage> recon, manip;
    for (std::size_t i = 0; i < split.size(); ++i) {
      const RgbImage input = model_ready(model, split.items[i].image);
      recon.push_back(manipulate(model, input, split.items[i].captions.front()).output);
      manip.push_back(manipulate(model, input, sample_mismatch(split, i, rng)).output);
    }
    const EntropyProbe r = label_entropy_probe(classifier, recon, split.class_names);
    const EntropyProbe m = label_entropy_probe(classifier, manip, split.class_names);
    record["classifier_accuracy"] = classifier.accuracy(split);
    record["entropy_reconstructed_nats"] = r.mean_nats;
    record["entropy_reconstructed_bits"] = r.mean_bits;
    record["entropy_manipulated_nats"] = m.mean_nats;
    record["entropy_manipulated_bits"] = m.mean_bits;
  }
  std::cout << (a.metrics.empty() ? metrics_table(record) : write_metrics(a.metrics, record));
  return 0;
}

int run_synth(std::size_t n, std::uint64_t seed, const std::string& output, bool png) {
  const Dataset data = synth_generate(n, seed);
  if (!output.empty()) {
    fs::create_directories(output);
    write_archive(fs::path(output) / "corpus.lgar", dataset_to_archive(data));
    if (png) {
      for (const auto& item : data.items) {
        const std::string stem = item.id.substr(item.id.find('/') + 1);
        fs::create_directories(fs::path(output) / "images");
        fs::create_directories(fs::path(output) / "masks");
        write_png(fs::path(output) / "images" / (stem + ".png"), item.image);
        write_png(fs::path(output) / "masks" / (stem + ".png"), item.mask);
      }
    }
  }
  std::cout << "items " << data.size() << "\nhash " << dataset_hash(data) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-guided image manipulation: training, evaluation, inference and serving"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model (or write an identity stub checkpoint)");
  t->add_option("--config", train.config_file, "key = value config file");
  t->add_option("--set", train.overrides, "Config override key=value (repeatable)");
  t->add_option("--mode", train.mode, "single | multi");
  t->add_option("--epochs", train.epochs, "Number of epochs");
  t->add_option("--dataset", train.dataset, "synth | cub | oxford102");
  t->add_option("--data-root", train.data_root, "Corpus root directory");
  t->add_option("--output", train.output, "Output directory");
  t->add_option("--seed", train.seed, "Random seed");
  t->add_option("--resume", train.resume, "Checkpoint to resume from");
  t->add_flag("--identity-stub", train.identity_stub, "Write a checkpoint whose generator returns its input");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Pixel losses and the optional label-entropy probe");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--split", ev.split, "train | val | test");
  e->add_option("--dataset", ev.dataset, "Override the checkpoint's dataset");
  e->add_option("--data-root", ev.data_root, "Override the corpus root");
  e->add_option("--limit", ev.limit, "Evaluate at most this many items");
  e->add_option("--metrics", ev.metrics, "Write the metrics record (JSON) here");
  e->add_option("--seed", ev.seed, "Seed for mismatch sampling");
  e->add_flag("--entropy", ev.entropy, "Run the label-entropy probe");

  std::string checkpoint, image, text, output, from, to, out_dir, raw_dir;
  int steps = 5;
  std::size_t scale = 0;
  auto* m = app.add_subcommand("manipulate", "Edit one image with a description");
  m->add_option("--checkpoint", checkpoint)->required();
  m->add_option("--image", image)->required();
  m->add_option("--text", text)->required();
  m->add_option("--output", output)->required();

  auto* in = app.add_subcommand("interpolate", "Sweep between two same-length descriptions");
  in->add_option("--checkpoint", checkpoint)->required();
  in->add_option("--image", image)->required();
  in->add_option("--from", from)->required();
  in->add_option("--to", to)->required();
  in->add_option("--steps", steps)->check(CLI::Range(2, 16));
  in->add_option("--output-dir", out_dir)->required();

  auto* h = app.add_subcommand("heatmap", "Per-word attention heatmaps");
  h->add_option("--checkpoint", checkpoint)->required();
  h->add_option("--image", image)->required();
  h->add_option("--text", text)->required();
  h->add_option("--output", output, "Grid image (PNG)")->required();
  h->add_option("--scale", scale, "Attention scale, 0 = deepest");
  h->add_option("--raw-dir", raw_dir, "Also write one grayscale map per word here");

  std::size_t synth_n = 500;
  std::uint64_t synth_seed = 7;
  bool synth_png = false;
  auto* s = app.add_subcommand("synth", "Generate the synthetic shapes corpus");
  s->add_option("--n", synth_n, "Number of items");
  s->add_option("--seed", synth_seed, "Seed");
  s->add_option("--output", output, "Directory for corpus.lgar");
  s->add_flag("--png", synth_png, "Also write images and masks as PNG");

  ServiceConfig service = apply_environment(ServiceConfig{});
  auto* sv = app.add_subcommand("serve", "Run the HTTP inference service");
  sv->add_option("--host", service.host, "Bind address (LINGEDIT_HOST)");
  sv->add_option("--port", service.port, "Port (LINGEDIT_PORT)");
  sv->add_option("--checkpoint", service.checkpoint, "Checkpoint (LINGEDIT_CHECKPOINT)");
  sv->add_option("--vocab", service.vocabulary, "Vocabulary file to verify (LINGEDIT_VOCAB)");
  sv->add_option("--max-payload", service.max_payload, "Maximum request bytes (LINGEDIT_MAX_PAYLOAD)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (*t) return run_train(train);
    if (*e) return run_eval(ev);
    if (*m) {
      const Model model = load_model(checkpoint);
      write_png(output, manipulate(model, read_image(image), text).output);
      std::cout << "wrote " << output << "\n";
      return 0;
    }
    if (*in) {
      const Model model = load_model(checkpoint);
      const auto frames = interpolate_text(model, read_image(image), from, to, steps);
      fs::create_directories(out_dir);
      for (std::size_t k = 0; k < frames.size(); ++k) {
        std::ostringstream name;
        name << "frame_" << std::setw(2) << std::setfill('0') << k << ".png";
        write_png(fs::path(out_dir) / name.str(), frames[k]);
      }
      std::cout << "wrote " << frames.size() << " frames to " << out_dir << "\n";
      return 0;
    }
    if (*h) {
      const Model model = load_model(checkpoint);
      const RgbImage input = model_ready(model, read_image(image));
      const HeatmapSet set = attention_heatmaps(model, input, text, scale);
      write_png(output, heatmap_grid(input, set));
      if (!raw_dir.empty()) {
        fs::create_directories(raw_dir);
        for (std::size_t k = 0; k < set.maps.size(); ++k)
          write_png(fs::path(raw_dir) / (std::to_string(k) + "_" + set.words[k] + ".png"), heatmap_image(set.maps[k]));
      }
      std::cout << "wrote " << output << " (" << set.words.size() << " words)\n";
      return 0;
    }
    if (*s) return run_synth(synth_n, synth_seed, output, synth_png);
    if (*sv) {
      const Service instance(service);
      serve(instance);
      return 0;
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
