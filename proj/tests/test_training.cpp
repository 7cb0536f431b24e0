#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "lingedit/hashing.hpp"
#include "lingedit/training.hpp"

using namespace lingedit;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("lingedit_train_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TrainingConfig tiny_training(const std::filesystem::path& out) {
  TrainingConfig c;
  c.mode = GeneratorMode::multi;
  c.base_channels = 4;
  c.pyramid_channels = 8;
  c.fusion_channels = 4;
  c.residual_channels = 8;
  c.residual_blocks = 2;
  c.embedding_width = 8;
  c.hidden_width = 4;
  c.disc_base_channels = 4;
  c.epochs = 2;
  c.batch_size = 4;
  c.checkpoint_every = 1;
  c.seed = 21;
  c.output_dir = out.string();
  return c;
}

std::string params_hash(const ParameterSet<float>& params) {
  Archive a;
  for (const auto& [name, p] : params.entries()) a.arrays[name] = p.value();
  return sha256_hex(encode_archive(a));
}

std::string file_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct Fixture {
  Dataset data = synth_generate(10, 3);
  Vocabulary vocab = Vocabulary::build(data.all_captions());
};

}  // namespace

TEST_CASE("a batch larger than the corpus gives one step per epoch") {
  Fixture f;
  const auto dir = scratch_dir("one_step");
  TrainingConfig c = tiny_training(dir);
  c.epochs = 1;
  c.batch_size = 32;
  Dataset four = f.data;
  four.items.resize(4);
  const TrainState done = run_training(initial_state(c, f.vocab), four);
  CHECK(done.step == 1);
  CHECK(done.epoch == 1);
  const auto log = read_loss_log(dir / "losses.ndjson");
  REQUIRE(log.size() == 1);
  CHECK(log[0].step == 1);
  CHECK(log[0].epoch == 0);
  CHECK(std::filesystem::exists(dir / "checkpoint-1.ckpt"));
  CHECK(std::filesystem::exists(dir / "latest.ckpt"));
}

TEST_CASE("a step updates only the modules it should") {
  Fixture f;
  TrainingConfig c = tiny_training(scratch_dir("isolation"));
  std::vector<std::size_t> idx{0, 1, 2, 3};

  SUBCASE("frozen text encoder") {
    c.freeze_text = true;
    TrainState s = initial_state(c, f.vocab);
    const std::string text0 = params_hash(s.model.text.params());
    const std::string gen0 = params_hash(s.model.generator.params());
    const std::string disc0 = params_hash(s.model.discriminator.params());
    train_step(s, prepare_batch(f.data, idx, s));
    CHECK(params_hash(s.model.text.params()) == text0);
    CHECK(params_hash(s.model.generator.params()) != gen0);
    CHECK(params_hash(s.model.discriminator.params()) != disc0);
  }
  SUBCASE("trainable text encoder") {
    TrainState s = initial_state(c, f.vocab);
    const std::string text0 = params_hash(s.model.text.params());
    train_step(s, prepare_batch(f.data, idx, s));
    CHECK(params_hash(s.model.text.params()) != text0);
  }
  SUBCASE("without the conditional term the matching head does not move") {
    c.gamma1 = 0;
    c.gamma2 = 0;
    TrainState s = initial_state(c, f.vocab);
    const auto& params = s.model.discriminator.params();
    const Matrix<float> key = params.entries().at("disc.match.key").value();
    const Matrix<float> importance = params.entries().at("disc.match.importance").value();
    const Matrix<float> global = params.entries().at("disc.global.w").value();
    train_step(s, prepare_batch(f.data, idx, s));
    CHECK(params.entries().at("disc.match.key").value() == key);
    CHECK(params.entries().at("disc.match.importance").value() == importance);
    CHECK(params.entries().at("disc.global.w").value() != global);
  }
  SUBCASE("the step size follows the schedule") {
    c.epochs = 200;
    c.decay_every = 100;
    CHECK(c.step_size_at(150) == doctest::Approx(1e-4).epsilon(1e-15));
  }
}

TEST_CASE("seeded runs are reproducible") {
  Fixture f;
  const auto a = scratch_dir("repro_a");
  const auto b = scratch_dir("repro_b");
  TrainingConfig ca = tiny_training(a);
  TrainingConfig cb = tiny_training(b);
  ca.epochs = cb.epochs = 1;
  const TrainState sa = run_training(initial_state(ca, f.vocab), f.data);
  const TrainState sb = run_training(initial_state(cb, f.vocab), f.data);
  CHECK(file_text(a / "losses.ndjson") == file_text(b / "losses.ndjson"));
  CHECK(params_hash(sa.model.generator.params()) == params_hash(sb.model.generator.params()));

  TrainingConfig cc = tiny_training(scratch_dir("repro_c"));
  cc.epochs = 1;
  cc.seed = 22;
  run_training(initial_state(cc, f.vocab), f.data);
  CHECK(file_text(a / "losses.ndjson") != file_text(std::filesystem::path(cc.output_dir) / "losses.ndjson"));
}

TEST_CASE("checkpoint round trip") {
  Fixture f;
  const auto dir = scratch_dir("checkpoint");
  TrainState s = initial_state(tiny_training(dir), f.vocab);
  train_step(s, prepare_batch(f.data, {0, 1, 2}, s));
  save_checkpoint(dir / "s.ckpt", s);
  const TrainState r = load_checkpoint(dir / "s.ckpt");
  CHECK(encode_archive(checkpoint_archive(r)) == encode_archive(checkpoint_archive(s)));
  CHECK(r.step == 1);
  CHECK(r.rng == s.rng);
  CHECK(model_id(r.model) == model_id(s.model));

  const Archive a = read_archive(dir / "s.ckpt");
  CHECK(a.manifest["mode"] == "multi");
  CHECK(a.manifest["scales"] == 3);
  CHECK(a.manifest["vocab_hash"] == f.vocab.hash());
  CHECK(a.manifest.contains("channel_plan"));

  const Model m = load_model(dir / "s.ckpt", &f.vocab);
  CHECK(params_hash(m.generator.params()) == params_hash(s.model.generator.params()));
  const Vocabulary other = Vocabulary::build({"an entirely different vocabulary"});
  CHECK_THROWS_AS(load_model(dir / "s.ckpt", &other), DataError);

  std::string bytes = file_text(dir / "s.ckpt");
  std::ofstream(dir / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), DataError);
}

TEST_CASE("resuming from a checkpoint equals an uninterrupted run") {
  Fixture f;
  const auto full_dir = scratch_dir("resume_full");
  const auto part_dir = scratch_dir("resume_part");
  const TrainState full = run_training(initial_state(tiny_training(full_dir), f.vocab), f.data);

  TrainingHooks stop;
  stop.stop_after_epoch = 1;
  const TrainState first = run_training(initial_state(tiny_training(part_dir), f.vocab), f.data, stop);
  CHECK(first.epoch == 1);
  // steps after the checkpoint are discarded on resume
  std::ofstream(part_dir / "losses.ndjson", std::ios::app) << "{\"junk\":1}\n";
  const TrainState resumed = run_training(load_checkpoint(part_dir / "latest.ckpt"), f.data);

  CHECK(resumed.step == full.step);
  // the two runs differ only in their output directory
  const Archive ra = checkpoint_archive(resumed);
  const Archive fa = checkpoint_archive(full);
  CHECK(ra.arrays == fa.arrays);
  CHECK(ra.blobs == fa.blobs);
  CHECK(ra.manifest["optimizers"] == fa.manifest["optimizers"]);
  CHECK(file_text(part_dir / "losses.ndjson") == file_text(full_dir / "losses.ndjson"));
}

TEST_CASE("a numerical failure leaves a postmortem checkpoint") {
  Fixture f;
  const auto dir = scratch_dir("postmortem");
  TrainState s = initial_state(tiny_training(dir), f.vocab);
  s.model.discriminator.params().entries().at("disc.global.w").mutable_value()(0, 0) =
      std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(run_training(std::move(s), f.data), NumericalFailure);
  CHECK(std::filesystem::exists(dir / "postmortem.ckpt"));
  CHECK_NOTHROW(load_checkpoint(dir / "postmortem.ckpt"));
}

TEST_CASE("training rejects a corpus that cannot provide mismatches") {
  Fixture f;
  Dataset one = f.data;
  one.items.resize(1);
  CHECK_THROWS_AS(run_training(initial_state(tiny_training(scratch_dir("single")), f.vocab), one), InsufficientData);
}
