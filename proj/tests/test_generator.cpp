#include "doctest.h"
#include "gradcheck.hpp"
#include "lingedit/discriminator.hpp"

using namespace lingedit;
using lingedit::testing::random_matrix;

namespace {

GeneratorConfig tiny_config(GeneratorMode mode) {
  GeneratorConfig c;
  c.mode = mode;
  c.base_channels = 4;
  c.pyramid_channels = 8;
  c.fusion_channels = 4;
  c.residual_channels = 8;
  c.residual_blocks = 2;
  c.word_width = 6;
  return c;
}

Var<double> random_images(Index batch, Index side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix<double> m(3, batch * side * side);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return Var<double>::constant(std::move(m), Shape{batch, 3, side, side});
}

WordBatch<double> random_words(Index batch, Index width, std::mt19937_64& rng) {
  std::vector<Matrix<double>> words;
  for (Index b = 0; b < batch; ++b) words.push_back(random_matrix(width, 2 + b, rng));
  return WordBatch<double>::from_matrices(words);
}

}  // namespace

TEST_CASE("encoder pyramid halves per scale from a quarter of the input side") {
  std::mt19937_64 rng(1);
  const Generator<double> gen(tiny_config(GeneratorMode::multi), rng);
  for (auto [side, expected] : std::vector<std::pair<Index, std::vector<Index>>>{
           {64, {16, 8, 4}}, {128, {32, 16, 8}}, {256, {64, 32, 16}}}) {
    NoGradGuard guard;
    const auto pyramid = gen.encode_image(random_images(1, side, rng), Phase::eval);
    REQUIRE(pyramid.levels.size() == 3);
    for (Index i = 3; i >= 1; --i) {
      CHECK(pyramid.scale(i).shape().height == expected[std::size_t(3 - i)]);
      CHECK(pyramid.scale(i).shape().width == expected[std::size_t(3 - i)]);
    }
    CHECK(pyramid.scale(1).shape().channels == gen.config().scale_channels(1));
  }
  NoGradGuard guard;
  const Var<double> zero = Var<double>::constant(Matrix<double>::Zero(3, 64 * 64), Shape{1, 3, 64, 64});
  for (const auto& level : gen.encode_image(zero, Phase::eval).levels) CHECK(level.value().allFinite());
}

TEST_CASE("unsupported images are rejected") {
  std::mt19937_64 rng(2);
  const Generator<double> gen(tiny_config(GeneratorMode::multi), rng);
  CHECK_THROWS_AS(gen.encode_image(Var<double>::constant(Matrix<double>::Zero(3, 64 * 32), Shape{1, 3, 64, 32}),
                                   Phase::eval),
                  ShapeError);
  CHECK_THROWS_AS(gen.encode_image(Var<double>::constant(Matrix<double>::Zero(3, 96 * 96), Shape{1, 3, 96, 96}),
                                   Phase::eval),
                  ShapeError);
  CHECK_THROWS_AS(gen.encode_image(Var<double>::constant(Matrix<double>::Constant(3, 64 * 64, 2.0), Shape{1, 3, 64, 64}),
                                   Phase::eval),
                  ShapeError);
}

TEST_CASE("generate preserves shape and range in both modes") {
  std::mt19937_64 rng(3);
  for (GeneratorMode mode : {GeneratorMode::single, GeneratorMode::multi}) {
    const Generator<double> gen(tiny_config(mode), rng);
    for (Index side : {64, 128}) {
      NoGradGuard guard;
      const Var<double> image = random_images(2, side, rng);
      const WordBatch<double> words = random_words(2, 6, rng);
      for (Phase phase : {Phase::train, Phase::eval}) {
        const Var<double> out = gen.generate(image, words, phase);
        CHECK(out.shape() == image.shape());
        CHECK(out.value().allFinite());
        CHECK(out.value().maxCoeff() <= 1.0);
        CHECK(out.value().minCoeff() >= -1.0);
      }
    }
  }
  const Generator<double> identity(GeneratorConfig{GeneratorMode::identity}, rng);
  const Var<double> image = random_images(1, 64, rng);
  CHECK(identity.generate(image, random_words(1, 6, rng), Phase::eval).value() == image.value());
}

TEST_CASE("generator inventory has no biases and no normalization on the output layer") {
  std::mt19937_64 rng(4);
  for (GeneratorMode mode : {GeneratorMode::single, GeneratorMode::multi}) {
    const Generator<double> gen(tiny_config(mode), rng);
    bool has_output = false;
    for (const auto& [name, p] : gen.params().entries()) {
      const bool weight = name.ends_with(".w") || name.find(".attn.U") != std::string::npos;
      const bool norm = name.ends_with(".gamma") || name.ends_with(".beta");
      CHECK_MESSAGE((weight || norm), name);
      CHECK(name.find("bias") == std::string::npos);
      CHECK(!name.ends_with(".b"));
      if (name.starts_with("gen.out")) {
        CHECK(name == "gen.out.w");
        has_output = true;
      }
    }
    CHECK(has_output);
    CHECK(!gen.params().contains("gen.out.bn.gamma"));
  }
  // the relocated convolution: multi mode trades one residual conv for an encoder conv
  const Generator<double> multi(tiny_config(GeneratorMode::multi), rng);
  CHECK(multi.params().contains("gen.enc.extra.w"));
  CHECK(!multi.params().contains("gen.res1.conv2.w"));
  CHECK(multi.params().contains("gen.res0.conv2.w"));
  GeneratorConfig plain = tiny_config(GeneratorMode::multi);
  plain.relocate_residual_conv = false;
  const Generator<double> ablation(plain, rng);
  CHECK(!ablation.params().contains("gen.enc.extra.w"));
  CHECK(ablation.params().contains("gen.res1.conv2.w"));
}

TEST_CASE("each fusion step doubles the hidden state side") {
  std::mt19937_64 rng(5);
  const Generator<double> gen(tiny_config(GeneratorMode::multi), rng);
  NoGradGuard guard;
  const Var<double> image = random_images(1, 128, rng);
  const WordBatch<double> words = random_words(1, 6, rng);
  const auto pyramid = gen.encode_image(image, Phase::eval);
  AttentionCapture<double> capture;
  Var<double> h = upsample_nearest2x(word_context(pyramid.scale(1), words, gen.params()["gen.attn.U1"]));
  const Index h0_side = h.shape().height;
  CHECK(h0_side == 2 * pyramid.scale(1).shape().height);
  for (Index k = 1; k <= 2; ++k) {
    h = gen.attn_fusion(h, pyramid.scale(k + 1), words, k + 1, Phase::eval, &capture);
    CHECK(h.shape().height == (h0_side << k));
    CHECK(h.shape().width == (h0_side << k));
  }
  CHECK(capture.grids[2] == std::pair<Index, Index>{32, 32});

  // a single word is a well-defined degenerate case
  const WordBatch<double> one = WordBatch<double>::from_matrices({random_matrix(6, 1, rng)});
  const Var<double> h2 = gen.attn_fusion(upsample_nearest2x(word_context(pyramid.scale(1), one, gen.params()["gen.attn.U1"])),
                                         pyramid.scale(2), one, 2, Phase::eval);
  CHECK(h2.value().allFinite());

  CHECK_THROWS_AS(gen.attn_fusion(h, pyramid.scale(2), words, 2, Phase::eval), ShapeError);
}

TEST_CASE("generator gradients reach the word projections and the words") {
  std::mt19937_64 rng(6);
  const Generator<double> gen(tiny_config(GeneratorMode::multi), rng);
  const Var<double> image = random_images(2, 64, rng);
  Var<double> words = Var<double>::leaf(random_matrix(6, 2 * 3, rng), Shape{2, 6, 1, 3});
  const Matrix<double> probe = random_matrix(3, 2 * 64 * 64, rng, 0.01);
  Var<double> u1 = gen.params()["gen.attn.U1"];
  Var<double> u3 = gen.params()["gen.attn.U3"];
  auto r = lingedit::testing::check_gradients(
      [&] {
        const WordBatch<double> wb{words, {3, 2}, 3};
        return lingedit::testing::project_to_scalar(gen.generate(image, wb, Phase::eval), probe);
      },
      {u1, u3, words});
  CHECK(r.relative_error < 1e-4);
  CHECK(r.analytic_norm > 0);
}

TEST_CASE("discriminator scores stay inside (0, 1) and are finite") {
  std::mt19937_64 rng(7);
  const Discriminator<double> disc(DiscriminatorConfig{4, 4, 2, 6}, rng);
  NoGradGuard guard;
  for (int trial = 0; trial < 1000; ++trial) {
    const Var<double> image = random_images(1, 64, rng);
    const WordBatch<double> words = random_words(1, 6, rng);
    const ScorePair<double> s = disc.score(image, &words, Phase::eval);
    const double u = s.unconditional.item();
    const double c = s.conditional.item();
    if (!(u > 0 && u < 1 && c > 0 && c < 1 && std::isfinite(u) && std::isfinite(c))) {
      FAIL("score out of range at trial " << trial);
    }
  }
}

TEST_CASE("unconditional score ignores the description") {
  std::mt19937_64 rng(8);
  const Discriminator<double> disc(DiscriminatorConfig{4, 4, 2, 6}, rng);
  const Var<double> image = random_images(3, 64, rng);
  for (Phase phase : {Phase::eval, Phase::train}) {
    const ScorePair<double> bare = disc.score(image, nullptr, phase);
    CHECK(!bare.conditional.defined());
    for (int k = 0; k < 5; ++k) {
      const WordBatch<double> words = random_words(3, 6, rng);
      const ScorePair<double> s = disc.score(image, &words, phase);
      CHECK(s.unconditional.value() == bare.unconditional.value());
      CHECK(s.conditional.value().cols() == 3);
    }
  }
  const WordBatch<double> wrong = random_words(3, 5, rng);
  CHECK_THROWS_AS(disc.score(image, &wrong, Phase::eval), ShapeError);
}

TEST_CASE("discriminator has no biases and no normalization on its input layer") {
  std::mt19937_64 rng(9);
  const Discriminator<double> disc(DiscriminatorConfig{4, 4, 2, 6}, rng);
  CHECK(!disc.params().contains("disc.conv1.bn.gamma"));
  CHECK(disc.params().contains("disc.conv2.bn.gamma"));
  for (const auto& [name, p] : disc.params().entries()) {
    CHECK(name.find("bias") == std::string::npos);
    CHECK(!name.ends_with(".b"));
  }
}

TEST_CASE("matching head matches a direct evaluation") {
  std::mt19937_64 rng(10);
  const Index c = 3, n = 4, d = 2, l = 2;
  const Matrix<double> f = random_matrix(c, n, rng);
  const Matrix<double> w = random_matrix(d, l, rng);
  const Matrix<double> key = random_matrix(c, d, rng);
  const Matrix<double> sc = random_matrix(c, d, rng);
  const Matrix<double> imp = random_matrix(1, d, rng);
  const auto got = matching_forward<double>(f, w, key, sc, imp);
  const double root_c = std::sqrt(double(c));
  double importance[2], total_imp = 0;
  for (Index j = 0; j < l; ++j) {
    importance[j] = std::exp(imp(0, 0) * w(0, j) + imp(0, 1) * w(1, j));
    total_imp += importance[j];
  }
  double expected = 0;
  for (Index j = 0; j < l; ++j) {
    double denom = 0;
    std::vector<double> att(4), prob(4);
    for (Index i = 0; i < n; ++i) {
      double a = 0, s = 0;
      for (Index ch = 0; ch < c; ++ch) {
        double k = 0, q = 0;
        for (Index e = 0; e < d; ++e) {
          k += key(ch, e) * w(e, j);
          q += sc(ch, e) * w(e, j);
        }
        a += f(ch, i) * k;
        s += f(ch, i) * q;
      }
      att[std::size_t(i)] = std::exp(a / root_c);
      prob[std::size_t(i)] = 1.0 / (1.0 + std::exp(-s / root_c));
      denom += att[std::size_t(i)];
    }
    double word_score = 0;
    for (Index i = 0; i < n; ++i) word_score += att[std::size_t(i)] / denom * prob[std::size_t(i)];
    expected += importance[j] / total_imp * word_score;
  }
  CHECK(std::abs(got.score - expected) < 1e-12);
}

TEST_CASE("conditional path gradients match finite differences") {
  std::mt19937_64 rng(11);
  const Discriminator<double> disc(DiscriminatorConfig{3, 3, 2, 5}, rng);
  const Var<double> image = random_images(2, 64, rng);
  Var<double> words = Var<double>::leaf(random_matrix(5, 2 * 4, rng), Shape{2, 5, 1, 4});
  Var<double> key = disc.params()["disc.match.key"];
  Var<double> sc = disc.params()["disc.match.score"];
  Var<double> imp = disc.params()["disc.match.importance"];
  Var<double> conv1 = disc.params()["disc.conv1.w"];
  const Matrix<double> probe = random_matrix(1, 2, rng);
  auto r = lingedit::testing::check_gradients(
      [&] {
        const WordBatch<double> wb{words, {4, 2}, 4};
        return lingedit::testing::project_to_scalar(disc.score(image, &wb, Phase::eval).conditional, probe);
      },
      {words, key, sc, imp, conv1});
  CHECK(r.relative_error < 1e-4);
  CHECK(r.analytic_norm > 0);
}
