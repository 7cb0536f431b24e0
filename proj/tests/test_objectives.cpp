#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "lingedit/objectives.hpp"

using namespace lingedit;
using lingedit::testing::random_matrix;

namespace {

ScorePair<double> constant_scores(Index batch, double value) {
  return ScorePair<double>{Var<double>::constant(Matrix<double>::Constant(1, batch, value)),
                           Var<double>::constant(Matrix<double>::Constant(1, batch, value))};
}

Matrix<double> random_scores(Index batch, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix<double> s(1, batch);
  for (Index b = 0; b < batch; ++b) s(0, b) = u(rng);
  // occasionally saturate so the clamp is exercised
  if (batch > 2) {
    s(0, 0) = 0.0;
    s(0, 1) = 1.0;
  }
  return s;
}

// The score itself is clamped, then complemented when needed.
double clamped(double v) { return std::clamp(v, kScoreEpsilon, 1.0 - kScoreEpsilon); }
double clamp_log(double v) { return std::log(clamped(v)); }
double clamp_log_complement(double v) { return std::log(1.0 - clamped(v)); }

double loop_mean_log(const Matrix<double>& s, bool complement) {
  double total = 0;
  for (Index b = 0; b < s.cols(); ++b) total += complement ? clamp_log_complement(s(0, b)) : clamp_log(s(0, b));
  return total / double(s.cols());
}

}  // namespace

TEST_CASE("objective closed forms at score 0.5") {
  const ScorePair<double> half = constant_scores(4, 0.5);
  const double log_half = std::log(0.5);
  CHECK(discriminator_loss(half, half, LossWeights{0.0, 0.0}).item() == doctest::Approx(-2 * log_half));
  CHECK(discriminator_loss(half, half, LossWeights{0.0, 0.0}).item() == doctest::Approx(1.3863).epsilon(1e-4));
  CHECK(discriminator_loss(half, half, LossWeights{10.0, 0.0}).item() == doctest::Approx(-22 * log_half));
  const Var<double> zero = Var<double>::constant(Matrix<double>::Zero(1, 1));
  CHECK(generator_loss(half, zero, LossWeights{10.0, 3.0}).item() == doctest::Approx(-11 * log_half));

  // scores at the clamped limit 1 leave only the weighted reconstruction
  const Var<double> one = Var<double>::constant(Matrix<double>::Ones(1, 1));
  CHECK(generator_loss(constant_scores(3, 1.0), one, LossWeights{10.0, 3.0}).item() == doctest::Approx(3.0).epsilon(1e-5));
}

TEST_CASE("objectives match scalar-loop evaluations on random batches") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> batch_dist(1, 9);
  std::uniform_real_distribution<double> g(0.0, 20.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Index b = batch_dist(rng);
    const Matrix<double> ru = random_scores(b, rng), rc = random_scores(b, rng);
    const Matrix<double> fu = random_scores(b, rng), fc = random_scores(b, rng);
    const LossWeights w{g(rng), g(rng)};
    const ScorePair<double> real{Var<double>::constant(ru), Var<double>::constant(rc)};
    const ScorePair<double> fake{Var<double>::constant(fu), Var<double>::constant(fc)};
    double oracle_d = 0;
    for (Index k = 0; k < b; ++k) {
      oracle_d += clamp_log(ru(0, k)) / double(b);
      oracle_d += clamp_log_complement(fu(0, k)) / double(b);
      oracle_d += w.gamma1 * clamp_log(rc(0, k)) / double(b);
      oracle_d += w.gamma1 * clamp_log_complement(fc(0, k)) / double(b);
    }
    LossReport report;
    CHECK(std::abs(discriminator_loss(real, fake, w, &report).item() - (-oracle_d)) < 1e-10);

    const double recon = std::abs(g(rng));
    double oracle_g = 0;
    for (Index k = 0; k < b; ++k) oracle_g += (clamp_log(fu(0, k)) + w.gamma1 * clamp_log(fc(0, k))) / double(b);
    oracle_g = -oracle_g + w.gamma2 * recon;
    CHECK(std::abs(generator_loss(fake, Var<double>::constant(Matrix<double>::Constant(1, 1, recon)), w, &report).item() -
                   oracle_g) < 1e-10);

    CHECK(std::abs(report.d_total - report.d_total_from_terms()) < 1e-6);
    CHECK(std::abs(report.g_total - report.g_total_from_terms()) < 1e-6);
    CHECK(std::abs(report.d_real_uncond - loop_mean_log(ru, false)) < 1e-12);
  }
}

TEST_CASE("objectives are affine in their weights") {
  std::mt19937_64 rng(2);
  const ScorePair<double> real{Var<double>::constant(random_scores(5, rng)), Var<double>::constant(random_scores(5, rng))};
  const ScorePair<double> fake{Var<double>::constant(random_scores(5, rng)), Var<double>::constant(random_scores(5, rng))};
  const Var<double> recon = Var<double>::constant(Matrix<double>::Constant(1, 1, 0.37));
  auto d = [&](double g1) { return discriminator_loss(real, fake, LossWeights{g1, 0.0}).item(); };
  auto gl = [&](double g2) { return generator_loss(fake, recon, LossWeights{10.0, g2}).item(); };
  const double d_slope = d(1.0) - d(0.0);
  const double g_slope = gl(1.0) - gl(0.0);
  for (double t : {0.5, 2.0, 7.3, 10.0}) {
    CHECK(std::abs(d(t) - (d(0.0) + t * d_slope)) < 1e-9);
    CHECK(std::abs(gl(t) - (gl(0.0) + t * g_slope)) < 1e-9);
  }
  CHECK(std::abs(g_slope - 0.37) < 1e-12);
}

TEST_CASE("reconstruction loss is a symmetric mean absolute difference") {
  std::mt19937_64 rng(3);
  const Shape s{1, 3, 2, 2};
  const Var<double> a = Var<double>::constant(random_matrix(3, 4, rng), s);
  const Var<double> b = Var<double>::constant(random_matrix(3, 4, rng), s);
  CHECK(reconstruction_loss(a, a).item() == 0.0);
  CHECK(reconstruction_loss(Var<double>::constant(Matrix<double>::Ones(3, 4), s),
                            Var<double>::constant(Matrix<double>::Zero(3, 4), s))
            .item() == 1.0);
  double loop = 0;
  for (Index r = 0; r < 3; ++r)
    for (Index c = 0; c < 4; ++c) loop += std::abs(a.value()(r, c) - b.value()(r, c));
  CHECK(reconstruction_loss(a, b).item() == doctest::Approx(loop / 12).epsilon(1e-15));
  CHECK(reconstruction_loss(a, b).item() == reconstruction_loss(b, a).item());
  CHECK(reconstruction_loss(a, b).item() > 0);
  CHECK(to_display_range_l1(1.0) == 0.5);
  CHECK_THROWS_AS(reconstruction_loss(a, Var<double>::constant(random_matrix(3, 4, rng), Shape{1, 3, 1, 4})),
                  ShapeError);
}

TEST_CASE("objectives reject non-finite scores") {
  ScorePair<double> bad = constant_scores(2, 0.5);
  Matrix<double> s = Matrix<double>::Constant(1, 2, 0.5);
  s(0, 1) = std::nan("");
  bad.conditional = Var<double>::constant(s);
  const ScorePair<double> half = constant_scores(2, 0.5);
  CHECK_THROWS_AS(discriminator_loss(half, bad, LossWeights{}), NumericalFailure);
  CHECK_THROWS_AS(generator_loss(bad, Var<double>::constant(Matrix<double>::Zero(1, 1)), LossWeights{}),
                  NumericalFailure);
}

TEST_CASE("generator loss gradient with respect to generated pixels") {
  for (std::uint64_t seed : {4u, 5u, 6u}) {
    std::mt19937_64 rng(seed);
    const Discriminator<double> disc(DiscriminatorConfig{3, 3, 2, 5}, rng);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    Matrix<double> fake_px(3, 2 * 64 * 64), real_px(3, 2 * 64 * 64);
    for (Index k = 0; k < fake_px.size(); ++k) {
      fake_px.data()[k] = u(rng);
      real_px.data()[k] = u(rng);
    }
    const Shape s{2, 3, 64, 64};
    const Var<double> real = Var<double>::constant(real_px, s);
    const WordBatch<double> words = WordBatch<double>::from_matrices({random_matrix(5, 3, rng), random_matrix(5, 2, rng)});
    // a 3x3 pixel patch keeps the finite-difference sweep small
    Var<double> patch = Var<double>::leaf(fake_px.leftCols(9), Shape{1, 3, 3, 3});
    auto loss = [&] {
      Matrix<double> full = fake_px;
      full.leftCols(9) = patch.value();
      const Var<double> image = make_result<double>(
          full, s, {patch}, [](Node<double>& self) { self.parents[0]->accumulate(self.grad.leftCols(9)); });
      const ScorePair<double> scores = disc.score(image, &words, Phase::eval);
      return generator_loss(scores, reconstruction_loss(real, image), LossWeights{10.0, 3.0});
    };
    auto r = lingedit::testing::check_gradients(loss, {patch});
    CHECK(r.relative_error < 1e-4);
    CHECK(r.analytic_norm > 0);
  }
}

TEST_CASE("loss reports round-trip through a JSON line") {
  LossReport r;
  r.step = 12;
  r.epoch = 3;
  r.gamma1 = 10;
  r.gamma2 = 3;
  r.d_real_uncond = -0.25;
  r.d_fake_cond = -1.5;
  r.reconstruction = 0.125;
  r.d_total = r.d_total_from_terms();
  r.g_total = r.g_total_from_terms();
  const std::string line = r.to_json_line();
  CHECK(line.find('\n') == std::string::npos);
  const LossReport back = LossReport::from_json_line(line);
  CHECK(back.step == 12);
  CHECK(back.d_fake_cond == -1.5);
  CHECK(back.g_total == r.g_total);
  CHECK_THROWS_AS(LossReport::from_json_line("{\"step\": 1}"), DataError);
  CHECK_THROWS_AS(LossReport::from_json_line("not json"), DataError);
}
