#pragma once

#include <string>

#include "lingedit/discriminator.hpp"

namespace lingedit {

/// Scores are clamped to [eps, 1 - eps] before every logarithm.
inline constexpr double kScoreEpsilon = 1e-7;

struct LossWeights {
  double gamma1 = 10.0;  // conditional vs unconditional balance
  double gamma2 = 3.0;   // reconstruction weight

  static LossWeights for_mode(GeneratorMode mode) {
    return LossWeights{10.0, mode == GeneratorMode::single ? 2.0 : 3.0};
  }
};

/// Per-term breakdown of one training step. The discriminator minimizes
///   d_total = -(d_real_uncond + d_fake_uncond + g1 * d_real_cond + g1 * d_fake_cond)
/// where the fake terms are E[log(1 - D(.))]; the generator minimizes
///   g_total = -(g_fake_uncond + g1 * g_fake_cond) + g2 * reconstruction.
struct LossReport {
  long long step = 0;
  long long epoch = 0;
  double gamma1 = 0;
  double gamma2 = 0;
  double d_total = 0;
  double d_real_uncond = 0;
  double d_fake_uncond = 0;
  double d_real_cond = 0;
  double d_fake_cond = 0;
  double g_total = 0;
  double g_fake_uncond = 0;
  double g_fake_cond = 0;
  double reconstruction = 0;

  double d_total_from_terms() const {
    return -(d_real_uncond + d_fake_uncond + gamma1 * d_real_cond + gamma1 * d_fake_cond);
  }
  double g_total_from_terms() const { return -(g_fake_uncond + gamma1 * g_fake_cond) + gamma2 * reconstruction; }

  /// One newline-free JSON object.
  std::string to_json_line() const;
  static LossReport from_json_line(const std::string& line);
};

/// -L_D for minimization.
template <typename Scalar>
Var<Scalar> discriminator_loss(const ScorePair<Scalar>& real, const ScorePair<Scalar>& fake, const LossWeights& w,
                               LossReport* report = nullptr) {
  if (!real.conditional.defined() || !fake.conditional.defined())
    throw ShapeError("discriminator_loss: conditional scores are required");
  const Scalar eps = Scalar(kScoreEpsilon);
  const Var<Scalar> real_uncond = mean_log(real.unconditional, false, eps);
  const Var<Scalar> fake_uncond = mean_log(fake.unconditional, true, eps);
  const Var<Scalar> real_cond = mean_log(real.conditional, false, eps);
  const Var<Scalar> fake_cond = mean_log(fake.conditional, true, eps);
  const Scalar g1 = Scalar(w.gamma1);
  Var<Scalar> total = weighted_sum<Scalar>({real_uncond, fake_uncond, real_cond, fake_cond},
                                           {Scalar(-1), Scalar(-1), -g1, -g1});
  if (report) {
    report->gamma1 = w.gamma1;
    report->d_real_uncond = double(real_uncond.item());
    report->d_fake_uncond = double(fake_uncond.item());
    report->d_real_cond = double(real_cond.item());
    report->d_fake_cond = double(fake_cond.item());
    report->d_total = double(total.item());
  }
  return total;
}

/// Generator objective: -(E log D(G(I,T^)) + g1 E log D(G(I,T^),T^)) + g2 L_R.
template <typename Scalar>
Var<Scalar> generator_loss(const ScorePair<Scalar>& fake, const Var<Scalar>& reconstruction, const LossWeights& w,
                           LossReport* report = nullptr) {
  if (!fake.conditional.defined()) throw ShapeError("generator_loss: conditional scores are required");
  const Scalar eps = Scalar(kScoreEpsilon);
  const Var<Scalar> fake_uncond = mean_log(fake.unconditional, false, eps);
  const Var<Scalar> fake_cond = mean_log(fake.conditional, false, eps);
  const Scalar g1 = Scalar(w.gamma1);
  Var<Scalar> total = weighted_sum<Scalar>({fake_uncond, fake_cond, reconstruction},
                                           {Scalar(-1), -g1, Scalar(w.gamma2)});
  if (report) {
    report->gamma1 = w.gamma1;
    report->gamma2 = w.gamma2;
    report->g_fake_uncond = double(fake_uncond.item());
    report->g_fake_cond = double(fake_cond.item());
    report->reconstruction = double(reconstruction.item());
    report->g_total = double(total.item());
  }
  return total;
}

/// Mean absolute per-element difference, in the [-1, 1] training range.
template <typename Scalar>
Var<Scalar> reconstruction_loss(const Var<Scalar>& image, const Var<Scalar>& reconstructed) {
  if (image.shape() != reconstructed.shape())
    throw ShapeError("reconstruction_loss: " + image.shape().str() + " vs " + reconstructed.shape().str());
  return l1_mean(image, reconstructed);
}

/// Converts a [-1, 1]-range L1 to the [0, 1] display range.
inline double to_display_range_l1(double l1) { return l1 / 2.0; }

}  // namespace lingedit
