#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lingedit/layers.hpp"

namespace lingedit {

/// Named trainable tensors plus the batch-norm running statistics that travel
/// with them in checkpoints. Iteration order is the name order, which makes
/// hashing and serialization deterministic.
template <typename Scalar>
class ParameterSet {
 public:
  Var<Scalar>& add(const std::string& name, Matrix<Scalar> value) {
    if (params_.count(name)) throw ShapeError("duplicate parameter " + name);
    auto [it, inserted] = params_.emplace(name, Var<Scalar>::leaf(std::move(value)));
    return it->second;
  }

  RunningStats<Scalar>& add_stats(const std::string& name, Index channels) {
    auto [it, inserted] = stats_.emplace(name, RunningStats<Scalar>(channels));
    return it->second;
  }

  Var<Scalar>& operator[](const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ShapeError("unknown parameter " + name);
    return it->second;
  }
  const Var<Scalar>& operator[](const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ShapeError("unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  RunningStats<Scalar>& stats(const std::string& name) { return stats_.at(name); }

  std::map<std::string, Var<Scalar>>& entries() { return params_; }
  const std::map<std::string, Var<Scalar>>& entries() const { return params_; }
  std::map<std::string, RunningStats<Scalar>>& all_stats() { return stats_; }
  const std::map<std::string, RunningStats<Scalar>>& all_stats() const { return stats_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  Index count() const {
    Index n = 0;
    for (const auto& [name, p] : params_) n += p.value().size();
    return n;
  }

  // Deep copy of values with identical names, used to fork a model.
  ParameterSet clone() const {
    ParameterSet copy;
    for (const auto& [name, p] : params_) copy.add(name, p.value());
    copy.stats_ = stats_;
    return copy;
  }

 private:
  std::map<std::string, Var<Scalar>> params_;
  std::map<std::string, RunningStats<Scalar>> stats_;
};

/// He-style normal initialization scaled by fan-in.
template <typename Scalar, typename Rng>
Matrix<Scalar> init_normal(Index rows, Index cols, Scalar stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  Matrix<Scalar> m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  return m;
}

template <typename Scalar, typename Rng>
Matrix<Scalar> init_uniform(Index rows, Index cols, Scalar bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  Matrix<Scalar> m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  return m;
}

template <typename Scalar, typename Rng>
Matrix<Scalar> init_conv(Index out_channels, Index in_channels, Index kernel, Rng& rng) {
  const Index fan_in = in_channels * kernel * kernel;
  return init_normal<Scalar>(out_channels, fan_in, Scalar(std::sqrt(2.0 / double(fan_in))), rng);
}

struct AdamSettings {
  double step_size = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer over one ParameterSet. Moments are keyed by
/// parameter name so they serialize alongside the parameters.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamSettings settings = {}) : settings_(settings) {}

  void set_step_size(double lr) { settings_.step_size = lr; }
  double step_size() const { return settings_.step_size; }
  const AdamSettings& settings() const { return settings_; }
  long long steps() const { return steps_; }

  /// Applies one update to every parameter that has a gradient.
  void step(ParameterSet<Scalar>& params) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(settings_.beta1, double(steps_));
    const double bc2 = 1.0 - std::pow(settings_.beta2, double(steps_));
    const Scalar b1 = Scalar(settings_.beta1);
    const Scalar b2 = Scalar(settings_.beta2);
    const Scalar lr = Scalar(settings_.step_size * std::sqrt(bc2) / bc1);
    const Scalar eps = Scalar(settings_.epsilon * std::sqrt(bc2));
    for (auto& [name, p] : params.entries()) {
      if (!p.has_grad()) continue;
      auto [mit, m_new] = first_.try_emplace(name, Matrix<Scalar>::Zero(p.value().rows(), p.value().cols()));
      auto [vit, v_new] = second_.try_emplace(name, Matrix<Scalar>::Zero(p.value().rows(), p.value().cols()));
      Matrix<Scalar>& m = mit->second;
      Matrix<Scalar>& v = vit->second;
      const Matrix<Scalar>& g = p.grad();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
      p.mutable_value().array() -= lr * m.array() / (v.array().sqrt() + eps);
    }
  }

  std::map<std::string, Matrix<Scalar>>& first_moments() { return first_; }
  std::map<std::string, Matrix<Scalar>>& second_moments() { return second_; }
  void set_steps(long long s) { steps_ = s; }

 private:
  AdamSettings settings_;
  long long steps_ = 0;
  std::map<std::string, Matrix<Scalar>> first_;
  std::map<std::string, Matrix<Scalar>> second_;
};

/// Global L2 norm of all present gradients.
template <typename Scalar>
double gradient_norm(const ParameterSet<Scalar>& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params.entries())
    if (p.has_grad()) sq += double(p.grad().squaredNorm());
  return std::sqrt(sq);
}

}  // namespace lingedit
