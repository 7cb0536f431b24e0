#pragma once

// Differentiable building blocks over (channels x batch*spatial) feature maps.

#include <algorithm>
#include <cmath>
#include <vector>

#include "lingedit/autograd.hpp"

namespace lingedit {

struct ConvSpec {
  Index kernel = 3;
  Index stride = 1;
  Index padding = 1;

  Index out_extent(Index in) const { return (in + 2 * padding - kernel) / stride + 1; }
};

namespace detail {

// Patch matrix for one sample: rows are (ky, kx, c) with c fastest, columns
// are output pixels. Out-of-image taps are zero.
template <typename Scalar>
void im2col(const Scalar* sample, Index channels, Index height, Index width, const ConvSpec& spec,
            Matrix<Scalar>& cols) {
  const Index out_h = spec.out_extent(height);
  const Index out_w = spec.out_extent(width);
  const Index k = spec.kernel;
  cols.resize(k * k * channels, out_h * out_w);
  for (Index oy = 0; oy < out_h; ++oy) {
    for (Index ox = 0; ox < out_w; ++ox) {
      Scalar* dst = cols.data() + (oy * out_w + ox) * cols.rows();
      for (Index ky = 0; ky < k; ++ky) {
        const Index iy = oy * spec.stride + ky - spec.padding;
        for (Index kx = 0; kx < k; ++kx) {
          const Index ix = ox * spec.stride + kx - spec.padding;
          Scalar* tap = dst + (ky * k + kx) * channels;
          if (iy < 0 || iy >= height || ix < 0 || ix >= width) {
            std::fill(tap, tap + channels, Scalar(0));
          } else {
            const Scalar* src = sample + (iy * width + ix) * channels;
            std::copy(src, src + channels, tap);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Matrix<Scalar>& cols, Index channels, Index height, Index width,
                const ConvSpec& spec, Scalar* sample) {
  const Index out_h = spec.out_extent(height);
  const Index out_w = spec.out_extent(width);
  const Index k = spec.kernel;
  for (Index oy = 0; oy < out_h; ++oy) {
    for (Index ox = 0; ox < out_w; ++ox) {
      const Scalar* src = cols.data() + (oy * out_w + ox) * cols.rows();
      for (Index ky = 0; ky < k; ++ky) {
        const Index iy = oy * spec.stride + ky - spec.padding;
        if (iy < 0 || iy >= height) continue;
        for (Index kx = 0; kx < k; ++kx) {
          const Index ix = ox * spec.stride + kx - spec.padding;
          if (ix < 0 || ix >= width) continue;
          const Scalar* tap = src + (ky * k + kx) * channels;
          Scalar* dst = sample + (iy * width + ix) * channels;
          for (Index c = 0; c < channels; ++c) dst[c] += tap[c];
        }
      }
    }
  }
}

}  // namespace detail

/// Bias-free 2-D convolution. weight is out_channels x (kernel*kernel*in_channels).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, ConvSpec spec) {
  const Shape in = x.shape();
  const Index k2c = spec.kernel * spec.kernel * in.channels;
  if (weight.value().cols() != k2c) {
    throw ShapeError("conv2d: weight has " + std::to_string(weight.value().cols()) +
                     " columns, input " + in.str() + " needs " + std::to_string(k2c));
  }
  Shape out{in.batch, weight.value().rows(), spec.out_extent(in.height), spec.out_extent(in.width)};
  require(out.height > 0 && out.width > 0, "conv2d: output would be empty for " + in.str());
  Matrix<Scalar> y(out.channels, out.columns());
  Matrix<Scalar> cols;
  for (Index b = 0; b < in.batch; ++b) {
    detail::im2col(x.value().data() + b * in.spatial() * in.channels, in.channels, in.height, in.width,
                   spec, cols);
    y.middleCols(b * out.spatial(), out.spatial()).noalias() = weight.value() * cols;
  }
  return make_result<Scalar>(std::move(y), out, {x, weight}, [in, out, spec](Node<Scalar>& self) {
    Node<Scalar>& xn = *self.parents[0];
    Node<Scalar>& wn = *self.parents[1];
    Matrix<Scalar> cols;
    Matrix<Scalar> dcols;
    for (Index b = 0; b < in.batch; ++b) {
      const auto dy = self.grad.middleCols(b * out.spatial(), out.spatial());
      if (wn.requires_grad || xn.requires_grad) {
        detail::im2col(xn.value.data() + b * in.spatial() * in.channels, in.channels, in.height,
                       in.width, spec, cols);
      }
      if (wn.requires_grad) wn.grad_buffer().noalias() += dy * cols.transpose();
      if (xn.requires_grad) {
        dcols.noalias() = wn.value.transpose() * dy;
        detail::col2im_add(dcols, in.channels, in.height, in.width, spec,
                           xn.grad_buffer().data() + b * in.spatial() * in.channels);
      }
    }
  });
}

/// Per-channel running statistics owned by a batch-norm layer.
template <typename Scalar>
struct RunningStats {
  Vector<Scalar> mean;
  Vector<Scalar> var;

  explicit RunningStats(Index channels = 0)
      : mean(Vector<Scalar>::Zero(channels)), var(Vector<Scalar>::Ones(channels)) {}
};

/// Batch normalization across all columns of each channel row. In training
/// mode batch statistics are used and `stats` is updated with `momentum`.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       RunningStats<Scalar>& stats, bool training, Scalar momentum = Scalar(0.1),
                       Scalar eps = Scalar(1e-5)) {
  const Index channels = x.value().rows();
  const Index n = x.value().cols();
  require(gamma.value().rows() == channels && beta.value().rows() == channels,
          "batch_norm: parameter size mismatch");
  Vector<Scalar> mean;
  Vector<Scalar> var;
  if (training) {
    mean = x.value().rowwise().mean();
    var = (x.value().colwise() - mean).array().square().rowwise().mean();
    stats.mean = (Scalar(1) - momentum) * stats.mean + momentum * mean;
    const Scalar unbias = n > 1 ? Scalar(n) / Scalar(n - 1) : Scalar(1);
    stats.var = (Scalar(1) - momentum) * stats.var + momentum * unbias * var;
  } else {
    mean = stats.mean;
    var = stats.var;
  }
  const Vector<Scalar> inv_std = (var.array() + eps).rsqrt();
  Matrix<Scalar> xhat = (x.value().colwise() - mean).array().colwise() * inv_std.array();
  Matrix<Scalar> y =
      (xhat.array().colwise() * gamma.value().col(0).array()).colwise() + beta.value().col(0).array();
  return make_result<Scalar>(
      std::move(y), x.shape(), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std, training, n](Node<Scalar>& self) {
        Node<Scalar>& xn = *self.parents[0];
        Node<Scalar>& gn = *self.parents[1];
        Node<Scalar>& bn = *self.parents[2];
        const Matrix<Scalar>& dy = self.grad;
        if (bn.requires_grad) bn.grad_buffer().col(0) += dy.rowwise().sum();
        if (gn.requires_grad) gn.grad_buffer().col(0) += (dy.array() * xhat.array()).rowwise().sum().matrix();
        if (!xn.requires_grad) return;
        const auto g = gn.value.col(0).array();
        if (!training) {
          xn.grad_buffer() += (dy.array().colwise() * (g * inv_std.array())).matrix();
          return;
        }
        const Vector<Scalar> sum_dy = dy.rowwise().sum();
        const Vector<Scalar> sum_dy_xhat = (dy.array() * xhat.array()).rowwise().sum();
        const Scalar inv_n = Scalar(1) / Scalar(n);
        Matrix<Scalar> dx = (dy * Scalar(n)).colwise() - sum_dy;
        dx.array() -= xhat.array().colwise() * sum_dy_xhat.array();
        dx.array().colwise() *= g * inv_std.array() * inv_n;
        xn.grad_buffer() += dx;
      });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Matrix<Scalar> y = x.value().cwiseMax(Scalar(0));
  return make_result<Scalar>(std::move(y), x.shape(), {x}, [](Node<Scalar>& self) {
    Node<Scalar>& xn = *self.parents[0];
    xn.grad_buffer().array() += (xn.value.array() > Scalar(0)).select(self.grad.array(), Scalar(0));
  });
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& x, Scalar slope = Scalar(0.2)) {
  Matrix<Scalar> y = (x.value().array() > Scalar(0)).select(x.value().array(), slope * x.value().array());
  return make_result<Scalar>(std::move(y), x.shape(), {x}, [slope](Node<Scalar>& self) {
    Node<Scalar>& xn = *self.parents[0];
    xn.grad_buffer().array() +=
        (xn.value.array() > Scalar(0)).select(self.grad.array(), slope * self.grad.array());
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
  Matrix<Scalar> y = x.value().array().tanh();
  return make_result<Scalar>(std::move(y), x.shape(), {x}, [](Node<Scalar>& self) {
    Node<Scalar>& xn = *self.parents[0];
    xn.grad_buffer().array() += self.grad.array() * (Scalar(1) - self.value.array().square());
  });
}

template <typename Scalar>
Matrix<Scalar> sigmoid_values(const Matrix<Scalar>& z) {
  return (Scalar(1) + (-z.array()).exp()).inverse().matrix();
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  Matrix<Scalar> y = sigmoid_values<Scalar>(x.value());
  return make_result<Scalar>(std::move(y), x.shape(), {x}, [](Node<Scalar>& self) {
    Node<Scalar>& xn = *self.parents[0];
    xn.grad_buffer().array() += self.grad.array() * self.value.array() * (Scalar(1) - self.value.array());
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require(a.value().rows() == b.value().rows() && a.value().cols() == b.value().cols(),
          "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Matrix<Scalar> y = a.value() + b.value();
  return make_result<Scalar>(std::move(y), a.shape(), {a, b}, [](Node<Scalar>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

/// Channel-wise concatenation of spatially aligned maps.
template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.batch != sb.batch || sa.height != sb.height || sa.width != sb.width) {
    throw ShapeError("concat_channels: spatial mismatch " + sa.str() + " vs " + sb.str());
  }
  Matrix<Scalar> y(sa.channels + sb.channels, sa.columns());
  y.topRows(sa.channels) = a.value();
  y.bottomRows(sb.channels) = b.value();
  Shape out = sa;
  out.channels = sa.channels + sb.channels;
  const Index ca = sa.channels;
  const Index cb = sb.channels;
  return make_result<Scalar>(std::move(y), out, {a, b}, [ca, cb](Node<Scalar>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad.topRows(ca));
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.bottomRows(cb));
  });
}

/// Nearest-neighbour upsampling by 2 along both spatial axes.
template <typename Scalar>
Var<Scalar> upsample_nearest2x(const Var<Scalar>& x) {
  const Shape in = x.shape();
  Shape out{in.batch, in.channels, in.height * 2, in.width * 2};
  Matrix<Scalar> y(out.channels, out.columns());
  for (Index b = 0; b < in.batch; ++b) {
    for (Index oy = 0; oy < out.height; ++oy) {
      for (Index ox = 0; ox < out.width; ++ox) {
        y.col(b * out.spatial() + oy * out.width + ox) =
            x.value().col(b * in.spatial() + (oy / 2) * in.width + ox / 2);
      }
    }
  }
  return make_result<Scalar>(std::move(y), out, {x}, [in, out](Node<Scalar>& self) {
    Matrix<Scalar>& dx = self.parents[0]->grad_buffer();
    for (Index b = 0; b < in.batch; ++b) {
      for (Index oy = 0; oy < out.height; ++oy) {
        for (Index ox = 0; ox < out.width; ++ox) {
          dx.col(b * in.spatial() + (oy / 2) * in.width + ox / 2) +=
              self.grad.col(b * out.spatial() + oy * out.width + ox);
        }
      }
    }
  });
}

/// Spatial average per sample: (C x B*HW) -> (C x B).
template <typename Scalar>
Var<Scalar> spatial_mean(const Var<Scalar>& x) {
  const Shape in = x.shape();
  Matrix<Scalar> y(in.channels, in.batch);
  for (Index b = 0; b < in.batch; ++b)
    y.col(b) = x.value().middleCols(b * in.spatial(), in.spatial()).rowwise().mean();
  return make_result<Scalar>(std::move(y), Shape{in.batch, in.channels, 1, 1}, {x},
                             [in](Node<Scalar>& self) {
                               Matrix<Scalar>& dx = self.parents[0]->grad_buffer();
                               const Scalar inv = Scalar(1) / Scalar(in.spatial());
                               for (Index b = 0; b < in.batch; ++b)
                                 dx.middleCols(b * in.spatial(), in.spatial()).colwise() +=
                                     self.grad.col(b) * inv;
                             });
}

/// weight (O x C) times x (C x cols).
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& weight, const Var<Scalar>& x) {
  require(weight.value().cols() == x.value().rows(), "matmul: inner dimension mismatch");
  Matrix<Scalar> y = weight.value() * x.value();
  Shape out = x.shape();
  out.channels = weight.value().rows();
  return make_result<Scalar>(std::move(y), out, {weight, x}, [](Node<Scalar>& self) {
    Node<Scalar>& wn = *self.parents[0];
    Node<Scalar>& xn = *self.parents[1];
    if (wn.requires_grad) wn.grad_buffer().noalias() += self.grad * xn.value.transpose();
    if (xn.requires_grad) xn.grad_buffer().noalias() += wn.value.transpose() * self.grad;
  });
}

/// Mean absolute difference of all entries.
template <typename Scalar>
Var<Scalar> l1_mean(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols()) {
    throw ShapeError("l1_mean: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  const Scalar n = Scalar(a.value().size());
  Matrix<Scalar> y(1, 1);
  y(0, 0) = (a.value() - b.value()).cwiseAbs().sum() / n;
  return make_result<Scalar>(std::move(y), matrix_shape(1, 1), {a, b}, [n](Node<Scalar>& self) {
    Node<Scalar>& an = *self.parents[0];
    Node<Scalar>& bn = *self.parents[1];
    const Scalar g = self.grad(0, 0) / n;
    const Matrix<Scalar> sign = (an.value - bn.value).array().sign().matrix() * g;
    if (an.requires_grad) an.accumulate(sign);
    if (bn.requires_grad) bn.accumulate(-sign);
  });
}

/// Mean of log(clamp(s, eps, 1-eps)) (or of log(1 - clamp(s)) when
/// `complement` is set). The gradient is zero where clamping is active.
template <typename Scalar>
Var<Scalar> mean_log(const Var<Scalar>& s, bool complement, Scalar eps) {
  const Matrix<Scalar>& v = s.value();
  if (!v.allFinite()) throw NumericalFailure("mean_log: non-finite score");
  const Matrix<Scalar> clamped = v.cwiseMax(eps).cwiseMin(Scalar(1) - eps);
  const Matrix<Scalar> arg = complement ? Matrix<Scalar>((Scalar(1) - clamped.array()).matrix()) : clamped;
  if ((arg.array() <= Scalar(0)).any()) throw NumericalFailure("mean_log: score outside (0,1)");
  const Scalar n = Scalar(v.size());
  Matrix<Scalar> y(1, 1);
  y(0, 0) = arg.array().log().sum() / n;
  return make_result<Scalar>(std::move(y), matrix_shape(1, 1), {s},
                             [arg, n, complement, eps](Node<Scalar>& self) {
                               Node<Scalar>& sn = *self.parents[0];
                               const Scalar g = self.grad(0, 0) / n;
                               const auto inside = (sn.value.array() > eps) && (sn.value.array() < Scalar(1) - eps);
                               const Scalar sign = complement ? Scalar(-1) : Scalar(1);
                               sn.grad_buffer().array() += inside.select(sign * g / arg.array(), Scalar(0));
                             });
}

/// sum_k coeffs[k] * terms[k] for 1x1 terms.
template <typename Scalar>
Var<Scalar> weighted_sum(const std::vector<Var<Scalar>>& terms, const std::vector<Scalar>& coeffs) {
  require(terms.size() == coeffs.size(), "weighted_sum: size mismatch");
  Matrix<Scalar> y = Matrix<Scalar>::Zero(1, 1);
  for (std::size_t k = 0; k < terms.size(); ++k) y(0, 0) += coeffs[k] * terms[k].item();
  return make_result<Scalar>(std::move(y), matrix_shape(1, 1), terms, [coeffs](Node<Scalar>& self) {
    for (std::size_t k = 0; k < coeffs.size(); ++k) {
      if (self.parents[k]->requires_grad)
        self.parents[k]->accumulate(Matrix<Scalar>::Constant(1, 1, coeffs[k] * self.grad(0, 0)));
    }
  });
}

/// Column slice [first, first+count) as a new batch of `count / spatial` samples.
template <typename Scalar>
Var<Scalar> slice_batch(const Var<Scalar>& x, Index first_sample, Index samples) {
  const Shape in = x.shape();
  require(first_sample >= 0 && first_sample + samples <= in.batch, "slice_batch: out of range");
  Shape out = in;
  out.batch = samples;
  Matrix<Scalar> y = x.value().middleCols(first_sample * in.spatial(), samples * in.spatial());
  const Index offset = first_sample * in.spatial();
  return make_result<Scalar>(std::move(y), out, {x}, [offset](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().middleCols(offset, self.grad.cols()) += self.grad;
  });
}

}  // namespace lingedit
