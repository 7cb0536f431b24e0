#include "doctest.h"
#include "gradcheck.hpp"
#include "lingedit/parameters.hpp"

using namespace lingedit;
using lingedit::testing::check_gradients;
using lingedit::testing::project_to_scalar;
using lingedit::testing::random_matrix;

namespace {

// Direct 7-loop convolution over the (C x B*H*W) layout.
Matrix<double> naive_conv(const Matrix<double>& x, Shape s, const Matrix<double>& w, ConvSpec spec) {
  const Index out_c = w.rows();
  const Index oh = spec.out_extent(s.height);
  const Index ow = spec.out_extent(s.width);
  Matrix<double> y = Matrix<double>::Zero(out_c, s.batch * oh * ow);
  for (Index b = 0; b < s.batch; ++b)
    for (Index o = 0; o < out_c; ++o)
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox)
          for (Index ky = 0; ky < spec.kernel; ++ky)
            for (Index kx = 0; kx < spec.kernel; ++kx)
              for (Index c = 0; c < s.channels; ++c) {
                const Index iy = oy * spec.stride + ky - spec.padding;
                const Index ix = ox * spec.stride + kx - spec.padding;
                if (iy < 0 || ix < 0 || iy >= s.height || ix >= s.width) continue;
                y(o, b * oh * ow + oy * ow + ox) +=
                    w(o, (ky * spec.kernel + kx) * s.channels + c) * x(c, b * s.spatial() + iy * s.width + ix);
              }
  return y;
}

}  // namespace

TEST_CASE("conv2d matches a direct loop and has correct gradients") {
  std::mt19937_64 rng(1);
  for (ConvSpec spec : {ConvSpec{3, 1, 1}, ConvSpec{3, 2, 1}, ConvSpec{4, 2, 1}}) {
    const Shape s{2, 3, 6, 6};
    Var<double> x = Var<double>::leaf(random_matrix(3, s.columns(), rng), s);
    Var<double> w = Var<double>::leaf(random_matrix(4, spec.kernel * spec.kernel * 3, rng));
    const Var<double> y = conv2d(x, w, spec);
    CHECK((y.value() - naive_conv(x.value(), s, w.value(), spec)).cwiseAbs().maxCoeff() < 1e-12);
    const Matrix<double> probe = random_matrix(y.value().rows(), y.value().cols(), rng);
    auto r = check_gradients([&] { return project_to_scalar(conv2d(x, w, spec), probe); }, {x, w});
    CHECK(r.relative_error < 1e-7);
  }
}

TEST_CASE("conv2d rejects mismatched weights") {
  std::mt19937_64 rng(2);
  Var<double> x = Var<double>::constant(random_matrix(3, 16, rng), Shape{1, 3, 4, 4});
  Var<double> w = Var<double>::constant(random_matrix(2, 9 * 4, rng));
  CHECK_THROWS_AS(conv2d(x, w, ConvSpec{}), ShapeError);
}

TEST_CASE("batch norm gradients in training and eval phases") {
  std::mt19937_64 rng(3);
  const Shape s{2, 3, 2, 2};
  Var<double> x = Var<double>::leaf(random_matrix(3, s.columns(), rng), s);
  Var<double> g = Var<double>::leaf(random_matrix(3, 1, rng));
  Var<double> b = Var<double>::leaf(random_matrix(3, 1, rng));
  const Matrix<double> probe = random_matrix(3, s.columns(), rng);
  for (bool training : {true, false}) {
    RunningStats<double> stats(3);
    stats.mean.setConstant(0.2);
    stats.var.setConstant(1.5);
    auto r = check_gradients(
        [&] {
          RunningStats<double> local = stats;
          return project_to_scalar(batch_norm(x, g, b, local, training), probe);
        },
        {x, g, b});
    CHECK(r.relative_error < 1e-6);
  }
  RunningStats<double> stats(3);
  const Var<double> y = batch_norm(x, g, b, stats, true);
  // normalized rows have the learned mean and scale
  const Matrix<double> xhat = (y.value().colwise() - b.value().col(0)).array().colwise() / g.value().col(0).array();
  CHECK(xhat.rowwise().mean().cwiseAbs().maxCoeff() < 1e-12);
  CHECK((xhat.array().square().rowwise().mean() - 1.0).abs().maxCoeff() < 1e-4);
}

TEST_CASE("elementwise and structural ops have correct gradients") {
  std::mt19937_64 rng(4);
  const Shape s{2, 3, 2, 3};
  Var<double> x = Var<double>::leaf(random_matrix(3, s.columns(), rng), s);
  Var<double> z = Var<double>::leaf(random_matrix(2, s.columns(), rng), Shape{2, 2, 2, 3});
  const Matrix<double> probe3 = random_matrix(3, s.columns(), rng);
  const Matrix<double> probe_up = random_matrix(3, 4 * s.columns(), rng);
  const Matrix<double> probe_cat = random_matrix(5, s.columns(), rng);
  CHECK(check_gradients([&] { return project_to_scalar(tanh(x), probe3); }, {x}).relative_error < 1e-7);
  CHECK(check_gradients([&] { return project_to_scalar(sigmoid(x), probe3); }, {x}).relative_error < 1e-7);
  CHECK(check_gradients([&] { return project_to_scalar(leaky_relu(x, 0.2), probe3); }, {x}).relative_error < 1e-7);
  CHECK(check_gradients([&] { return project_to_scalar(relu(x), probe3); }, {x}).relative_error < 1e-7);
  CHECK(check_gradients([&] { return project_to_scalar(upsample_nearest2x(x), probe_up); }, {x}).relative_error <
        1e-7);
  CHECK(check_gradients([&] { return project_to_scalar(concat_channels(x, z), probe_cat); }, {x, z}).relative_error <
        1e-7);
  CHECK(check_gradients([&] { return project_to_scalar(add(x, x), probe3); }, {x}).relative_error < 1e-7);
  const Matrix<double> probe_mean = random_matrix(3, 2, rng);
  CHECK(check_gradients([&] { return project_to_scalar(spatial_mean(x), probe_mean); }, {x}).relative_error < 1e-7);
  Var<double> w = Var<double>::leaf(random_matrix(4, 3, rng));
  const Matrix<double> probe_mm = random_matrix(4, s.columns(), rng);
  CHECK(check_gradients([&] { return project_to_scalar(matmul(w, x), probe_mm); }, {w, x}).relative_error < 1e-7);
  Var<double> y = Var<double>::leaf(random_matrix(3, s.columns(), rng), s);
  CHECK(check_gradients([&] { return l1_mean(x, y); }, {x, y}).relative_error < 1e-7);
  const Matrix<double> probe_slice = random_matrix(3, s.spatial(), rng);
  CHECK(check_gradients([&] { return project_to_scalar(slice_batch(x, 1, 1), probe_slice); }, {x}).relative_error <
        1e-7);
}

TEST_CASE("nearest-neighbour upsampling replicates each value into a 2x2 block") {
  Matrix<double> v(1, 4);
  v << 1, 2, 3, 4;  // 2x2 grid, row-major
  const Var<double> up = upsample_nearest2x(Var<double>::constant(v, Shape{1, 1, 2, 2}));
  CHECK(up.shape() == Shape{1, 1, 4, 4});
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x) CHECK(up.value()(0, y * 4 + x) == v(0, (y / 2) * 2 + x / 2));
}

TEST_CASE("mean_log clamps scores and reports non-finite input") {
  Matrix<double> s(1, 3);
  s << 0.0, 0.5, 1.0;
  const Var<double> v = Var<double>::constant(s);
  const double eps = 1e-7;
  CHECK(mean_log(v, false, eps).item() == doctest::Approx((std::log(eps) + std::log(0.5) + std::log(1 - eps)) / 3));
  s(0, 1) = std::nan("");
  CHECK_THROWS_AS(mean_log(Var<double>::constant(s), false, eps), NumericalFailure);
  std::mt19937_64 rng(5);
  Matrix<double> inner = (random_matrix(1, 4, rng).array() * 0.2 + 0.5).matrix();
  Var<double> leaf = Var<double>::leaf(inner);
  CHECK(check_gradients([&] { return mean_log(leaf, true, eps); }, {leaf}).relative_error < 1e-7);
}

TEST_CASE("adam moves parameters against the gradient") {
  ParameterSet<double> params;
  params.add("p", Matrix<double>::Constant(2, 1, 1.0));
  params["p"].node()->accumulate(Matrix<double>::Constant(2, 1, 3.0));
  Adam<double> adam(AdamSettings{0.1, 0.5, 0.999, 1e-8});
  adam.step(params);
  // the first bias-corrected step has magnitude lr regardless of gradient scale
  CHECK(params["p"].value()(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(adam.steps() == 1);
}
