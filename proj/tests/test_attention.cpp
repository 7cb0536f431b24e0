#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "lingedit/attention.hpp"

using namespace lingedit;
using lingedit::testing::random_matrix;

namespace {

// Softmax over words for one region evaluated term by term in long double.
long double oracle_weight(const Matrix<double>& v, const Matrix<double>& wp, Index i, Index j) {
  auto logit = [&](Index jj) {
    long double s = 0;
    for (Index m = 0; m < v.rows(); ++m) s += (long double)v(m, i) * (long double)wp(m, jj);
    return s;
  };
  long double denom = 0;
  for (Index k = 0; k < wp.cols(); ++k) denom += std::exp(logit(k));
  return std::exp(logit(j)) / denom;
}

}  // namespace

TEST_CASE("project_words: identity, annihilation and a brute-force product") {
  std::mt19937_64 rng(1);
  const Matrix<double> w = random_matrix(4, 3, rng);
  CHECK(project_words(w, Matrix<double>::Identity(4, 4)) == w);
  CHECK(project_words(w, Matrix<double>::Zero(5, 4)).cwiseAbs().maxCoeff() == 0.0);

  const Matrix<double> u = random_matrix(3, 2, rng);
  const Matrix<double> words = random_matrix(2, 4, rng);
  const Matrix<double> got = project_words(words, u);
  REQUIRE(got.rows() == 3);
  REQUIRE(got.cols() == 4);
  for (Index r = 0; r < 3; ++r)
    for (Index c = 0; c < 4; ++c) {
      double s = 0;
      for (Index k = 0; k < 2; ++k) s += u(r, k) * words(k, c);
      CHECK(std::abs(got(r, c) - s) < 1e-14);
    }
  CHECK_THROWS_AS(project_words(words, random_matrix(3, 5, rng)), ShapeError);
}

TEST_CASE("attention_weights: degenerate and hand-set cases") {
  std::mt19937_64 rng(2);
  // all logits equal -> uniform over L
  const Matrix<double> v = Matrix<double>::Zero(3, 5);
  const Matrix<double> a = attention_weights(v, random_matrix(3, 4, rng));
  CHECK((a.array() - 0.25).abs().maxCoeff() < 1e-15);
  // L = 1 -> weight 1
  CHECK((attention_weights(random_matrix(3, 5, rng), random_matrix(3, 1, rng)).array() - 1.0).abs().maxCoeff() ==
        0.0);

  // N = 2, L = 3 hand-set logits
  Matrix<double> v2(2, 2);
  v2 << 1.0, -0.5, 0.25, 2.0;
  Matrix<double> wp(2, 3);
  wp << 0.3, -1.2, 2.0, 0.7, 0.1, -0.4;
  const Matrix<double> got = attention_weights(v2, wp);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j) CHECK(std::abs(got(i, j) - double(oracle_weight(v2, wp, i, j))) < 1e-12);

  CHECK_THROWS_AS(attention_weights(random_matrix(3, 2, rng), random_matrix(4, 2, rng)), ShapeError);
}

TEST_CASE("word_context_features: single word and explicit weighted sums") {
  std::mt19937_64 rng(3);
  const Matrix<double> v = random_matrix(3, 6, rng);
  const Matrix<double> w = random_matrix(4, 1, rng);
  const Matrix<double> u = random_matrix(3, 4, rng);
  const Matrix<double> ctx = word_context_features(v, w, u);
  const Matrix<double> wp = u * w;
  for (Index i = 0; i < 6; ++i) CHECK((ctx.col(i) - wp.col(0)).norm() < 1e-14);

  // N = 2, L = 2, M = 2 with U = I so projected words are the words themselves
  Matrix<double> v2(2, 2);
  v2 << 0.5, -1.0, 1.5, 0.25;
  Matrix<double> w2(2, 2);
  w2 << 1.0, -2.0, 0.5, 3.0;
  const Matrix<double> got = word_context_features(v2, w2, Matrix<double>::Identity(2, 2));
  for (Index i = 0; i < 2; ++i) {
    const double l0 = v2(0, i) * w2(0, 0) + v2(1, i) * w2(1, 0);
    const double l1 = v2(0, i) * w2(0, 1) + v2(1, i) * w2(1, 1);
    const double a0 = std::exp(l0) / (std::exp(l0) + std::exp(l1));
    const double a1 = 1.0 - a0;
    for (Index m = 0; m < 2; ++m) CHECK(std::abs(got(m, i) - (a0 * w2(m, 0) + a1 * w2(m, 1))) < 1e-12);
  }
}

TEST_CASE("attention rows are stochastic, permutation invariant and convex") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> dim(1, 8);
  for (int trial = 0; trial < 200; ++trial) {
    const Index m = dim(rng), n = dim(rng), d = dim(rng), l = dim(rng);
    const Matrix<double> v = random_matrix(m, n, rng, 2.0);
    const Matrix<double> w = random_matrix(d, l, rng, 2.0);
    const Matrix<double> u = random_matrix(m, d, rng);
    const AttentionResult<double> r = attend(v, w, u);
    CHECK(r.weights.minCoeff() >= 0.0);
    CHECK((r.weights.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);

    std::vector<Index> perm(static_cast<std::size_t>(l));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix<double> w_perm(d, l);
    for (Index j = 0; j < l; ++j) w_perm.col(j) = w.col(perm[std::size_t(j)]);
    const AttentionResult<double> rp = attend(v, w_perm, u);
    CHECK((rp.context - r.context).cwiseAbs().maxCoeff() < 1e-6);
    for (Index j = 0; j < l; ++j) CHECK((rp.weights.col(j) - r.weights.col(perm[std::size_t(j)])).norm() < 1e-9);

    const Vector<double> hi = r.projected.rowwise().maxCoeff();
    const Vector<double> lo = r.projected.rowwise().minCoeff();
    for (Index i = 0; i < n; ++i) {
      CHECK((r.context.col(i) - hi).maxCoeff() <= 1e-12);
      CHECK((lo - r.context.col(i)).maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("shifting every logit by 1000 leaves attention unchanged") {
  std::mt19937_64 rng(5);
  const Matrix<double> v = random_matrix(3, 4, rng);
  const Matrix<double> wp = random_matrix(3, 5, rng);
  Matrix<double> v_shift(4, 4);
  v_shift << v, Matrix<double>::Constant(1, 4, 1000.0);
  Matrix<double> wp_shift(4, 5);
  wp_shift << wp, Matrix<double>::Ones(1, 5);
  const Matrix<double> a = attention_weights(v, wp);
  const Matrix<double> b = attention_weights(v_shift, wp_shift);
  CHECK(b.allFinite());
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("attention chain gradients match central differences") {
  std::mt19937_64 rng(6);
  const Index m = 4, n = 6, d = 5, l = 3;
  Var<double> v = Var<double>::leaf(random_matrix(m, n, rng), Shape{1, m, 2, 3});
  Var<double> u = Var<double>::leaf(random_matrix(m, d, rng));
  Var<double> words = Var<double>::leaf(random_matrix(d, l, rng), Shape{1, d, 1, l});
  const Matrix<double> probe = random_matrix(m, n, rng);
  auto r = lingedit::testing::check_gradients(
      [&] {
        const WordBatch<double> wb{words, {l}, l};
        return lingedit::testing::project_to_scalar(word_context(v, wb, u), probe);
      },
      {v, u, words});
  CHECK(r.relative_error < 1e-4);
  CHECK(r.analytic_norm > 0);
}

TEST_CASE("batched word_context masks padding and matches per-sample attend") {
  std::mt19937_64 rng(7);
  const Matrix<double> v = random_matrix(3, 2 * 4, rng);
  const Matrix<double> u = random_matrix(3, 2, rng);
  const Matrix<double> w0 = random_matrix(2, 3, rng);
  const Matrix<double> w1 = random_matrix(2, 1, rng);
  const WordBatch<double> wb = WordBatch<double>::from_matrices({w0, w1});
  std::vector<Matrix<double>> maps;
  const Var<double> ctx = word_context(Var<double>::constant(v, Shape{2, 3, 2, 2}), wb, Var<double>::constant(u), &maps);
  CHECK((ctx.value().leftCols(4) - word_context_features(v.leftCols(4), w0, u)).norm() < 1e-14);
  CHECK((ctx.value().rightCols(4) - word_context_features(v.rightCols(4), w1, u)).norm() < 1e-14);
  CHECK(maps[1].cols() == 1);
  CHECK_THROWS_AS(word_context(Var<double>::constant(v, Shape{2, 3, 2, 2}), wb, Var<double>::constant(random_matrix(4, 2, rng))),
                  ShapeError);
}

TEST_CASE("attention map binary export round-trips") {
  AttentionMap map;
  map.height = 2;
  map.width = 3;
  map.weights = Matrix<float>::Random(6, 4);
  const std::string bytes = encode_attention_map(map);
  CHECK(bytes.size() == 16 + 6 * 4 * 4);
  CHECK(static_cast<unsigned char>(bytes[0]) == 6);
  CHECK(static_cast<unsigned char>(bytes[4]) == 4);
  const AttentionMap back = decode_attention_map(bytes);
  CHECK(back.weights == map.weights);
  CHECK(back.height == 2);
  CHECK(back.width == 3);
  CHECK_THROWS_AS(decode_attention_map(bytes.substr(0, 20)), DataError);
}
