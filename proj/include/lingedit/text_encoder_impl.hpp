#pragma once

// Template implementation of TextEncoder; included from text.hpp.

#include <memory>

namespace lingedit {

namespace detail {

template <typename Scalar>
struct LstmStepCache {
  Matrix<Scalar> input;       // E x B
  Matrix<Scalar> h_prev;      // H x B
  Matrix<Scalar> c_prev;      // H x B
  Matrix<Scalar> gates;       // 4H x B, post-activation (i, f, g, o)
  Matrix<Scalar> tanh_c;      // H x B
  RowVector<Scalar> mask;     // 1 x B
};

template <typename Scalar>
struct LstmRun {
  std::vector<Index> order;  // time steps in processing order
  std::vector<LstmStepCache<Scalar>> cache;
  std::vector<Matrix<Scalar>> outputs;  // indexed by time step
};

template <typename Scalar>
Matrix<Scalar> gather_embeddings(const Matrix<Scalar>& table, const Eigen::MatrixXi& ids, Index t) {
  Matrix<Scalar> x(table.rows(), ids.cols());
  for (Index b = 0; b < ids.cols(); ++b) x.col(b) = table.col(ids(t, b));
  return x;
}

template <typename Scalar>
LstmRun<Scalar> lstm_forward(const Matrix<Scalar>& table, const Eigen::MatrixXi& ids,
                             const std::vector<Index>& lengths, const Matrix<Scalar>& wx,
                             const Matrix<Scalar>& wh, const Matrix<Scalar>& bias, bool reverse,
                             bool keep_cache) {
  const Index steps = ids.rows();
  const Index batch = ids.cols();
  const Index h = wh.cols();
  LstmRun<Scalar> run;
  run.outputs.resize(static_cast<std::size_t>(steps));
  for (Index k = 0; k < steps; ++k) run.order.push_back(reverse ? steps - 1 - k : k);
  Matrix<Scalar> hs = Matrix<Scalar>::Zero(h, batch);
  Matrix<Scalar> cs = Matrix<Scalar>::Zero(h, batch);
  for (Index t : run.order) {
    LstmStepCache<Scalar> step;
    step.input = gather_embeddings(table, ids, t);
    step.mask.resize(batch);
    for (Index b = 0; b < batch; ++b) step.mask(b) = t < lengths[static_cast<std::size_t>(b)] ? 1 : 0;
    Matrix<Scalar> z = wx * step.input + wh * hs;
    z.colwise() += bias.col(0);
    step.gates.resize(4 * h, batch);
    step.gates.topRows(2 * h) = sigmoid_values<Scalar>(z.topRows(2 * h));
    step.gates.middleRows(2 * h, h) = z.middleRows(2 * h, h).array().tanh();
    step.gates.bottomRows(h) = sigmoid_values<Scalar>(z.bottomRows(h));
    const auto i = step.gates.topRows(h).array();
    const auto f = step.gates.middleRows(h, h).array();
    const auto g = step.gates.middleRows(2 * h, h).array();
    const auto o = step.gates.bottomRows(h).array();
    Matrix<Scalar> c_new = f * cs.array() + i * g;
    step.tanh_c = c_new.array().tanh();
    Matrix<Scalar> h_new = o * step.tanh_c.array();
    step.h_prev = hs;
    step.c_prev = cs;
    for (Index b = 0; b < batch; ++b) {
      if (step.mask(b) > 0) {
        hs.col(b) = h_new.col(b);
        cs.col(b) = c_new.col(b);
      }
    }
    Matrix<Scalar> out = hs;
    for (Index b = 0; b < batch; ++b)
      if (step.mask(b) == 0) out.col(b).setZero();
    run.outputs[static_cast<std::size_t>(t)] = std::move(out);
    if (keep_cache) run.cache.push_back(std::move(step));
  }
  return run;
}

// Back-propagates d(output_t) for every t through one direction. Gradients
// are accumulated into the supplied buffers.
template <typename Scalar>
void lstm_backward(const LstmRun<Scalar>& run, const std::vector<Matrix<Scalar>>& d_out,
                   const Eigen::MatrixXi& ids, const Matrix<Scalar>& wx, const Matrix<Scalar>& wh,
                   Matrix<Scalar>* d_table, Matrix<Scalar>* d_wx, Matrix<Scalar>* d_wh, Matrix<Scalar>* d_bias) {
  const Index h = wh.cols();
  const Index batch = ids.cols();
  Matrix<Scalar> dh = Matrix<Scalar>::Zero(h, batch);
  Matrix<Scalar> dc = Matrix<Scalar>::Zero(h, batch);
  for (std::size_t k = run.order.size(); k-- > 0;) {
    const Index t = run.order[k];
    const LstmStepCache<Scalar>& step = run.cache[k];
    // padded outputs are constant zeros, so their upstream gradient is dropped
    for (Index b = 0; b < batch; ++b)
      if (step.mask(b) > 0) dh.col(b) += d_out[static_cast<std::size_t>(t)].col(b);
    const auto i = step.gates.topRows(h).array();
    const auto f = step.gates.middleRows(h, h).array();
    const auto g = step.gates.middleRows(2 * h, h).array();
    const auto o = step.gates.bottomRows(h).array();
    Matrix<Scalar> dc_total = dc.array() + dh.array() * o * (Scalar(1) - step.tanh_c.array().square());
    Matrix<Scalar> dz(4 * h, batch);
    dz.topRows(h) = dc_total.array() * g * i * (Scalar(1) - i);
    dz.middleRows(h, h) = dc_total.array() * step.c_prev.array() * f * (Scalar(1) - f);
    dz.middleRows(2 * h, h) = dc_total.array() * i * (Scalar(1) - g.square());
    dz.bottomRows(h) = dh.array() * step.tanh_c.array() * o * (Scalar(1) - o);
    Matrix<Scalar> dc_prev = dc_total.array() * f;
    for (Index b = 0; b < batch; ++b) {
      if (step.mask(b) == 0) {
        dz.col(b).setZero();
        dc_prev.col(b) = dc.col(b);
      }
    }
    d_wx->noalias() += dz * step.input.transpose();
    d_wh->noalias() += dz * step.h_prev.transpose();
    d_bias->col(0) += dz.rowwise().sum();
    Matrix<Scalar> dh_prev = wh.transpose() * dz;
    for (Index b = 0; b < batch; ++b)
      if (step.mask(b) == 0) dh_prev.col(b) = dh.col(b);
    if (d_table) {
      const Matrix<Scalar> dx = wx.transpose() * dz;
      for (Index b = 0; b < batch; ++b)
        if (step.mask(b) > 0) d_table->col(ids(t, b)) += dx.col(b);
    }
    dh = std::move(dh_prev);
    dc = std::move(dc_prev);
  }
}

}  // namespace detail

template <typename Scalar>
TextEncoder<Scalar>::TextEncoder(const TextEncoderConfig& config, std::mt19937_64& rng) : config_(config) {
  const Index e = config.embedding_width;
  const Index h = config.hidden_width;
  params_.add("text.embedding", init_uniform<Scalar>(e, config.vocab_size, Scalar(config.embedding_init), rng));
  params_["text.embedding"].mutable_value().col(Vocabulary::kPad).setZero();
  const Scalar bound = Scalar(1.0 / std::sqrt(double(h)));
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string p = std::string("text.lstm.") + dir;
    params_.add(p + ".wx", init_uniform<Scalar>(4 * h, e, bound, rng));
    params_.add(p + ".wh", init_uniform<Scalar>(4 * h, h, bound, rng));
    Matrix<Scalar> bias = Matrix<Scalar>::Zero(4 * h, 1);
    bias.middleRows(h, h).setOnes();  // forget gate starts open
    params_.add(p + ".b", std::move(bias));
  }
}

template <typename Scalar>
WordBatch<Scalar> TextEncoder<Scalar>::encode(const TokenBatch& tokens) const {
  const Index steps = tokens.max_length();
  const Index batch = tokens.batch();
  require(steps >= 1 && batch >= 1, "encode_words: empty token batch");
  for (Index len : tokens.lengths) {
    if (len < 1 || len > steps) throw ShapeError("encode_words: sequence length must be in [1, max_length]");
  }
  const Index h = config_.hidden_width;
  const Var<Scalar>& table = params_["text.embedding"];
  if ((tokens.ids.array() >= Index(table.value().cols())).any() || (tokens.ids.array() < 0).any()) {
    throw ShapeError("encode_words: token index outside vocabulary");
  }
  const bool keep = grad_enabled();
  auto fwd = std::make_shared<detail::LstmRun<Scalar>>(detail::lstm_forward<Scalar>(
      table.value(), tokens.ids, tokens.lengths, params_["text.lstm.fwd.wx"].value(),
      params_["text.lstm.fwd.wh"].value(), params_["text.lstm.fwd.b"].value(), false, keep));
  auto bwd = std::make_shared<detail::LstmRun<Scalar>>(detail::lstm_forward<Scalar>(
      table.value(), tokens.ids, tokens.lengths, params_["text.lstm.bwd.wx"].value(),
      params_["text.lstm.bwd.wh"].value(), params_["text.lstm.bwd.b"].value(), true, keep));
  Matrix<Scalar> out(2 * h, batch * steps);
  for (Index b = 0; b < batch; ++b) {
    for (Index t = 0; t < steps; ++t) {
      out.col(b * steps + t).head(h) = fwd->outputs[static_cast<std::size_t>(t)].col(b);
      out.col(b * steps + t).tail(h) = bwd->outputs[static_cast<std::size_t>(t)].col(b);
    }
  }
  std::vector<Var<Scalar>> parents{table,
                                   params_["text.lstm.fwd.wx"], params_["text.lstm.fwd.wh"], params_["text.lstm.fwd.b"],
                                   params_["text.lstm.bwd.wx"], params_["text.lstm.bwd.wh"], params_["text.lstm.bwd.b"]};
  Eigen::MatrixXi ids = tokens.ids;
  Var<Scalar> features = make_result<Scalar>(
      std::move(out), Shape{batch, 2 * h, 1, steps}, parents,
      [fwd, bwd, ids, h, batch, steps](Node<Scalar>& self) {
        auto& p = self.parents;
        Matrix<Scalar>* d_table = p[0]->requires_grad ? &p[0]->grad_buffer() : nullptr;
        for (int dir = 0; dir < 2; ++dir) {
          const auto& run = dir == 0 ? *fwd : *bwd;
          std::vector<Matrix<Scalar>> d_out(static_cast<std::size_t>(steps));
          for (Index t = 0; t < steps; ++t) {
            Matrix<Scalar> d(h, batch);
            for (Index b = 0; b < batch; ++b) d.col(b) = self.grad.col(b * steps + t).segment(dir * h, h);
            d_out[static_cast<std::size_t>(t)] = std::move(d);
          }
          const std::size_t base = 1 + 3 * std::size_t(dir);
          detail::lstm_backward<Scalar>(run, d_out, ids, p[base]->value, p[base + 1]->value, d_table,
                                        &p[base]->grad_buffer(), &p[base + 1]->grad_buffer(),
                                        &p[base + 2]->grad_buffer());
        }
      });
  return WordBatch<Scalar>{std::move(features), tokens.lengths, steps};
}

template <typename Scalar>
std::size_t TextEncoder<Scalar>::load_pretrained(
    const Vocabulary& vocab, const std::unordered_map<std::string, std::vector<float>>& vectors) {
  Matrix<Scalar>& table = params_["text.embedding"].mutable_value();
  std::size_t loaded = 0;
  for (std::size_t idx = 2; idx < vocab.size(); ++idx) {
    auto it = vectors.find(vocab.token(int(idx)));
    if (it == vectors.end()) continue;
    if (Index(it->second.size()) != table.rows()) throw DataError("word vector width mismatch for " + it->first);
    for (Index r = 0; r < table.rows(); ++r) table(r, Index(idx)) = Scalar(it->second[std::size_t(r)]);
    ++loaded;
  }
  return loaded;
}

}  // namespace lingedit
