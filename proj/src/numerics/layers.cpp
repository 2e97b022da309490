#include "avur/numerics/layers.hpp"

#include <cmath>

namespace avur {

Linear Linear::init(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                    bool with_bias) {
  Linear l;
  l.weight = Param(name + ".w", init_uniform(in, out, rng));
  l.bias = Param(name + ".b", Matrix::Zero(1, out));
  l.has_bias = with_bias;
  return l;
}

Linear Linear::from(const std::string& name, Matrix w, Matrix b) {
  if (b.rows() != 1 || b.cols() != w.cols())
    throw ShapeError("Linear::from: bias " + shape_str(b) + " vs weight " + shape_str(w));
  Linear l;
  l.weight = Param(name + ".w", std::move(w));
  l.bias = Param(name + ".b", std::move(b));
  return l;
}

Var Linear::forward(Tape& t, Var x, const DropoutContext* drop) {
  if (x.cols() != in_dim())
    throw ShapeError(weight.name + ": input " + shape_str(x.value()) + " for weight " +
                     shape_str(weight.value));
  Var y = matmul(x, t.param(weight));
  if (has_bias) y = add_row(y, t.param(bias));
  if (lora) {
    Var xin = x;
    if (drop && drop->rng && lora->dropout > 0.0) {
      std::bernoulli_distribution keep(1.0 - lora->dropout);
      Matrix mask(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i)
        mask.data()[i] = keep(*drop->rng) ? 1.0 / (1.0 - lora->dropout) : 0.0;
      xin = hadamard(x, t.constant(std::move(mask)));
    }
    Var low = matmul_nt(xin, t.param(lora->a));          // T x r
    Var delta = matmul_nt(low, t.param(lora->b));        // T x out
    y = add(y, scale(delta, lora->scaling));
  }
  return y;
}

void Linear::collect(ParamRefs& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
  if (lora) {
    out.push_back(&lora->a);
    out.push_back(&lora->b);
  }
}

LayerNormParams LayerNormParams::init(const std::string& name, Eigen::Index dim) {
  LayerNormParams ln;
  ln.gain = Param(name + ".gain", Matrix::Ones(1, dim));
  ln.bias = Param(name + ".bias", Matrix::Zero(1, dim));
  return ln;
}

Var LayerNormParams::forward(Tape& t, Var x) {
  return layer_norm(x, t.param(gain), t.param(bias), eps);
}

void LayerNormParams::collect(ParamRefs& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

MultiHeadAttention MultiHeadAttention::init(const std::string& name, AttentionConfig cfg, Rng& rng) {
  cfg.validate();
  MultiHeadAttention m;
  m.cfg = cfg;
  m.q = Linear::init(name + ".q", cfg.model_dim, cfg.model_dim, rng);
  m.k = Linear::init(name + ".k", cfg.model_dim, cfg.model_dim, rng);
  m.v = Linear::init(name + ".v", cfg.model_dim, cfg.model_dim, rng);
  m.o = Linear::init(name + ".o", cfg.model_dim, cfg.model_dim, rng);
  return m;
}

MultiHeadAttention::Memory MultiHeadAttention::project_memory(Tape& t, Var key_in, Var value_in,
                                                              const DropoutContext* drop) {
  if (key_in.rows() != value_in.rows())
    throw ShapeError("mha: " + std::to_string(key_in.rows()) + " keys but " +
                     std::to_string(value_in.rows()) + " values");
  return {k.forward(t, key_in, drop), v.forward(t, value_in, drop)};
}

Var MultiHeadAttention::attend(Tape& t, Var query_in, const Memory& mem, AttentionMask mask,
                               const DropoutContext* drop) {
  cfg.validate();
  if (query_in.cols() != cfg.model_dim)
    throw ShapeError("mha: query width " + std::to_string(query_in.cols()) + " != model_dim " +
                     std::to_string(cfg.model_dim));
  Var queries = q.forward(t, query_in, drop);
  const Eigen::Index dh = cfg.head_dim();
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(cfg.num_heads));
  for (Eigen::Index h = 0; h < cfg.num_heads; ++h) {
    Var qh = cfg.num_heads == 1 ? queries : slice_cols(queries, h * dh, dh);
    Var kh = cfg.num_heads == 1 ? mem.keys : slice_cols(mem.keys, h * dh, dh);
    Var vh = cfg.num_heads == 1 ? mem.values : slice_cols(mem.values, h * dh, dh);
    Var scores = scale(matmul_nt(qh, kh), scale_factor);
    heads.push_back(matmul(softmax_rows(scores, mask), vh));
  }
  Var joined = cfg.num_heads == 1 ? heads.front() : hconcat(heads);
  return o.forward(t, joined, drop);
}

Var MultiHeadAttention::forward(Tape& t, Var query_in, Var key_in, Var value_in,
                                AttentionMask mask, const DropoutContext* drop) {
  if (key_in.cols() != cfg.model_dim || value_in.cols() != cfg.model_dim)
    throw ShapeError("mha: key/value width does not match model_dim " +
                     std::to_string(cfg.model_dim));
  return attend(t, query_in, project_memory(t, key_in, value_in, drop), mask, drop);
}

void MultiHeadAttention::collect(ParamRefs& out) {
  q.collect(out);
  k.collect(out);
  v.collect(out);
  o.collect(out);
}

Var mha(Tape& t, Var q, Var k, Var v, MultiHeadAttention& params, AttentionMask mask) {
  return params.forward(t, q, k, v, mask);
}

FeedForward FeedForward::init(const std::string& name, Eigen::Index dim, Eigen::Index hidden,
                              Rng& rng) {
  return {Linear::init(name + ".in", dim, hidden, rng), Linear::init(name + ".out", hidden, dim, rng)};
}

Var FeedForward::forward(Tape& t, Var x) { return out.forward(t, gelu(in.forward(t, x))); }

void FeedForward::collect(ParamRefs& out_params) {
  in.collect(out_params);
  out.collect(out_params);
}

void set_requires_grad(const ParamRefs& params, bool on) {
  for (Param* p : params) p->requires_grad = on;
}

size_t parameter_count(const ParamRefs& params) {
  size_t n = 0;
  for (const Param* p : params) n += static_cast<size_t>(p->value.size());
  return n;
}

}  // namespace avur
