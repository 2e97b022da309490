#include "avur/amf/decoder.hpp"

#include <cmath>

namespace avur {

BaseDecoder BaseDecoder::init(const DecoderConfig& cfg, Rng& rng) {
  BaseDecoder d;
  d.cfg = cfg;
  d.token_embedding = Param("dec.embedding", init_normal(cfg.vocab(), cfg.dim, 1.0, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string n = "dec.layer" + std::to_string(l + 1);
    d.layers.push_back({LayerNormParams::init(n + ".ln_self", cfg.dim),
                        LayerNormParams::init(n + ".ln_cross", cfg.dim),
                        LayerNormParams::init(n + ".ln_ff", cfg.dim),
                        MultiHeadAttention::init(n + ".self", cfg.attention(), rng),
                        MultiHeadAttention::init(n + ".cross", cfg.attention(), rng),
                        FeedForward::init(n + ".ff", cfg.dim, cfg.ff_dim, rng)});
  }
  d.final_ln = LayerNormParams::init("dec.final_ln", cfg.dim);
  d.out = Linear::init("dec.out", cfg.dim, cfg.vocab(), rng);
  return d;
}

void BaseDecoder::collect(ParamRefs& out_params) {
  out_params.push_back(&token_embedding);
  for (auto& l : layers) {
    l.ln_self.collect(out_params);
    l.ln_cross.collect(out_params);
    l.ln_ff.collect(out_params);
    l.self_attn.collect(out_params);
    l.cross_attn.collect(out_params);
    l.ff.collect(out_params);
  }
  final_ln.collect(out_params);
  out.collect(out_params);
}

AmfLayer AmfLayer::init(const std::string& name, AttentionConfig att, Eigen::Index ff_dim, Rng& rng) {
  att.validate();
  AmfLayer l;
  l.dim = att.model_dim;
  l.probe_wq = Param(name + ".probe_wq", init_uniform(att.model_dim, att.model_dim, rng));
  l.probe_wk = Param(name + ".probe_wk", init_uniform(att.model_dim, att.model_dim, rng));
  l.gate_slope = Param(name + ".a", Matrix::Constant(1, 1, 1.0));
  l.gate_offset = Param(name + ".b", Matrix::Zero(1, 1));
  l.dir_att = Param(name + ".dir_att", Matrix::Zero(1, 1));
  l.dir_ff = Param(name + ".dir_ff", Matrix::Zero(1, 1));
  l.visual_xattn = MultiHeadAttention::init(name + ".xattn", att, rng);
  l.ffw = FeedForward::init(name + ".ffw", att.model_dim, ff_dim, rng);
  l.ln_att = LayerNormParams::init(name + ".ln_att", att.model_dim);
  l.ln_ff = LayerNormParams::init(name + ".ln_ff", att.model_dim);
  return l;
}

void AmfLayer::collect(ParamRefs& out) {
  collect_probe(out);
  out.push_back(&gate_slope);
  out.push_back(&gate_offset);
  out.push_back(&dir_att);
  out.push_back(&dir_ff);
  visual_xattn.collect(out);
  ffw.collect(out);
  ln_att.collect(out);
  ln_ff.collect(out);
}

void AmfLayer::collect_probe(ParamRefs& out) {
  out.push_back(&probe_wq);
  out.push_back(&probe_wk);
}

Var probe_keys(Tape& t, Var xa, AmfLayer& layer) {
  if (xa.rows() < 1) throw ShapeError("probe: audio memory has no frames");
  if (xa.cols() != layer.dim) throw ShapeError("probe: audio width does not match layer");
  return matmul(t.stop_gradient(xa), t.param(layer.probe_wk));
}

Var probe_logits(Tape& t, Var q, Var keys, AmfLayer& layer) {
  if (q.cols() != layer.dim) throw ShapeError("probe: query width does not match layer");
  Var queries = matmul(t.stop_gradient(q), t.param(layer.probe_wq));
  return scale(matmul_nt(queries, keys), 1.0 / std::sqrt(static_cast<double>(layer.dim)));
}

Var probe_attention(Tape& t, Var q, Var xa, AmfLayer& layer) {
  return softmax_rows(probe_logits(t, q, probe_keys(t, xa, layer), layer));
}

double uncertainty(std::span<const double> attention_row) { return normalized_entropy(attention_row); }

double amplitude_gate(double s, double slope, double offset) { return sigmoid(slope * s + offset); }

namespace {

Var apply_amf(Tape& t, Var x, Var keys, const MultiHeadAttention::Memory& visual, AmfLayer& layer,
              AmfTrace* trace) {
  Var s = normalized_entropy_rows(probe_logits(t, x, keys, layer));
  Var amp = sigmoid(affine_scalar(s, t.param(layer.gate_slope), t.param(layer.gate_offset)));
  Var dir_att = tanh(t.param(layer.dir_att));
  Var dir_ff = tanh(t.param(layer.dir_ff));
  if (trace) {
    trace->uncertainty = s.value();
    trace->amplitude = amp.value();
    trace->dir_att = dir_att.scalar();
    trace->dir_ff = dir_ff.scalar();
  }
  Var c = layer.visual_xattn.attend(t, layer.ln_att.forward(t, x), visual);
  Var x1 = add(x, mul_col(scale(c, dir_att), amp));
  Var f = layer.ffw.forward(t, layer.ln_ff.forward(t, x1));
  return add(x1, mul_col(scale(f, dir_ff), amp));
}

}  // namespace

Var amf_layer(Tape& t, Var x, Var xa, Var xv_hat, AmfLayer& layer, AmfTrace* trace) {
  if (x.cols() != layer.dim || xv_hat.cols() != layer.dim)
    throw ShapeError("amf_layer: width mismatch");
  const auto visual = layer.visual_xattn.project_memory(t, xv_hat, xv_hat);
  return apply_amf(t, x, probe_keys(t, xa, layer), visual, layer, trace);
}

AvsrModel::AvsrModel(AvsrConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), counters_(std::make_shared<InstrumentationCounters>()) {
  Rng rng(seed);
  decoder_ = BaseDecoder::init(cfg_.decoder, rng);
  projector_ = Linear::init("sma.projector", cfg_.visual_dim, cfg_.decoder.dim, rng);
  sma_ = SmaStack::init(cfg_.sma, cfg_.encoder_depth, cfg_.decoder.attention(), rng);
  for (int l = 0; l < cfg_.decoder.layers; ++l)
    amf_.push_back(AmfLayer::init("amf.layer" + std::to_string(l + 1), cfg_.decoder.attention(),
                                  cfg_.decoder.ff_dim, rng));
  init_probe_from_decoder();
}

int AvsrModel::audio_memory_layer() const {
  return cfg_.audio_memory_layer < 0 ? cfg_.encoder_depth : cfg_.audio_memory_layer;
}

void AvsrModel::init_probe_from_decoder() {
  for (size_t l = 0; l < amf_.size(); ++l) {
    amf_[l].probe_wq.value = decoder_.layers[l].cross_attn.q.weight.value;
    amf_[l].probe_wk.value = decoder_.layers[l].cross_attn.k.weight.value;
  }
}

Var AvsrModel::visual_features(Tape& t, Var xv, const std::vector<Var>& audio_layers) {
  const size_t mem = static_cast<size_t>(audio_memory_layer());
  if (mem >= audio_layers.size()) throw std::out_of_range("visual_features: missing audio memory layer");
  const Eigen::Index ta = audio_layers[mem].rows();
  Var x = project(t, resample_to(t, xv, ta), projector_);
  if (cfg_.use_sma) {
    counters_->sma_calls.fetch_add(1, std::memory_order_relaxed);
    x = align(t, x, audio_layers, sma_);
  }
  return x;
}

DecoderContext AvsrModel::prepare(Tape& t, const std::vector<Var>& audio_layers, std::optional<Var> xv) {
  const size_t mem = static_cast<size_t>(audio_memory_layer());
  if (mem >= audio_layers.size())
    throw std::out_of_range("prepare: audio encoder output for layer " + std::to_string(mem) + " missing");
  DecoderContext ctx;
  ctx.audio = audio_layers[mem];
  for (auto& l : decoder_.layers) ctx.audio_kv.push_back(l.cross_attn.project_memory(t, ctx.audio, ctx.audio));
  if (xv && cfg_.use_amf) {
    ctx.has_visual = true;
    ctx.visual = visual_features(t, *xv, audio_layers);
    for (auto& l : amf_) {
      ctx.probe_keys.push_back(probe_keys(t, ctx.audio, l));
      ctx.visual_kv.push_back(l.visual_xattn.project_memory(t, ctx.visual, ctx.visual));
    }
  }
  return ctx;
}

Var AvsrModel::logits(Tape& t, const DecoderContext& ctx, const std::vector<int>& prefix,
                      std::vector<AmfTrace>* traces) {
  const DecoderConfig& dc = cfg_.decoder;
  if (prefix.empty() || prefix.front() != dc.bos())
    throw std::invalid_argument("decoder prefix must start with BOS");
  if (static_cast<int>(prefix.size()) > dc.max_len)
    throw std::length_error("decoder prefix of " + std::to_string(prefix.size()) +
                            " exceeds max context " + std::to_string(dc.max_len));
  std::vector<double> times(prefix.size());
  for (size_t p = 0; p < prefix.size(); ++p) times[p] = static_cast<double>(p) + 0.5;
  Var x = add(gather_rows(t.param(decoder_.token_embedding), prefix),
              t.constant(time_encoding(times, dc.dim)));
  if (traces) traces->clear();
  for (size_t l = 0; l < decoder_.layers.size(); ++l) {
    if (cfg_.use_amf && ctx.has_visual) {
      counters_->amf_calls.fetch_add(1, std::memory_order_relaxed);
      AmfTrace trace;
      x = apply_amf(t, x, ctx.probe_keys[l], ctx.visual_kv[l], amf_[l], traces ? &trace : nullptr);
      if (traces) traces->push_back(std::move(trace));
    }
    DecoderLayer& L = decoder_.layers[l];
    Var h = L.ln_self.forward(t, x);
    x = add(x, L.self_attn.forward(t, h, h, h, AttentionMask::causal_from(0)));
    x = add(x, L.cross_attn.attend(t, L.ln_cross.forward(t, x), ctx.audio_kv[l]));
    x = add(x, L.ff.forward(t, L.ln_ff.forward(t, x)));
  }
  return decoder_.out.forward(t, decoder_.final_ln.forward(t, x));
}

RowVector AvsrModel::step(Tape& t, const DecoderContext& ctx, DecoderState& state, int token) {
  const DecoderConfig& dc = cfg_.decoder;
  if (state.positions >= dc.max_len)
    throw std::length_error("decoder state already holds max context " + std::to_string(dc.max_len));
  if (state.keys.empty()) {
    state.keys.resize(decoder_.layers.size());
    state.values.resize(decoder_.layers.size());
  }
  const size_t mark = t.mark();
  const double time = static_cast<double>(state.positions) + 0.5;
  Var x = add(gather_rows(t.param(decoder_.token_embedding), {token}),
              t.constant(time_encoding(std::span<const double>(&time, 1), dc.dim)));
  for (size_t l = 0; l < decoder_.layers.size(); ++l) {
    if (cfg_.use_amf && ctx.has_visual) {
      counters_->amf_calls.fetch_add(1, std::memory_order_relaxed);
      x = apply_amf(t, x, ctx.probe_keys[l], ctx.visual_kv[l], amf_[l], nullptr);
    }
    DecoderLayer& L = decoder_.layers[l];
    Var h = L.ln_self.forward(t, x);
    auto own = L.self_attn.project_memory(t, h, h);
    Matrix& k = state.keys[l];
    Matrix& v = state.values[l];
    k.conservativeResize(state.positions + 1, own.keys.cols());
    v.conservativeResize(state.positions + 1, own.values.cols());
    k.row(state.positions) = own.keys.value().row(0);
    v.row(state.positions) = own.values.value().row(0);
    x = add(x, L.self_attn.attend(t, h, {t.constant(k), t.constant(v)}));
    x = add(x, L.cross_attn.attend(t, L.ln_cross.forward(t, x), ctx.audio_kv[l]));
    x = add(x, L.ff.forward(t, L.ln_ff.forward(t, x)));
  }
  RowVector z = decoder_.out.forward(t, decoder_.final_ln.forward(t, x)).value().row(0);
  t.rewind(mark);
  ++state.positions;
  return z;
}

Var AvsrModel::teacher_forced_loss(Tape& t, const DecoderContext& ctx, const std::vector<int>& tokens) {
  std::vector<int> prefix{cfg_.decoder.bos()};
  prefix.insert(prefix.end(), tokens.begin(), tokens.end());
  std::vector<int> targets(tokens);
  targets.push_back(cfg_.decoder.eos());
  return cross_entropy(logits(t, ctx, prefix), targets);
}

ParamRefs AvsrModel::base_params() {
  ParamRefs out;
  decoder_.collect(out);
  return out;
}

ParamRefs AvsrModel::fusion_params() {
  ParamRefs out;
  projector_.collect(out);
  sma_.collect(out);
  for (auto& l : amf_) {
    ParamRefs layer;
    l.collect(layer);
    for (Param* p : layer) {
      if (!cfg_.train_probe && (p == &l.probe_wq || p == &l.probe_wk)) continue;
      out.push_back(p);
    }
  }
  return out;
}

ParamRefs AvsrModel::all_params() {
  ParamRefs out = base_params();
  projector_.collect(out);
  sma_.collect(out);
  for (auto& l : amf_) l.collect(out);
  return out;
}

RowVector decode_step(AvsrModel& model, Tape& t, const DecoderContext& ctx, const std::vector<int>& prefix) {
  const size_t mark = t.mark();
  Var z = model.logits(t, ctx, prefix);
  RowVector probs = softmax_rows(z.value().bottomRows(1)).row(0);
  t.rewind(mark);
  return probs;
}

}  // namespace avur
