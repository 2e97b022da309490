#include "avur/encoders/encoders.hpp"

#include <cmath>

namespace avur {

const char* to_string(Modality m) { return m == Modality::audio ? "audio" : "visual"; }

void FeatureSequence::validate() const {
  if (frames.rows() < 1) throw ShapeError("FeatureSequence: needs at least one frame");
  if (!(frame_rate_hz > 0)) throw std::invalid_argument("FeatureSequence: frame rate must be > 0");
  require_finite(frames, "FeatureSequence");
}

Matrix time_encoding(std::span<const double> times, Eigen::Index dim) {
  Matrix pe(static_cast<Eigen::Index>(times.size()), dim);
  for (Eigen::Index r = 0; r < pe.rows(); ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) {
      const double freq = std::pow(1000.0, -static_cast<double>(2 * (c / 2)) / static_cast<double>(dim));
      const double arg = times[static_cast<size_t>(r)] * freq;
      pe(r, c) = (c % 2 == 0) ? std::sin(arg) : std::cos(arg);
    }
  }
  return pe;
}

ToyEncoder::ToyEncoder(ToyEncoderConfig cfg) : cfg_(cfg) {
  if (cfg_.vocab < 1) throw std::invalid_argument("ToyEncoder: empty vocabulary");
  if (cfg_.depth < 1) throw std::invalid_argument("ToyEncoder: depth must be >= 1");
  if (cfg_.frames_per_token < 1) throw std::invalid_argument("ToyEncoder: frames_per_token >= 1");
  Rng rng(cfg_.seed);
  const std::string prefix = std::string(to_string(cfg_.modality)) + "_enc";
  embedding_ = Param(prefix + ".embedding", init_normal(cfg_.vocab, cfg_.dim, cfg_.embedding_scale, rng));
  const AttentionConfig ac{cfg_.dim, cfg_.heads};
  for (int l = 0; l < cfg_.depth; ++l) {
    const std::string n = prefix + ".layer" + std::to_string(l + 1);
    blocks_.push_back({LayerNormParams::init(n + ".ln1", cfg_.dim),
                       LayerNormParams::init(n + ".ln2", cfg_.dim),
                       MultiHeadAttention::init(n + ".attn", ac, rng),
                       FeedForward::init(n + ".ff", cfg_.dim, cfg_.ff_dim, rng)});
  }
  set_frozen(true);
}

void ToyEncoder::set_frozen(bool f) {
  frozen_ = f;
  set_requires_grad(params(), !f);
}

ParamRefs ToyEncoder::params() {
  ParamRefs out{&embedding_};
  for (auto& b : blocks_) {
    b.ln1.collect(out);
    b.ln2.collect(out);
    b.attn.collect(out);
    b.ff.collect(out);
  }
  return out;
}

FeatureSequence ToyEncoder::embed(std::span<const int> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("ToyEncoder::embed: empty token sequence");
  const Eigen::Index frames = static_cast<Eigen::Index>(tokens.size()) * cfg_.frames_per_token;
  Matrix out(frames, cfg_.dim);
  Eigen::Index r = 0;
  for (int tok : tokens) {
    if (tok < 0 || tok >= cfg_.vocab)
      throw std::out_of_range("ToyEncoder: unknown token " + std::to_string(tok));
    for (int k = 0; k < cfg_.frames_per_token; ++k) out.row(r++) = embedding_.value.row(tok);
  }
  return {std::move(out), frame_rate_hz(), cfg_.modality};
}

Matrix ToyEncoder::positions(Eigen::Index frames) const {
  std::vector<double> times(static_cast<size_t>(frames));
  for (Eigen::Index f = 0; f < frames; ++f)
    times[static_cast<size_t>(f)] = (static_cast<double>(f) + 0.5) / cfg_.frames_per_token;
  return time_encoding(times, cfg_.dim) * cfg_.position_scale;
}

std::vector<Var> ToyEncoder::forward_layers(Tape& t, Var raw) { return run_blocks(t, raw); }

std::vector<Var> ToyEncoder::encode_layers(Tape& t, std::span<const int> tokens, const Matrix& noise) {
  if (tokens.empty()) throw std::invalid_argument("ToyEncoder::encode_layers: empty token sequence");
  std::vector<int> ids;
  for (int tok : tokens) {
    if (tok < 0 || tok >= cfg_.vocab)
      throw std::out_of_range("ToyEncoder: unknown token " + std::to_string(tok));
    for (int k = 0; k < cfg_.frames_per_token; ++k) ids.push_back(tok);
  }
  Var raw = gather_rows(t.param(embedding_), ids);
  if (noise.size() != 0) raw = add(raw, t.constant(noise));
  return run_blocks(t, raw);
}

std::vector<Var> ToyEncoder::run_blocks(Tape& t, Var raw) const {
  if (raw.cols() != cfg_.dim)
    throw ShapeError("ToyEncoder: input width " + std::to_string(raw.cols()) + " != " +
                     std::to_string(cfg_.dim));
  std::vector<Var> outs;
  Var x = add(raw, t.constant(positions(raw.rows())));
  outs.push_back(x);
  for (auto& b : blocks_) {
    Var h = b.ln1.forward(t, x);
    x = add(x, scale(b.attn.forward(t, h, h, h), cfg_.residual_scale));
    x = add(x, scale(b.ff.forward(t, b.ln2.forward(t, x)), cfg_.residual_scale));
    outs.push_back(x);
  }
  return outs;
}

std::vector<FeatureSequence> ToyEncoder::forward_layers(const FeatureSequence& raw) const {
  raw.validate();
  Tape t(false);
  auto vars = run_blocks(t, t.constant(raw.frames));
  std::vector<FeatureSequence> out;
  out.reserve(vars.size());
  for (Var v : vars) out.push_back({v.value(), raw.frame_rate_hz, raw.modality});
  return out;
}

FeatureSequence ToyEncoder::encode(std::span<const int> tokens, const Matrix& noise, int layer) const {
  if (layer < 0 || layer > cfg_.depth)
    throw std::out_of_range("ToyEncoder::encode: layer " + std::to_string(layer) + " outside 0.." +
                            std::to_string(cfg_.depth));
  FeatureSequence raw = embed(tokens);
  if (noise.size() != 0) {
    if (noise.rows() != raw.frames.rows() || noise.cols() != raw.frames.cols())
      throw ShapeError("ToyEncoder::encode: noise " + shape_str(noise) + " vs features " +
                       shape_str(raw.frames));
    raw.frames += noise;
  }
  return forward_layers(raw)[static_cast<size_t>(layer)];
}

Matrix resample_weights(Eigen::Index source_len, Eigen::Index target_len) {
  if (source_len < 1) throw std::invalid_argument("resample: source needs >= 1 frame");
  if (target_len < 1) throw std::invalid_argument("resample: target_len must be >= 1");
  Matrix w = Matrix::Zero(target_len, source_len);
  if (source_len == 1 || target_len == 1) {
    w.col(0).setOnes();
    return w;
  }
  for (Eigen::Index i = 0; i < target_len; ++i) {
    // Exact rational position keeps the equal-length case an exact identity.
    const Eigen::Index num = i * (source_len - 1);
    const Eigen::Index lo = num / (target_len - 1);
    const Eigen::Index rem = num % (target_len - 1);
    if (rem == 0) {
      w(i, lo) = 1.0;
      continue;
    }
    const double frac = static_cast<double>(rem) / static_cast<double>(target_len - 1);
    w(i, lo) = 1.0 - frac;
    w(i, lo + 1) = frac;
  }
  return w;
}

FeatureSequence resample_to(const FeatureSequence& x, Eigen::Index target_len) {
  x.validate();
  const Matrix w = resample_weights(x.length(), target_len);
  return {w * x.frames, x.frame_rate_hz * static_cast<double>(target_len) / static_cast<double>(x.length()),
          x.modality};
}

Var resample_to(Tape& t, Var x, Eigen::Index target_len) {
  if (target_len == x.rows()) return x;
  return matmul(t.constant(resample_weights(x.rows(), target_len)), x);
}

FeatureSequence project(const FeatureSequence& x, const Matrix& w, const RowVector& b) {
  x.validate();
  if (w.rows() != x.dim() || b.cols() != w.cols())
    throw ShapeError("project: features " + shape_str(x.frames) + ", W " + shape_str(w) + ", b " +
                     shape_str(b));
  Matrix out = (x.frames * w).rowwise() + b;
  return {std::move(out), x.frame_rate_hz, x.modality};
}

Var project(Tape& t, Var x, Linear& projector) { return projector.forward(t, x); }

}  // namespace avur
