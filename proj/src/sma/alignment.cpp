#include "avur/sma/alignment.hpp"

namespace avur {

AlignmentBlock AlignmentBlock::init(const std::string& name, AttentionConfig cfg, Rng& rng) {
  cfg.validate();
  AlignmentBlock b;
  b.cfg = cfg;
  b.self_attn = MultiHeadAttention::init(name + ".self", cfg, rng);
  b.cross_attn = MultiHeadAttention::init(name + ".cross", cfg, rng);
  b.out_gate = Param(name + ".gate", Matrix::Zero(1, 1));
  return b;
}

void AlignmentBlock::collect(ParamRefs& out) {
  self_attn.collect(out);
  cross_attn.collect(out);
  out.push_back(&out_gate);
}

SmaStack SmaStack::init(const SmaConfig& cfg, int encoder_depth, AttentionConfig att, Rng& rng) {
  SmaStack s;
  s.encoder_depth = encoder_depth;
  s.per_layer_audio = cfg.per_layer_audio;
  s.insertion_layers = cfg.insertion_layers;
  if (s.insertion_layers.empty())
    for (int l = encoder_depth - kSmaBlocks + 1; l <= encoder_depth; ++l) s.insertion_layers.push_back(l);
  for (size_t i = 0; i < s.insertion_layers.size(); ++i)
    s.blocks.push_back(AlignmentBlock::init("sma.block" + std::to_string(i + 1), att, rng));
  s.validate();
  return s;
}

void SmaStack::validate() const {
  if (blocks.size() != static_cast<size_t>(kSmaBlocks) ||
      insertion_layers.size() != static_cast<size_t>(kSmaBlocks))
    throw std::invalid_argument("SmaStack: exactly " + std::to_string(kSmaBlocks) +
                                " alignment blocks are required");
  const int lowest = (encoder_depth + 1) / 2;
  for (size_t i = 0; i < insertion_layers.size(); ++i) {
    const int l = insertion_layers[i];
    if (l < std::max(1, lowest) || l > encoder_depth)
      throw std::invalid_argument("SmaStack: insertion layer " + std::to_string(l) +
                                  " is not in the upper half of a depth-" +
                                  std::to_string(encoder_depth) + " encoder");
    if (i > 0 && l <= insertion_layers[i - 1])
      throw std::invalid_argument("SmaStack: insertion layers must be strictly increasing");
  }
}

int SmaStack::audio_layer_for(size_t block) const {
  return per_layer_audio ? insertion_layers.at(block) : encoder_depth;
}

void SmaStack::collect(ParamRefs& out) {
  for (auto& b : blocks) b.collect(out);
}

Var align_block(Tape& t, Var xv, Var xa, AlignmentBlock& block) {
  if (xv.rows() != xa.rows())
    throw ShapeError("align_block: visual has " + std::to_string(xv.rows()) + " frames, audio " +
                     std::to_string(xa.rows()) + "; resample first");
  if (xv.cols() != xa.cols() || xv.cols() != block.cfg.model_dim)
    throw ShapeError("align_block: feature width mismatch");
  Var audio = t.stop_gradient(xa);
  Var sa = block.self_attn.forward(t, xv, xv, xv);
  Var ctx = block.cross_attn.forward(t, sa, audio, audio);
  return add(xv, scale(ctx, tanh(t.param(block.out_gate))));
}

Var align(Tape& t, Var xv_projected, const std::vector<Var>& audio_layers, SmaStack& stack) {
  stack.validate();
  Var x = xv_projected;
  for (size_t b = 0; b < stack.blocks.size(); ++b) {
    const int layer = stack.audio_layer_for(b);
    if (layer < 0 || static_cast<size_t>(layer) >= audio_layers.size())
      throw std::out_of_range("align: missing audio encoder output for layer " + std::to_string(layer));
    x = align_block(t, x, audio_layers[static_cast<size_t>(layer)], stack.blocks[b]);
  }
  return x;
}

FeatureSequence align_block(const FeatureSequence& xv, const FeatureSequence& xa, AlignmentBlock& block) {
  Tape t(false);
  Var out = align_block(t, t.constant(xv.frames), t.constant(xa.frames), block);
  return {out.value(), xa.frame_rate_hz, xv.modality};
}

FeatureSequence align(const FeatureSequence& xv_projected,
                      const std::vector<FeatureSequence>& audio_layers, SmaStack& stack) {
  Tape t(false);
  std::vector<Var> audio;
  for (const auto& a : audio_layers) audio.push_back(t.constant(a.frames));
  Var out = align(t, t.constant(xv_projected.frames), audio, stack);
  return {out.value(), xv_projected.frame_rate_hz, xv_projected.modality};
}

}  // namespace avur
