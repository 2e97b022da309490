#pragma once

#include "avur/encoders/encoders.hpp"

namespace avur {

// Visual stream refinement against audio context:
//   sa  = MHA(x, x, x)
//   out = x + tanh(gate) * MHA(sa, sg(audio), sg(audio))
// The gate starts at zero so a fresh block is the identity.
struct AlignmentBlock {
  AttentionConfig cfg;
  MultiHeadAttention self_attn;
  MultiHeadAttention cross_attn;
  Param out_gate;  // 1x1

  static AlignmentBlock init(const std::string& name, AttentionConfig cfg, Rng& rng);
  void collect(ParamRefs& out);
};

inline constexpr int kSmaBlocks = 3;

struct SmaConfig {
  std::vector<int> insertion_layers;  // 1-based encoder layers; empty = top kSmaBlocks
  bool per_layer_audio = true;        // false: every block reads the final encoder layer
};

struct SmaStack {
  std::vector<AlignmentBlock> blocks;
  std::vector<int> insertion_layers;
  bool per_layer_audio = true;
  int encoder_depth = 0;

  static SmaStack init(const SmaConfig& cfg, int encoder_depth, AttentionConfig att, Rng& rng);
  // Exactly kSmaBlocks blocks, strictly increasing layers in the upper half
  // (>= ceil(depth/2)) of the encoder.
  void validate() const;
  int audio_layer_for(size_t block) const;
  void collect(ParamRefs& out);
};

Var align_block(Tape& t, Var xv, Var xa, AlignmentBlock& block);

// audio_layers[l] is the encoder's layer-l activation (index 0 = input layer).
Var align(Tape& t, Var xv_projected, const std::vector<Var>& audio_layers, SmaStack& stack);

FeatureSequence align_block(const FeatureSequence& xv, const FeatureSequence& xa, AlignmentBlock& block);
FeatureSequence align(const FeatureSequence& xv_projected,
                      const std::vector<FeatureSequence>& audio_layers, SmaStack& stack);

}  // namespace avur
