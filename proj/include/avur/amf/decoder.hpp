#pragma once

#include "avur/sma/alignment.hpp"

#include <atomic>
#include <memory>
#include <optional>

namespace avur {

struct DecoderConfig {
  int symbols = 20;  // transcript alphabet; BOS and EOS are appended after it
  Eigen::Index dim = 32;
  int heads = 4;
  int layers = 2;
  Eigen::Index ff_dim = 64;
  int max_len = 16;  // max decoder positions, BOS included

  int bos() const { return symbols; }
  int eos() const { return symbols + 1; }
  int vocab() const { return symbols + 2; }
  AttentionConfig attention() const { return {dim, heads}; }
};

// Pre-LN transformer decoder: causal self-attention, audio cross-attention, FF.
struct DecoderLayer {
  LayerNormParams ln_self, ln_cross, ln_ff;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ff;
};

struct BaseDecoder {
  DecoderConfig cfg;
  Param token_embedding;  // vocab x dim
  std::vector<DecoderLayer> layers;
  LayerNormParams final_ln;
  Linear out;

  static BaseDecoder init(const DecoderConfig& cfg, Rng& rng);
  void collect(ParamRefs& out);
};

// One fusion block inserted before a base decoder layer.
struct AmfLayer {
  Eigen::Index dim = 0;
  Param probe_wq, probe_wk;  // D x D
  Param gate_slope;          // a, 1x1
  Param gate_offset;         // b, 1x1
  Param dir_att, dir_ff;     // 1x1, zero at init
  MultiHeadAttention visual_xattn;
  FeedForward ffw;
  LayerNormParams ln_att, ln_ff;

  static AmfLayer init(const std::string& name, AttentionConfig att, Eigen::Index ff_dim, Rng& rng);
  void collect(ParamRefs& out);
  void collect_probe(ParamRefs& out);
};

// Per-layer values recorded while running amf_layer.
struct AmfTrace {
  Matrix uncertainty;  // T_y x 1, S in [0,1]
  Matrix amplitude;    // T_y x 1, sigmoid(a S + b)
  double dir_att = 0.0;
  double dir_ff = 0.0;
};

// Probe scores (sg(q) W_Q)(sg(xa) W_K)^T / sqrt(D), before the softmax.
Var probe_logits(Tape& t, Var q, Var probe_keys, AmfLayer& layer);
Var probe_keys(Tape& t, Var xa, AmfLayer& layer);
// Row-stochastic probe attention over audio frames (T_y x T).
Var probe_attention(Tape& t, Var q, Var xa, AmfLayer& layer);

double uncertainty(std::span<const double> attention_row);
double amplitude_gate(double s, double slope, double offset);

// x' = x + tanh(dir_att) g c,  y = x' + tanh(dir_ff) g FFW(LN(x')),
// c = MHA(LN(x), xv_hat, xv_hat), g = sigmoid(a S + b) per token.
Var amf_layer(Tape& t, Var x, Var xa, Var xv_hat, AmfLayer& layer, AmfTrace* trace = nullptr);

struct InstrumentationCounters {
  std::atomic<long> sma_calls{0};
  std::atomic<long> amf_calls{0};
  std::atomic<long> vur_calls{0};
};

struct AvsrConfig {
  DecoderConfig decoder;
  SmaConfig sma;
  Eigen::Index visual_dim = 24;
  int encoder_depth = 4;
  int audio_memory_layer = -1;  // encoder layer fed to the decoder and probe; -1 = final
  bool use_sma = true;
  bool use_amf = true;
  bool train_probe = true;
};

// Self-attention keys/values of the positions decoded so far, per layer.
struct DecoderState {
  std::vector<Matrix> keys, values;
  int positions = 0;
};

// Everything a decoding pass needs from the encoders, projected once.
struct DecoderContext {
  Var audio;  // memory frames T_a x D
  std::vector<MultiHeadAttention::Memory> audio_kv;
  bool has_visual = false;
  Var visual;  // X̂_v, T_a x D
  std::vector<Var> probe_keys;
  std::vector<MultiHeadAttention::Memory> visual_kv;
};

class AvsrModel {
 public:
  AvsrModel(AvsrConfig cfg, std::uint64_t seed);

  const AvsrConfig& config() const { return cfg_; }
  AvsrConfig& mutable_config() { return cfg_; }
  const DecoderConfig& decoder_config() const { return cfg_.decoder; }
  int audio_memory_layer() const;

  // X̂_v from raw visual encoder output (T_v x D_v) and audio layer outputs.
  Var visual_features(Tape& t, Var xv, const std::vector<Var>& audio_layers);

  DecoderContext prepare(Tape& t, const std::vector<Var>& audio_layers, std::optional<Var> xv);

  // Logits for every prefix position (T_y x vocab). prefix starts with BOS.
  Var logits(Tape& t, const DecoderContext& ctx, const std::vector<int>& prefix,
             std::vector<AmfTrace>* traces = nullptr);

  // Feeds one more token and returns the next-token logits (1 x vocab). Matches
  // the last row of logits() over the whole prefix up to rounding.
  RowVector step(Tape& t, const DecoderContext& ctx, DecoderState& state, int token);

  // Mean teacher-forced token cross-entropy of tokens + EOS.
  Var teacher_forced_loss(Tape& t, const DecoderContext& ctx, const std::vector<int>& tokens);

  ParamRefs base_params();
  ParamRefs fusion_params();  // projector + SMA + AMF (what stage 1 trains)
  ParamRefs all_params();

  // Copies the base decoder's audio cross-attention query/key weights into the
  // probe projections of the matching AMF layer.
  void init_probe_from_decoder();

  BaseDecoder& decoder() { return decoder_; }
  SmaStack& sma() { return sma_; }
  std::vector<AmfLayer>& amf() { return amf_; }
  Linear& projector() { return projector_; }
  InstrumentationCounters& counters() const { return *counters_; }
  // Copies share counters; give a copy its own.
  void reset_counters() { counters_ = std::make_shared<InstrumentationCounters>(); }

 private:
  AvsrConfig cfg_;
  BaseDecoder decoder_;
  Linear projector_;
  SmaStack sma_;
  std::vector<AmfLayer> amf_;
  std::shared_ptr<InstrumentationCounters> counters_;
};

// Next-token distribution after prefix (sums to 1).
RowVector decode_step(AvsrModel& model, Tape& t, const DecoderContext& ctx,
                      const std::vector<int>& prefix);

}  // namespace avur
