#pragma once

#include "avur/numerics/layers.hpp"

#include <span>
#include <vector>

namespace avur {

enum class Modality { audio, visual };

const char* to_string(Modality m);

// Time-major frames (T x D) plus the rate they were sampled at.
struct FeatureSequence {
  Matrix frames;
  double frame_rate_hz = 1.0;
  Modality modality = Modality::audio;

  Eigen::Index length() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
  void validate() const;
};

struct ToyEncoderConfig {
  Modality modality = Modality::audio;
  int vocab = 20;                 // input symbols (visemes for the visual encoder)
  Eigen::Index dim = 32;
  int depth = 4;
  int heads = 4;
  Eigen::Index ff_dim = 64;
  int frames_per_token = 4;
  double token_rate_hz = 12.5;    // frame rate = token_rate_hz * frames_per_token
  double residual_scale = 0.5;
  double embedding_scale = 1.0;
  double position_scale = 1.0;
  std::uint64_t seed = 1;
};

// Sinusoidal code for a time measured in token units; shared by both encoders
// and the decoder so positions line up across streams.
Matrix time_encoding(std::span<const double> times, Eigen::Index dim);

// Frozen random-weight transformer stack standing in for a pretrained encoder.
// Layer l output (1-based) is the residual stream after block l; layer 0 is the
// positionally-encoded input.
class ToyEncoder {
 public:
  explicit ToyEncoder(ToyEncoderConfig cfg);

  const ToyEncoderConfig& config() const { return cfg_; }
  double frame_rate_hz() const { return cfg_.token_rate_hz * cfg_.frames_per_token; }

  // Raw feature stream: each token's embedding repeated frames_per_token times.
  FeatureSequence embed(std::span<const int> tokens) const;

  // Outputs for layers 0..depth given raw features (noise already mixed in).
  std::vector<FeatureSequence> forward_layers(const FeatureSequence& raw) const;

  // Same computation on a tape so gradients can be traced to encoder params.
  std::vector<Var> forward_layers(Tape& t, Var raw);
  // Embedding lookup + noise + layers, all on the tape (embedding table included).
  std::vector<Var> encode_layers(Tape& t, std::span<const int> tokens, const Matrix& noise);

  // layer-th activation of embed(tokens) + noise; noise may be empty (0 x 0).
  FeatureSequence encode(std::span<const int> tokens, const Matrix& noise, int layer) const;

  bool frozen() const { return frozen_; }
  void set_frozen(bool f);
  ParamRefs params();
  const Matrix& embedding_table() const { return embedding_.value; }

 private:
  struct Block {
    LayerNormParams ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ff;
  };

  Matrix positions(Eigen::Index frames) const;
  std::vector<Var> run_blocks(Tape& t, Var raw) const;

  ToyEncoderConfig cfg_;
  Param embedding_;
  // Binding a Param on a tape needs a mutable reference, even for a value-only pass.
  mutable std::vector<Block> blocks_;
  bool frozen_ = true;
};

// Linear interpolation along time with aligned endpoints: output frame i sits
// at input position i * (T_in - 1) / (T_out - 1).
Matrix resample_weights(Eigen::Index source_len, Eigen::Index target_len);
FeatureSequence resample_to(const FeatureSequence& x, Eigen::Index target_len);
Var resample_to(Tape& t, Var x, Eigen::Index target_len);

// X W_v + b_v per frame.
FeatureSequence project(const FeatureSequence& x, const Matrix& w, const RowVector& b);
Var project(Tape& t, Var x, Linear& projector);

}  // namespace avur
