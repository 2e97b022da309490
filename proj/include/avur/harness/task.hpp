#pragma once

#include "avur/encoders/encoders.hpp"

namespace avur {

struct ToyTaskConfig {
  int vocab = 20;
  int visemes = 8;
  std::vector<int> viseme_map;  // symbol -> viseme; empty means symbol % visemes
  int min_len = 5;
  int max_len = 12;
  int train_size = 500;
  int dev_size = 50;
  int test_size = 100;
  std::uint64_t seed = 1;
  double audio_jitter = 0.1;
  double visual_jitter = 0.1;
  Eigen::Index audio_dim = 32;
  Eigen::Index visual_dim = 24;
  int encoder_depth = 4;

  void validate() const;
  int viseme_of(int symbol) const;
  std::vector<int> visemes_of(const std::vector<int>& tokens) const;
};

struct Utterance {
  std::string id;
  std::vector<int> tokens;  // also the reference transcript
  FeatureSequence audio;    // raw, before the encoder
  FeatureSequence visual;   // raw, one frame per symbol
};

struct Dataset {
  std::vector<Utterance> train, dev, test;
};

// The frozen pretrained front ends. Their embedding tables also generate the
// raw feature streams, so a task and its encoders come from one config.
struct TaskEncoders {
  ToyEncoder audio;
  ToyEncoder visual;
};

TaskEncoders make_encoders(const ToyTaskConfig& cfg);

// Raw streams for one token sequence. Jitter draws depend only on the seed and
// the sequence length, so symbols sharing a viseme give identical visual streams.
FeatureSequence make_audio(const ToyTaskConfig& cfg, const ToyEncoder& enc, const std::vector<int>& tokens,
                           std::uint64_t seed);
FeatureSequence make_visual(const ToyTaskConfig& cfg, const ToyEncoder& enc, const std::vector<int>& tokens,
                            std::uint64_t seed);

Dataset gen_dataset(const ToyTaskConfig& cfg);
Dataset gen_dataset(const ToyTaskConfig& cfg, const TaskEncoders& enc);
// n more utterances from the same generator, drawn from their own seed.
std::vector<Utterance> gen_utterances(const ToyTaskConfig& cfg, const TaskEncoders& enc, int n,
                                      const std::string& prefix, std::uint64_t seed);

}  // namespace avur
