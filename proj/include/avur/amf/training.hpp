#pragma once

#include "avur/amf/decoder.hpp"
#include "avur/numerics/optim.hpp"

#include <stdexcept>

namespace avur {

// Frozen-encoder outputs for one utterance, computed once and reused.
struct EncodedSample {
  std::string id;
  std::vector<int> tokens;
  std::vector<Matrix> audio_layers;  // encoder layers 0..depth
  Matrix visual;                     // visual encoder output, T_v x D_v
};

struct TrainConfig {
  AdamWConfig optim;
  int steps = 2000;
  int batch = 8;
  std::uint64_t seed = 1;
  double divergence_factor = 10.0;
  bool use_visual = true;
};

struct TrainResult {
  std::vector<double> loss_curve;  // mean batch CE per step
  double final_loss() const;
  double moving_average(size_t window, size_t end) const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binds the sample's frames as tape constants and prepares decoder context.
DecoderContext prepare_sample(AvsrModel& model, Tape& t, const EncodedSample& s, bool use_visual);

// Mini-batch AdamW on mean teacher-forced CE, updating only `trainable`.
// Throws TrainingDiverged when a batch loss exceeds divergence_factor x the
// first batch loss.
TrainResult train_decoder(AvsrModel& model, const std::vector<EncodedSample>& samples,
                          const TrainConfig& cfg, const ParamRefs& trainable);

// Audio-only training of the base decoder (no fusion path).
TrainResult pretrain_base(AvsrModel& model, const std::vector<EncodedSample>& samples, TrainConfig cfg);

// Base decoder frozen; projector, SMA and AMF trained with visual input.
// A model with AMF disabled has no route from the fusion parameters to the
// loss, so there is nothing to train and an empty curve is returned.
TrainResult train_stage1(AvsrModel& model, const std::vector<EncodedSample>& samples, TrainConfig cfg);

}  // namespace avur
