#include "avur/amf/training.hpp"

#include <numeric>

namespace avur {

double TrainResult::final_loss() const { return loss_curve.empty() ? 0.0 : loss_curve.back(); }

double TrainResult::moving_average(size_t window, size_t end) const {
  end = std::min(end, loss_curve.size());
  const size_t begin = end > window ? end - window : 0;
  if (end == begin) return 0.0;
  return std::accumulate(loss_curve.begin() + static_cast<std::ptrdiff_t>(begin),
                         loss_curve.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
         static_cast<double>(end - begin);
}

DecoderContext prepare_sample(AvsrModel& model, Tape& t, const EncodedSample& s, bool use_visual) {
  std::vector<Var> audio;
  audio.reserve(s.audio_layers.size());
  for (const auto& m : s.audio_layers) audio.push_back(t.constant(m));
  std::optional<Var> xv;
  if (use_visual && s.visual.size() > 0) xv = t.constant(s.visual);
  return model.prepare(t, audio, xv);
}

TrainResult train_decoder(AvsrModel& model, const std::vector<EncodedSample>& samples,
                          const TrainConfig& cfg, const ParamRefs& trainable) {
  if (samples.empty()) throw std::invalid_argument("train_decoder: no samples");
  if (cfg.batch < 1) throw std::invalid_argument("train_decoder: batch must be >= 1");
  AdamWConfig oc = cfg.optim;
  oc.total_steps = cfg.steps;
  AdamW opt(trainable, oc);
  opt.zero_grad();
  Rng rng(cfg.seed);
  std::uniform_int_distribution<size_t> pick(0, samples.size() - 1);
  TrainResult result;
  double first = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const EncodedSample& s = samples[pick(rng)];
      Tape t;
      DecoderContext ctx = prepare_sample(model, t, s, cfg.use_visual);
      Var loss = model.teacher_forced_loss(t, ctx, s.tokens);
      batch_loss += loss.scalar();
      t.backward(scale(loss, 1.0 / cfg.batch));
    }
    batch_loss /= cfg.batch;
    if (!std::isfinite(batch_loss))
      throw TrainingDiverged("training loss became non-finite at step " + std::to_string(step));
    if (step == 0) first = batch_loss;
    if (batch_loss > cfg.divergence_factor * first)
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": loss " +
                             std::to_string(batch_loss) + " > " + std::to_string(cfg.divergence_factor) +
                             " x initial " + std::to_string(first));
    result.loss_curve.push_back(batch_loss);
    opt.step();
  }
  return result;
}

TrainResult pretrain_base(AvsrModel& model, const std::vector<EncodedSample>& samples, TrainConfig cfg) {
  cfg.use_visual = false;
  ParamRefs base = model.base_params();
  set_requires_grad(model.all_params(), false);
  set_requires_grad(base, true);
  TrainResult r = train_decoder(model, samples, cfg, base);
  set_requires_grad(base, false);
  model.init_probe_from_decoder();
  return r;
}

TrainResult train_stage1(AvsrModel& model, const std::vector<EncodedSample>& samples, TrainConfig cfg) {
  cfg.use_visual = true;
  set_requires_grad(model.all_params(), false);
  if (!model.config().use_amf) return {};
  ParamRefs fusion = model.fusion_params();
  set_requires_grad(fusion, true);
  TrainResult r = train_decoder(model, samples, cfg, fusion);
  set_requires_grad(fusion, false);
  return r;
}

}  // namespace avur
