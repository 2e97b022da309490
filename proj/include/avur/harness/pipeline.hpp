#pragma once

#include "avur/amf/training.hpp"
#include "avur/harness/noise.hpp"
#include "avur/harness/task.hpp"
#include "avur/vur/scorer.hpp"

#include <map>

namespace avur {

struct ExperimentConfig {
  ToyTaskConfig task;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> snrs{kCleanSnr, 10, 5, 0, -5, -10};        // evaluated conditions
  std::vector<double> train_snrs{kCleanSnr, 10, 5, 0, -5, -10};  // multi-condition training
  NoiseKind noise = NoiseKind::babble;

  // decoder and fusion
  Eigen::Index model_dim = 32;
  int heads = 4;
  int decoder_layers = 2;
  Eigen::Index ff_dim = 64;
  std::vector<int> sma_layers;  // empty = top 3
  bool use_sma = true;
  bool use_amf = true;
  bool use_vur = true;
  int nbest = 5;
  int beam = 8;

  // optimisation
  int pretrain_steps = 1500;
  int stage1_steps = 1000;
  int batch = 8;
  double lr = 3e-3;

  // visual units and scorer
  int codebook_k = 16;
  int unit_layer = 2;
  int kmeans_iters = 100;
  int scorer_pretrain_utts = 2000;
  int scorer_pretrain_steps = 1500;
  double scorer_pretrain_lr = 3e-3;
  int scorer_steps = 600;
  int scorer_batch = 8;
  double scorer_lr = 2e-3;
  int lora_rank = 4;
  double lora_alpha = 8.0;
  int scorer_train_utts = 500;
  double lambda = -1.0;  // < 0: pick from lambda_grid on the dev split
  std::vector<double> lambda_grid{0.0, 0.25, 0.5, 0.75, 1.0};

  double ablation_snr = 0;
  std::vector<int> sweep_layers{1, 2, 3, 4};
  std::vector<int> sweep_k{8, 16, 32};

  std::string out_dir;  // N-best, codebook and report files; empty writes nothing
  int threads = 1;      // seeds run concurrently up to this many

  void validate() const;
  AvsrConfig model_config(bool sma, bool amf) const;
};

struct ReportRow {
  std::string condition;
  std::string modality;
  std::string stage;
  double wer = 0.0;
  std::uint64_t seed = 0;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;

  static constexpr const char* kHeader = "condition,modality,stage,wer,seed";
  std::string to_csv() const;
  void write_csv(const std::string& path) const;
  static ExperimentReport read_csv(const std::string& path);
  // Mean over seeds of the rows matching (condition, stage); throws if none.
  double mean_wer(const std::string& condition, const std::string& stage) const;
};

// Everything derived from one seed before any model is trained.
struct SeedData {
  std::uint64_t seed = 0;
  ToyTaskConfig task;
  std::unique_ptr<TaskEncoders> encoders;
  Dataset data;
  std::vector<FeatureSequence> babble_pool;
  std::map<std::string, std::vector<Matrix>> visual_layers;  // utterance id -> layers 0..depth
  std::vector<EncodedSample> train;                           // train split x train_snrs
  std::map<std::string, const Utterance*> by_id;

  const Utterance& utterance(const std::string& id) const;
};

SeedData prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed);

// Frozen encoder outputs for one utterance under one condition.
EncodedSample encode_utterance(const ExperimentConfig& cfg, const SeedData& sd, const Utterance& u,
                               double snr_db, std::uint64_t noise_seed);

using ConditionLists = std::map<std::string, std::vector<NBestList>>;  // condition name -> lists

struct Stage1Lists {
  ConditionLists test, dev;
  std::vector<NBestList> scorer_train;  // train utterances under fresh noise
};

struct Stage1Result {
  std::shared_ptr<AvsrModel> model;
  TrainResult curve;
  Stage1Lists lists;
};

// Audio-only pretraining of the shared base decoder.
std::shared_ptr<AvsrModel> pretrain_base_model(const ExperimentConfig& cfg, SeedData& sd);

// Trains the fusion path of a copy of base (when amf is on) and decodes the
// dev and test splits under every condition plus the scorer's training lists.
Stage1Result run_stage1(const ExperimentConfig& cfg, SeedData& sd, const AvsrModel& base, bool sma, bool amf);

struct Stage2Result {
  Codebook codebook;
  TrainResult pretrain_curve;
  TrainResult curve;
  double lambda = 0.0;
  ConditionLists test;  // rescored
};

// Fits the codebook on train-split visual features at unit_layer, pretrains the
// scorer as a language model on train references, fine-tunes it on the
// stage-1 training lists and rescores the test lists.
Stage2Result run_stage2(const ExperimentConfig& cfg, SeedData& sd, const Stage1Lists& lists,
                        InstrumentationCounters* counters = nullptr);

// Pooled WER of each list's top candidate against the utterance reference.
double corpus_wer(const std::vector<NBestList>& lists, const SeedData& sd);
double corpus_oracle_wer(const std::vector<NBestList>& lists, const SeedData& sd);

// N-best files of one system: <dir>/{test,dev}_<condition>.nbest and
// <dir>/scorer_train.nbest.
void write_stage1_lists(const std::string& dir, const Stage1Lists& lists);
Stage1Lists read_stage1_lists(const std::string& dir, const std::vector<double>& snrs);

// <dir>/codebook.{bin,txt} and <dir>/rescored_test_<condition>.nbest.
void write_stage2_outputs(const std::string& dir, const Stage2Result& s2);

enum class Arm { audio_only, full, wo_vur, sma_only, amf_vur };
const char* to_string(Arm a);
Arm parse_arm(const std::string& s);

struct ArmCounters {
  std::uint64_t seed = 0;
  Arm arm = Arm::full;
  long sma_calls = 0, amf_calls = 0, vur_calls = 0;
};

struct ArmsOutcome {
  ExperimentReport report;
  std::vector<ArmCounters> counters;
};

// One row per (arm, condition, seed), stage column holding the arm name.
ArmsOutcome run_arms(const ExperimentConfig& cfg, const std::vector<Arm>& arms, const std::vector<double>& snrs);

// {full, w/o VUR, SMA-only, AMF+VUR} on clean and ablation_snr.
ArmsOutcome run_ablation(const ExperimentConfig& cfg);

// Stage-2 WER over unit_layer x codebook_k on clean and 0 dB; the stage-1
// system is trained once per seed and shared across grid points.
ExperimentReport run_sweep(const ExperimentConfig& cfg);

// Deterministic per-purpose seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace avur
