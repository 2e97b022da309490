#pragma once

#include "avur/amf/decoder.hpp"
#include "avur/amf/training.hpp"
#include "avur/vur/prompt.hpp"

namespace avur {

// Attaches a rank-r adapter (A random, B zero) to a frozen linear layer.
void attach_lora(Linear& layer, int rank, double alpha, double dropout, Rng& rng);

struct ScorerConfig {
  int symbols = 20;  // candidate token alphabet
  int codebook_size = 16;
  Eigen::Index unit_feature_dim = 24;
  Eigen::Index dim = 32;
  Eigen::Index heads = 4;
  int layers = 2;
  Eigen::Index ff_dim = 64;
  int max_context = 128;
  int lora_rank = 4;  // 0 leaves the base model unadapted
  double lora_alpha = 8.0;
  double lora_dropout = 0.05;
  bool use_unit_features = true;

  void validate() const;
};

struct ScorerBlock {
  LayerNormParams ln_att, ln_ff;
  MultiHeadAttention attn;
  FeedForward ff;
};

// Small causal transformer standing in for the language model. The prompt
// prefix (instruction words, visual units, candidates marker) is run once;
// each candidate is then appended to that prefix on its own, so candidates
// never see each other. A candidate's score is its mean token log-likelihood
// under the language-model head plus a learned readout of its mean final
// hidden state (zero at initialisation).
class Scorer {
 public:
  Scorer(ScorerConfig cfg, std::uint64_t seed);

  Var score(Tape& t, const Prompt& p, const DropoutContext* drop = nullptr);
  // Mean next-token cross-entropy of candidate i (end marker included).
  Var lm_loss(Tape& t, const Prompt& p, size_t i, const DropoutContext* drop = nullptr);
  std::vector<double> score_candidates(const Prompt& p);

  const ScorerConfig& config() const { return cfg_; }
  ParamRefs base_params();        // frozen after pretraining
  ParamRefs lora_params();
  ParamRefs projection_params();  // unit label / feature / candidate embeddings, score head
  ParamRefs trainable_params();
  void set_counters(InstrumentationCounters* c) { counters_ = c; }

 private:
  ScorerConfig cfg_;
  Param word_embedding_;
  std::vector<ScorerBlock> blocks_;
  LayerNormParams final_ln_;
  Param unit_embedding_;    // K x D
  Linear unit_projection_;  // D_v -> D
  Param symbol_embedding_;  // (symbols + 1) x D, last row unused
  Linear head_;             // D -> 1
  Linear lm_head_;           // D -> symbols + 1 (end)
  InstrumentationCounters* counters_ = nullptr;

  struct Encoded {
    std::vector<MultiHeadAttention::Memory> memory;  // per block
    Var last;                                         // final hidden state of the last prefix position
    Eigen::Index length = 0;
  };
  void check_prompt(const Prompt& p) const;
  Encoded encode_prefix(Tape& t, const Prompt& p, const DropoutContext* drop);
  Var candidate_states(Tape& t, const Encoded& e, const std::vector<int>& c, const DropoutContext* drop);
  Var next_token_logits(Tape& t, const Encoded& e, Var states);
  std::vector<int> lm_targets(const std::vector<int>& c) const;
};

struct ScorerExample {
  std::shared_ptr<const VisualUnitSequence> units;
  NBestList nbest;
  int oracle = 0;
};

struct ScorerTrainConfig {
  AdamWConfig optim;
  int steps = 600;
  int batch = 8;
  std::uint64_t seed = 1;
};

// Causal language-model training of the base and embeddings on reference
// transcripts prompted with their own visual units. Leaves the base frozen.
struct ScorerPretrainExample {
  std::shared_ptr<const VisualUnitSequence> units;
  std::vector<int> tokens;
};
TrainResult pretrain_scorer(Scorer& scorer, const std::vector<ScorerPretrainExample>& examples,
                            const ScorerTrainConfig& cfg);

// List-wise softmax training of the adapter and projections; base stays frozen.
TrainResult train_scorer(Scorer& scorer, const std::vector<ScorerExample>& examples,
                         const ScorerTrainConfig& cfg);

}  // namespace avur
