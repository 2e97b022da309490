#include "avur/vur/scorer.hpp"

#include "avur/vur/rescoring.hpp"

namespace avur {

void attach_lora(Linear& layer, int rank, double alpha, double dropout, Rng& rng) {
  if (rank < 1) throw std::invalid_argument("attach_lora: rank must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("attach_lora: dropout outside [0, 1)");
  LoraAdapter a;
  a.rank = rank;
  a.scaling = alpha / rank;
  a.dropout = dropout;
  a.a = Param(layer.weight.name + ".lora_a", init_uniform(layer.in_dim(), rank, rng).transpose());
  a.b = Param(layer.weight.name + ".lora_b", Matrix::Zero(layer.out_dim(), rank));
  layer.lora = std::move(a);
}

void ScorerConfig::validate() const {
  if (symbols < 1) throw std::invalid_argument("ScorerConfig: symbols must be >= 1");
  if (codebook_size < 2) throw std::invalid_argument("ScorerConfig: codebook_size must be >= 2");
  if (layers < 1) throw std::invalid_argument("ScorerConfig: layers must be >= 1");
  if (lora_rank < 0) throw std::invalid_argument("ScorerConfig: lora_rank must be >= 0");
  if (max_context < 4) throw std::invalid_argument("ScorerConfig: max_context too small");
  AttentionConfig{dim, heads}.validate();
}

Scorer::Scorer(ScorerConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  // Separate streams so the base weights do not depend on the adapter settings.
  Rng base_rng(seed);
  Rng proj_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Rng lora_rng(seed ^ 0xc2b2ae3d27d4eb4fULL);
  const Eigen::Index d = cfg_.dim;
  word_embedding_ = Param("scorer.words",
                          init_normal(static_cast<Eigen::Index>(prompt_vocabulary().size()), d, 1.0, base_rng));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string name = "scorer.block" + std::to_string(l);
    ScorerBlock b;
    b.ln_att = LayerNormParams::init(name + ".ln_att", d);
    b.ln_ff = LayerNormParams::init(name + ".ln_ff", d);
    b.attn = MultiHeadAttention::init(name + ".attn", {d, cfg_.heads}, base_rng);
    b.ff = FeedForward::init(name + ".ff", d, cfg_.ff_dim, base_rng);
    blocks_.push_back(std::move(b));
  }
  final_ln_ = LayerNormParams::init("scorer.final_ln", d);
  lm_head_ = Linear::init("scorer.lm_head", d, cfg_.symbols + 1, base_rng);

  unit_embedding_ = Param("scorer.unit_embedding", init_normal(cfg_.codebook_size, d, 1.0, proj_rng));
  unit_projection_ = Linear::init("scorer.unit_projection", cfg_.unit_feature_dim, d, proj_rng);
  symbol_embedding_ = Param("scorer.symbol_embedding", init_normal(cfg_.symbols, d, 1.0, proj_rng));
  head_ = Linear::init("scorer.head", d, 1, proj_rng);
  head_.weight.value.setZero();

  if (cfg_.lora_rank > 0) {
    for (auto& b : blocks_) {
      for (Linear* proj : {&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.o})
        attach_lora(*proj, cfg_.lora_rank, cfg_.lora_alpha, cfg_.lora_dropout, lora_rng);
    }
  }
  set_requires_grad(base_params(), false);
  set_requires_grad(trainable_params(), true);
}

ParamRefs Scorer::base_params() {
  ParamRefs out{&word_embedding_};
  for (auto& b : blocks_) {
    b.ln_att.collect(out);
    b.ln_ff.collect(out);
    for (Linear* proj : {&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.o}) {
      out.push_back(&proj->weight);
      if (proj->has_bias) out.push_back(&proj->bias);
    }
    b.ff.collect(out);
  }
  final_ln_.collect(out);
  lm_head_.collect(out);
  return out;
}

ParamRefs Scorer::lora_params() {
  ParamRefs out;
  for (auto& b : blocks_) {
    for (Linear* proj : {&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.o}) {
      if (!proj->lora) continue;
      out.push_back(&proj->lora->a);
      out.push_back(&proj->lora->b);
    }
  }
  return out;
}

ParamRefs Scorer::projection_params() {
  ParamRefs out{&unit_embedding_, &symbol_embedding_};
  if (cfg_.use_unit_features) unit_projection_.collect(out);
  head_.collect(out);
  return out;
}

ParamRefs Scorer::trainable_params() {
  ParamRefs out = lora_params();
  for (Param* p : projection_params()) out.push_back(p);
  return out;
}

void Scorer::check_prompt(const Prompt& p) const {
  if (p.candidates.empty()) throw std::invalid_argument("Scorer: no candidates");
  const auto prefix_len =
      static_cast<Eigen::Index>(p.lead_words.size() + p.unit_labels.size()) + 1;
  for (const auto& c : p.candidates) {
    const Eigen::Index total = prefix_len + static_cast<Eigen::Index>(c.size()) + 1;
    if (total > cfg_.max_context)
      throw std::length_error("Scorer: prompt of " + std::to_string(total) + " positions exceeds context " +
                              std::to_string(cfg_.max_context));
    for (int tok : c)
      if (tok < 0 || tok >= cfg_.symbols) throw std::out_of_range("Scorer: candidate token out of range");
  }
  for (int l : p.unit_labels)
    if (l < 0 || l >= cfg_.codebook_size) throw std::out_of_range("Scorer: unit label out of range");
  if (cfg_.use_unit_features && !p.unit_labels.empty() && p.unit_features.cols() != cfg_.unit_feature_dim)
    throw ShapeError("Scorer: unit features " + shape_str(p.unit_features) + " for width " +
                     std::to_string(cfg_.unit_feature_dim));
}

Scorer::Encoded Scorer::encode_prefix(Tape& t, const Prompt& p, const DropoutContext* drop) {
  const Eigen::Index d = cfg_.dim;
  Var words = t.param(word_embedding_);
  std::vector<Var> parts{gather_rows(words, p.lead_words)};
  if (!p.unit_labels.empty()) {
    Var u = gather_rows(t.param(unit_embedding_), p.unit_labels);
    if (cfg_.use_unit_features) u = u + unit_projection_.forward(t, t.constant(p.unit_features));
    parts.push_back(u + t.constant(time_encoding(p.unit_times, d)));
  }
  parts.push_back(gather_rows(words, {p.candidates_word}));
  Var x = vconcat(parts);

  Encoded e;
  e.length = x.rows();
  for (auto& b : blocks_) {
    Var h = b.ln_att.forward(t, x);
    e.memory.push_back(b.attn.project_memory(t, h, h, drop));
    x = x + b.attn.attend(t, h, e.memory.back(), AttentionMask{true, 0}, drop);
    x = x + b.ff.forward(t, b.ln_ff.forward(t, x));
  }
  e.last = final_ln_.forward(t, slice_rows(x, e.length - 1, 1));
  return e;
}

Var Scorer::candidate_states(Tape& t, const Encoded& e, const std::vector<int>& c, const DropoutContext* drop) {
  std::vector<double> times(c.size() + 1);
  for (size_t k = 0; k < times.size(); ++k) times[k] = static_cast<double>(k) + 0.5;
  Var end = gather_rows(t.param(word_embedding_), {prompt_word_id("</c>")});
  Var y = c.empty() ? end : vconcat({gather_rows(t.param(symbol_embedding_), c), end});
  y = y + t.constant(time_encoding(times, cfg_.dim));
  for (size_t l = 0; l < blocks_.size(); ++l) {
    auto& b = blocks_[l];
    Var h = b.ln_att.forward(t, y);
    MultiHeadAttention::Memory own = b.attn.project_memory(t, h, h, drop);
    MultiHeadAttention::Memory mem{vconcat({e.memory[l].keys, own.keys}),
                                   vconcat({e.memory[l].values, own.values})};
    y = y + b.attn.attend(t, h, mem, AttentionMask::causal_from(e.length), drop);
    y = y + b.ff.forward(t, b.ln_ff.forward(t, y));
  }
  return final_ln_.forward(t, y);
}

// Row k predicts token k of the candidate; the last row predicts the end.
Var Scorer::next_token_logits(Tape& t, const Encoded& e, Var states) {
  Var inputs = states.rows() == 1 ? e.last : vconcat({e.last, slice_rows(states, 0, states.rows() - 1)});
  return lm_head_.forward(t, inputs);
}

std::vector<int> Scorer::lm_targets(const std::vector<int>& c) const {
  std::vector<int> targets = c;
  targets.push_back(cfg_.symbols);
  return targets;
}

Var Scorer::score(Tape& t, const Prompt& p, const DropoutContext* drop) {
  check_prompt(p);
  if (counters_) ++counters_->vur_calls;
  Encoded e = encode_prefix(t, p, drop);
  std::vector<Var> scores;
  for (const auto& c : p.candidates) {
    Var states = candidate_states(t, e, c, drop);
    Var loglik = scale(cross_entropy(next_token_logits(t, e, states), lm_targets(c)), -1.0);
    scores.push_back(loglik + head_.forward(t, mean_rows(states)));
  }
  return scores.size() == 1 ? scores.front() : hconcat(scores);
}

Var Scorer::lm_loss(Tape& t, const Prompt& p, size_t i, const DropoutContext* drop) {
  check_prompt(p);
  if (i >= p.candidates.size()) throw std::out_of_range("Scorer::lm_loss: candidate index outside list");
  Encoded e = encode_prefix(t, p, drop);
  Var states = candidate_states(t, e, p.candidates[i], drop);
  return cross_entropy(next_token_logits(t, e, states), lm_targets(p.candidates[i]));
}

std::vector<double> Scorer::score_candidates(const Prompt& p) {
  Tape t(false);
  Var s = score(t, p);
  const Matrix& v = s.value();
  return std::vector<double>(v.data(), v.data() + v.size());
}

TrainResult pretrain_scorer(Scorer& scorer, const std::vector<ScorerPretrainExample>& examples,
                            const ScorerTrainConfig& cfg) {
  if (examples.empty()) throw std::invalid_argument("pretrain_scorer: no examples");
  if (cfg.batch < 1) throw std::invalid_argument("pretrain_scorer: batch must be >= 1");
  std::vector<Prompt> prompts;
  prompts.reserve(examples.size());
  for (const auto& ex : examples) {
    NBestList nb;
    nb.candidates.push_back({ex.tokens, 0.0, 0.0, false});
    prompts.push_back(build_prompt(*ex.units, nb));
  }
  ParamRefs params = scorer.base_params();
  for (Param* p : scorer.projection_params())
    if (p->name.rfind("scorer.head", 0) != 0) params.push_back(p);
  set_requires_grad(scorer.lora_params(), false);
  set_requires_grad(scorer.projection_params(), false);
  set_requires_grad(params, true);
  AdamWConfig oc = cfg.optim;
  oc.total_steps = cfg.steps;
  AdamW opt(params, oc);
  opt.zero_grad();
  Rng rng(cfg.seed);
  std::uniform_int_distribution<size_t> pick(0, examples.size() - 1);
  TrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      Tape t;
      Var loss = scorer.lm_loss(t, prompts[pick(rng)], 0);
      batch_loss += loss.scalar();
      t.backward(scale(loss, 1.0 / cfg.batch));
    }
    batch_loss /= cfg.batch;
    if (!std::isfinite(batch_loss))
      throw TrainingDiverged("scorer pretraining loss became non-finite at step " + std::to_string(step));
    result.loss_curve.push_back(batch_loss);
    opt.step();
  }
  set_requires_grad(scorer.base_params(), false);
  set_requires_grad(scorer.trainable_params(), true);
  return result;
}

TrainResult train_scorer(Scorer& scorer, const std::vector<ScorerExample>& examples,
                         const ScorerTrainConfig& cfg) {
  if (examples.empty()) throw std::invalid_argument("train_scorer: no examples");
  if (cfg.batch < 1) throw std::invalid_argument("train_scorer: batch must be >= 1");
  std::vector<Prompt> prompts;
  prompts.reserve(examples.size());
  for (const auto& ex : examples) {
    ex.nbest.validate(2);
    prompts.push_back(build_prompt(*ex.units, ex.nbest));
  }
  AdamWConfig oc = cfg.optim;
  oc.total_steps = cfg.steps;
  ParamRefs trainable = scorer.trainable_params();
  AdamW opt(trainable, oc);
  opt.zero_grad();
  Rng rng(cfg.seed);
  DropoutContext drop{&rng};
  std::uniform_int_distribution<size_t> pick(0, examples.size() - 1);
  TrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const size_t i = pick(rng);
      Tape t;
      Var loss = listwise_loss(scorer.score(t, prompts[i], &drop), examples[i].oracle);
      batch_loss += loss.scalar();
      t.backward(scale(loss, 1.0 / cfg.batch));
    }
    batch_loss /= cfg.batch;
    if (!std::isfinite(batch_loss))
      throw TrainingDiverged("scorer loss became non-finite at step " + std::to_string(step));
    result.loss_curve.push_back(batch_loss);
    opt.step();
  }
  return result;
}

}  // namespace avur
