#pragma once

#include "avur/amf/beam_search.hpp"
#include "avur/amf/decoder.hpp"
#include "avur/numerics/optim.hpp"
#include "avur/vur/rescoring.hpp"
#include "avur/vur/scorer.hpp"

#include <algorithm>
#include <cstring>

namespace avur::testing {

// Central-difference step: rounding noise dominates below it on gradients of
// order 1e-7, truncation error stays near 1e-8 at it.
inline constexpr double kFdStep = 1e-4;

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double sd = 1.0) {
  return init_normal(r, c, sd, rng);
}

// sum(out .* weights) so every output element carries a distinct gradient
inline Var project_to_scalar(Tape& t, Var out, const Matrix& weights) {
  return sum(hadamard(out, t.constant(weights)));
}

inline void enable_all(const ParamRefs& ps) { set_requires_grad(ps, true); }

inline void perturb(Param& p, Rng& rng, double sd) { p.value = random_matrix(p.rows(), p.cols(), rng, sd); }

inline GradCheckResult check_sma_block(std::uint64_t seed) {
  Rng rng(seed);
  AlignmentBlock block = AlignmentBlock::init("sma", {8, 2}, rng);
  perturb(block.out_gate, rng, 1.0);
  const Matrix xv = random_matrix(5, 8, rng), xa = random_matrix(5, 8, rng), w = random_matrix(5, 8, rng);
  ParamRefs ps;
  block.collect(ps);
  enable_all(ps);
  return check_gradients(
      [&](Tape& t) { return project_to_scalar(t, align_block(t, t.constant(xv), t.constant(xa), block), w); }, ps,
      kFdStep);
}

inline GradCheckResult check_amf_layer(std::uint64_t seed) {
  Rng rng(seed);
  AmfLayer layer = AmfLayer::init("amf", {8, 2}, 16, rng);
  perturb(layer.dir_att, rng, 1.0);
  perturb(layer.dir_ff, rng, 1.0);
  perturb(layer.gate_slope, rng, 1.0);
  perturb(layer.gate_offset, rng, 1.0);
  const Matrix x = random_matrix(4, 8, rng), xa = random_matrix(6, 8, rng), xv = random_matrix(6, 8, rng);
  const Matrix w = random_matrix(4, 8, rng);
  ParamRefs ps;
  layer.collect(ps);
  enable_all(ps);
  return check_gradients(
      [&](Tape& t) {
        return project_to_scalar(t, amf_layer(t, t.constant(x), t.constant(xa), t.constant(xv), layer), w);
      },
      ps, kFdStep);
}

inline AvsrConfig small_avsr_config() {
  AvsrConfig c;
  c.decoder.symbols = 5;
  c.decoder.dim = 8;
  c.decoder.heads = 2;
  c.decoder.layers = 1;
  c.decoder.ff_dim = 12;
  c.decoder.max_len = 8;
  c.visual_dim = 6;
  c.encoder_depth = 4;
  return c;
}

// Whole fused decoder (base, projector, SMA, AMF) under teacher forcing.
inline GradCheckResult check_decoder(std::uint64_t seed) {
  AvsrModel model(small_avsr_config(), seed);
  Rng rng(seed + 1000);
  for (auto& b : model.sma().blocks) perturb(b.out_gate, rng, 1.0);
  for (auto& l : model.amf()) {
    perturb(l.dir_att, rng, 1.0);
    perturb(l.dir_ff, rng, 1.0);
  }
  std::vector<Matrix> audio;
  for (int l = 0; l <= 4; ++l) audio.push_back(random_matrix(6, 8, rng));
  const Matrix visual = random_matrix(3, 6, rng);
  std::vector<int> tokens;
  for (int i = 0; i < 3; ++i) tokens.push_back(static_cast<int>(rng() % 5));
  ParamRefs ps = model.all_params();
  enable_all(ps);
  return check_gradients(
      [&](Tape& t) {
        std::vector<Var> layers;
        for (const auto& m : audio) layers.push_back(t.constant(m));
        DecoderContext ctx = model.prepare(t, layers, t.constant(visual));
        return model.teacher_forced_loss(t, ctx, tokens);
      },
      ps, kFdStep);
}

inline ScorerConfig small_scorer_config() {
  ScorerConfig c;
  c.symbols = 5;
  c.codebook_size = 4;
  c.unit_feature_dim = 3;
  c.dim = 8;
  c.heads = 2;
  c.layers = 1;
  c.ff_dim = 12;
  c.lora_rank = 2;
  c.lora_alpha = 4.0;
  return c;
}

inline VisualUnitSequence random_units(Rng& rng, int count, int codebook, Eigen::Index dim) {
  VisualUnitSequence u;
  for (int i = 0; i < count; ++i)
    u.units.push_back({static_cast<int>(rng() % static_cast<unsigned>(codebook)), random_matrix(1, dim, rng),
                       1 + static_cast<int>(rng() % 3)});
  return u;
}

inline NBestList random_nbest(Rng& rng, int n, int symbols, int min_len, int max_len) {
  NBestList nb;
  nb.utterance_id = "u";
  for (int i = 0; i < n; ++i) {
    Hypothesis h;
    const int len = min_len + static_cast<int>(rng() % static_cast<unsigned>(max_len - min_len + 1));
    for (int k = 0; k < len; ++k) h.tokens.push_back(static_cast<int>(rng() % static_cast<unsigned>(symbols)));
    h.score = -0.1 * i;
    nb.candidates.push_back(h);
  }
  return nb;
}

inline void randomize_lora(Scorer& s, Rng& rng) {
  for (Param* p : s.lora_params())
    if (p->name.find("lora_b") != std::string::npos) perturb(*p, rng, 0.5);
}

// List-wise loss of the scorer, gradients into every scorer parameter.
inline GradCheckResult check_scorer(std::uint64_t seed) {
  Scorer scorer(small_scorer_config(), seed);
  Rng rng(seed + 2000);
  randomize_lora(scorer, rng);
  for (Param* p : scorer.projection_params())
    if (p->name.rfind("scorer.head", 0) == 0) perturb(*p, rng, 0.5);
  const Prompt p = build_prompt(random_units(rng, 4, 4, 3), random_nbest(rng, 3, 5, 2, 4));
  const int gt = static_cast<int>(rng() % 3);
  ParamRefs ps = scorer.base_params();
  for (Param* q : scorer.trainable_params()) ps.push_back(q);
  enable_all(ps);
  return check_gradients([&](Tape& t) { return listwise_loss(scorer.score(t, p), gt); }, ps, kFdStep);
}

// Next-token loss used to pretrain the scorer.
inline GradCheckResult check_scorer_lm(std::uint64_t seed) {
  Scorer scorer(small_scorer_config(), seed);
  Rng rng(seed + 3000);
  randomize_lora(scorer, rng);
  const Prompt p = build_prompt(random_units(rng, 3, 4, 3), random_nbest(rng, 2, 5, 2, 4));
  ParamRefs ps = scorer.base_params();
  for (Param* q : scorer.trainable_params()) ps.push_back(q);
  enable_all(ps);
  return check_gradients([&](Tape& t) { return scorer.lm_loss(t, p, 1); }, ps, kFdStep);
}

inline GradCheckResult check_lora(std::uint64_t seed) {
  Rng rng(seed);
  Linear layer = Linear::init("lin", 6, 5, rng);
  attach_lora(layer, 3, 6.0, 0.0, rng);
  perturb(layer.lora->b, rng, 0.5);
  const Matrix x = random_matrix(4, 6, rng), w = random_matrix(4, 5, rng);
  ParamRefs ps{&layer.weight, &layer.bias, &layer.lora->a, &layer.lora->b};
  enable_all(ps);
  return check_gradients([&](Tape& t) { return project_to_scalar(t, layer.forward(t, t.constant(x)), w); }, ps,
                         kFdStep);
}

// List-wise loss, token cross-entropy and the normalized-entropy uncertainty.
inline GradCheckResult check_losses(std::uint64_t seed) {
  Rng rng(seed);
  Param scores("scores", random_matrix(1, 5, rng));
  Param logits("logits", random_matrix(3, 4, rng));
  Param att("att", random_matrix(3, 6, rng));
  const int gt = static_cast<int>(rng() % 5);
  std::vector<int> targets{static_cast<int>(rng() % 4), static_cast<int>(rng() % 4), static_cast<int>(rng() % 4)};
  const Matrix w = random_matrix(3, 1, rng);
  ParamRefs ps{&scores, &logits, &att};
  return check_gradients(
      [&](Tape& t) {
        Var a = listwise_loss(t.param(scores), gt);
        Var b = cross_entropy(t.param(logits), targets);
        Var c = project_to_scalar(t, normalized_entropy_rows(t.param(att)), w);
        return a + b + c;
      },
      ps, kFdStep);
}

inline ToyEncoder trainable_audio_encoder(std::uint64_t seed) {
  ToyEncoderConfig c;
  c.vocab = 5;
  c.dim = 8;
  c.depth = 4;
  c.heads = 2;
  c.ff_dim = 12;
  c.frames_per_token = 2;
  c.seed = seed;
  ToyEncoder enc(c);
  enc.set_frozen(false);
  return enc;
}

// Outcome of one instrumented backward pass where the audio encoder runs on
// the tape with trainable parameters.
struct StopGradientRun {
  bool encoder_grads_zero = false;  // every encoder gradient entry is exactly 0.0
  bool fusion_grads_nonzero = false;
  size_t blocked = 0;               // stop-gradient nodes that absorbed a gradient
};

inline bool all_zero(const ParamRefs& ps) {
  for (const Param* p : ps)
    for (Eigen::Index i = 0; i < p->grad.size(); ++i)
      if (p->grad.data()[i] != 0.0 || std::signbit(p->grad.data()[i])) return false;
  return true;
}

inline bool any_nonzero(const ParamRefs& ps) {
  for (const Param* p : ps)
    if (!p->grad.isZero(0.0)) return true;
  return false;
}

// Encoder layers feed only the alignment blocks' keys and values.
inline StopGradientRun sma_stop_gradient_run(std::uint64_t seed) {
  ToyEncoder enc = trainable_audio_encoder(seed);
  Rng rng(seed + 4000);
  SmaStack stack = SmaStack::init({}, 4, {8, 2}, rng);
  for (auto& b : stack.blocks) perturb(b.out_gate, rng, 1.0);
  const std::vector<int> tokens{1, 3, 0, 4};
  const Matrix xv = random_matrix(8, 8, rng), w = random_matrix(8, 8, rng);
  ParamRefs enc_params = enc.params(), fusion;
  stack.collect(fusion);
  for (Param* p : enc_params) p->zero_grad();
  for (Param* p : fusion) p->zero_grad();
  Tape t;
  std::vector<Var> layers = enc.encode_layers(t, tokens, Matrix());
  t.backward(project_to_scalar(t, align(t, t.constant(xv), layers, stack), w));
  return {all_zero(enc_params), any_nonzero(fusion), t.blocked_gradients()};
}

// Encoder output feeds only the fusion probe (queries and audio stopped).
inline StopGradientRun probe_stop_gradient_run(std::uint64_t seed) {
  ToyEncoder enc = trainable_audio_encoder(seed);
  Rng rng(seed + 5000);
  AmfLayer layer = AmfLayer::init("amf", {8, 2}, 12, rng);
  perturb(layer.dir_att, rng, 1.0);
  perturb(layer.dir_ff, rng, 1.0);
  const std::vector<int> tokens{2, 2, 1};
  const Matrix x = random_matrix(4, 8, rng), xv = random_matrix(6, 8, rng), w = random_matrix(4, 8, rng);
  ParamRefs enc_params = enc.params(), probe;
  layer.collect_probe(probe);
  for (Param* p : enc_params) p->zero_grad();
  for (Param* p : probe) p->zero_grad();
  Tape t;
  std::vector<Var> layers = enc.encode_layers(t, tokens, Matrix());
  Param q("queries", x);
  Var out = amf_layer(t, t.param(q), layers.back(), t.constant(xv), layer);
  t.backward(project_to_scalar(t, out, w));
  return {all_zero(enc_params), any_nonzero(probe), t.blocked_gradients()};
}

struct IdentityRun {
  bool identical_at_init = false;  // fused logits bitwise equal to audio-only logits
  bool changed_when_enabled = false;
};

inline IdentityRun zero_init_identity_run(std::uint64_t seed) {
  AvsrModel model(small_avsr_config(), seed);
  Rng rng(seed + 6000);
  std::vector<Matrix> audio;
  for (int l = 0; l <= 4; ++l) audio.push_back(random_matrix(6, 8, rng));
  const Matrix visual = random_matrix(3, 6, rng);
  const std::vector<int> prefix{model.decoder_config().bos(), 1, 4, 0};
  auto run = [&](bool fused) {
    Tape t(false);
    std::vector<Var> layers;
    for (const auto& m : audio) layers.push_back(t.constant(m));
    DecoderContext ctx = fused ? model.prepare(t, layers, t.constant(visual)) : model.prepare(t, layers, std::nullopt);
    return Matrix(model.logits(t, ctx, prefix).value());
  };
  IdentityRun r;
  const Matrix audio_only = run(false);
  const Matrix fused = run(true);
  r.identical_at_init = audio_only.rows() == fused.rows() &&
                        std::memcmp(audio_only.data(), fused.data(), sizeof(double) * static_cast<size_t>(fused.size())) == 0;
  for (auto& b : model.sma().blocks) b.out_gate.value(0, 0) = 0.5;
  for (auto& l : model.amf()) l.dir_att.value(0, 0) = 0.5;
  r.changed_when_enabled = (run(true) - audio_only).cwiseAbs().maxCoeff() > 0.0;
  return r;
}

struct GradSweep {
  double worst = 0.0;
  std::uint64_t worst_seed = 0;
  std::string worst_param;
};

template <typename Fn>
GradSweep sweep_seeds(Fn check, int seeds) {
  GradSweep s;
  for (int i = 0; i < seeds; ++i) {
    const std::uint64_t seed = 101 + static_cast<std::uint64_t>(i) * 7919;
    const GradCheckResult r = check(seed);
    if (r.max_rel_error >= s.worst) {
      s.worst = r.max_rel_error;
      s.worst_seed = seed;
      s.worst_param = r.worst_param;
    }
  }
  return s;
}

// Random log-probabilities per prefix over symbols + BOS + EOS.
struct RandomLm {
  int symbols;
  std::uint64_t seed;
  double eos_bias = 0.0;

  int bos() const { return symbols; }
  int eos() const { return symbols + 1; }

  RowVector operator()(const std::vector<int>& prefix) const {
    std::uint64_t h = seed;
    for (int tok : prefix) h = h * 1000003ULL + static_cast<std::uint64_t>(tok + 1);
    Rng rng(h);
    Matrix z = random_matrix(1, symbols + 2, rng) * 2.0;
    z(0, eos()) += eos_bias;
    return log_softmax_rows(z).row(0);
  }
};

inline double sequence_log_prob(const RandomLm& lm, const std::vector<int>& tokens, bool with_eos) {
  double lp = 0.0;
  std::vector<int> prefix{lm.bos()};
  for (int tok : tokens) {
    lp += lm(prefix)(tok);
    prefix.push_back(tok);
  }
  if (with_eos) lp += lm(prefix)(lm.eos());
  return lp;
}

inline void enumerate_sequences(int symbols, int len, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  out.push_back(cur);
  if (static_cast<int>(cur.size()) == len) return;
  for (int s = 0; s < symbols; ++s) {
    cur.push_back(s);
    enumerate_sequences(symbols, len, cur, out);
    cur.pop_back();
  }
}

// Every hypothesis an unpruned search could reach, ranked the way the search ranks them.
inline std::vector<Hypothesis> exhaustive_nbest(const RandomLm& lm, int max_len, int n) {
  std::vector<std::vector<int>> seqs;
  std::vector<int> cur;
  enumerate_sequences(lm.symbols, max_len, cur, seqs);
  std::vector<Hypothesis> finished, forced;
  for (const auto& s : seqs) {
    if (static_cast<int>(s.size()) < max_len) {
      const double lp = sequence_log_prob(lm, s, true);
      finished.push_back({s, lp, lp / static_cast<double>(s.size() + 1), false});
    } else {
      const double lp = sequence_log_prob(lm, s, false);
      forced.push_back({s, lp, lp / static_cast<double>(s.size()), true});
    }
  }
  auto rank = [](const Hypothesis& a, const Hypothesis& b) {
    return a.score != b.score ? a.score > b.score : a.tokens < b.tokens;
  };
  std::sort(finished.begin(), finished.end(), rank);
  std::sort(forced.begin(), forced.end(), rank);
  std::vector<Hypothesis> out(finished.begin(), finished.begin() + std::min<size_t>(finished.size(), n));
  for (size_t i = 0; out.size() < static_cast<size_t>(n) && i < forced.size(); ++i) out.push_back(forced[i]);
  std::stable_sort(out.begin(), out.end(), rank);
  return out;
}


}  // namespace avur::testing
