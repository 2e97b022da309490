#include "avur/harness/task.hpp"

#include <set>

namespace avur {

void ToyTaskConfig::validate() const {
  if (vocab < 1) throw std::invalid_argument("ToyTaskConfig: empty vocabulary");
  if (visemes < 1 || visemes > vocab) throw std::invalid_argument("ToyTaskConfig: visemes must be in [1, vocab]");
  if (min_len < 1 || max_len < min_len) throw std::invalid_argument("ToyTaskConfig: bad length range");
  if (train_size < 1 || dev_size < 0 || test_size < 1) throw std::invalid_argument("ToyTaskConfig: bad split sizes");
  if (audio_jitter < 0 || visual_jitter < 0) throw std::invalid_argument("ToyTaskConfig: negative jitter");
  if (!viseme_map.empty()) {
    if (static_cast<int>(viseme_map.size()) != vocab)
      throw std::invalid_argument("ToyTaskConfig: viseme map must cover every symbol");
    for (int v : viseme_map)
      if (v < 0 || v >= visemes) throw std::invalid_argument("ToyTaskConfig: viseme id out of range");
  }
  std::vector<int> counts(static_cast<size_t>(visemes), 0);
  for (int s = 0; s < vocab; ++s) ++counts[static_cast<size_t>(viseme_of(s))];
  if (*std::max_element(counts.begin(), counts.end()) < 2)
    throw std::invalid_argument("ToyTaskConfig: viseme map is injective; no visual ambiguity");
}

int ToyTaskConfig::viseme_of(int symbol) const {
  if (symbol < 0 || symbol >= vocab) throw std::out_of_range("viseme_of: symbol " + std::to_string(symbol));
  return viseme_map.empty() ? symbol % visemes : viseme_map[static_cast<size_t>(symbol)];
}

std::vector<int> ToyTaskConfig::visemes_of(const std::vector<int>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (int s : tokens) out.push_back(viseme_of(s));
  return out;
}

TaskEncoders make_encoders(const ToyTaskConfig& cfg) {
  cfg.validate();
  ToyEncoderConfig a;
  a.modality = Modality::audio;
  a.vocab = cfg.vocab;
  a.dim = cfg.audio_dim;
  a.depth = cfg.encoder_depth;
  a.frames_per_token = 4;
  a.seed = cfg.seed * 1000003ULL + 11;
  ToyEncoderConfig v;
  v.modality = Modality::visual;
  v.vocab = cfg.visemes;
  v.dim = cfg.visual_dim;
  v.depth = cfg.encoder_depth;
  v.frames_per_token = 1;
  v.seed = cfg.seed * 1000003ULL + 23;
  return {ToyEncoder(a), ToyEncoder(v)};
}

namespace {

void add_jitter(Matrix& m, double sigma, Rng& rng) {
  if (sigma <= 0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += n(rng);
}

}  // namespace

FeatureSequence make_audio(const ToyTaskConfig& cfg, const ToyEncoder& enc, const std::vector<int>& tokens,
                           std::uint64_t seed) {
  FeatureSequence f = enc.embed(tokens);
  Rng rng(seed);
  add_jitter(f.frames, cfg.audio_jitter, rng);
  return f;
}

FeatureSequence make_visual(const ToyTaskConfig& cfg, const ToyEncoder& enc, const std::vector<int>& tokens,
                            std::uint64_t seed) {
  FeatureSequence f = enc.embed(cfg.visemes_of(tokens));
  Rng rng(seed);
  add_jitter(f.frames, cfg.visual_jitter, rng);
  return f;
}

Dataset gen_dataset(const ToyTaskConfig& cfg) { return gen_dataset(cfg, make_encoders(cfg)); }

namespace {

void fill_split(const ToyTaskConfig& cfg, const TaskEncoders& enc, Rng& rng, std::vector<Utterance>& split, int n,
                const std::string& prefix) {
  std::uniform_int_distribution<int> len(cfg.min_len, cfg.max_len);
  std::uniform_int_distribution<int> sym(0, cfg.vocab - 1);
  std::uniform_int_distribution<std::uint64_t> seeds;
  for (int i = 0; i < n; ++i) {
    Utterance u;
    u.id = prefix + "-" + std::to_string(i);
    u.tokens.resize(static_cast<size_t>(len(rng)));
    for (int& s : u.tokens) s = sym(rng);
    const std::uint64_t audio_seed = seeds(rng);
    const std::uint64_t visual_seed = seeds(rng);
    u.audio = make_audio(cfg, enc.audio, u.tokens, audio_seed);
    u.visual = make_visual(cfg, enc.visual, u.tokens, visual_seed);
    split.push_back(std::move(u));
  }
}

}  // namespace

Dataset gen_dataset(const ToyTaskConfig& cfg, const TaskEncoders& enc) {
  cfg.validate();
  Rng rng(cfg.seed);
  Dataset ds;
  fill_split(cfg, enc, rng, ds.train, cfg.train_size, "train");
  fill_split(cfg, enc, rng, ds.dev, cfg.dev_size, "dev");
  fill_split(cfg, enc, rng, ds.test, cfg.test_size, "test");
  return ds;
}

std::vector<Utterance> gen_utterances(const ToyTaskConfig& cfg, const TaskEncoders& enc, int n,
                                      const std::string& prefix, std::uint64_t seed) {
  cfg.validate();
  if (n < 0) throw std::invalid_argument("gen_utterances: negative count");
  Rng rng(seed);
  std::vector<Utterance> out;
  fill_split(cfg, enc, rng, out, n, prefix);
  return out;
}

}  // namespace avur
