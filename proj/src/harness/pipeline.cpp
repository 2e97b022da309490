#include "avur/harness/pipeline.hpp"

#include "avur/common/edit_distance.hpp"
#include "avur/harness/metrics.hpp"
#include "avur/vur/rescoring.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <optional>
#include <sstream>

namespace avur {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // splitmix64 over the fields in turn
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  h = mix(h ^ a);
  h = mix(h ^ b);
  return mix(h ^ c);
}

namespace {

std::uint64_t snr_key(double snr) {
  std::uint64_t bits;
  std::memcpy(&bits, &snr, sizeof bits);
  return bits;
}

enum Purpose : std::uint64_t { kTrainNoise = 1, kTestNoise, kDevNoise, kScorerNoise, kModelInit, kTraining };

}  // namespace

void ExperimentConfig::validate() const {
  task.validate();
  if (seeds.empty()) throw std::invalid_argument("config: no seeds");
  if (snrs.empty()) throw std::invalid_argument("config: no SNR conditions");
  if (train_snrs.empty()) throw std::invalid_argument("config: no training SNR conditions");
  for (double s : snrs)
    if (std::isnan(s) || s == -kCleanSnr) throw std::invalid_argument("config: bad SNR");
  if (nbest < 2) throw std::invalid_argument("config: nbest must be >= 2 for rescoring");
  if (beam < nbest) throw std::invalid_argument("config: beam must be >= nbest");
  if (codebook_k < 2) throw std::invalid_argument("config: codebook_k must be >= 2");
  if (unit_layer < 0 || unit_layer > task.encoder_depth)
    throw std::invalid_argument("config: unit_layer outside 0..encoder_depth");
  if (lambda > 1.0) throw std::invalid_argument("config: lambda must be <= 1");
  for (double l : lambda_grid)
    if (l < 0.0 || l > 1.0) throw std::invalid_argument("config: lambda_grid values must be in [0, 1]");
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
  if (scorer_pretrain_utts < 1 || scorer_pretrain_steps < 0 || scorer_steps < 0)
    throw std::invalid_argument("config: scorer corpus and step counts must be positive");
  if (scorer_train_utts < 1) throw std::invalid_argument("config: scorer_train_utts must be >= 1");
  if (pretrain_steps < 0 || stage1_steps < 0 || batch < 1 || scorer_batch < 1)
    throw std::invalid_argument("config: bad step or batch count");
  if (lora_rank < 0) throw std::invalid_argument("config: lora_rank must be >= 0");
  if (task.max_len + 2 > 64) throw std::invalid_argument("config: utterances too long for the decoder");
}

AvsrConfig ExperimentConfig::model_config(bool sma, bool amf) const {
  AvsrConfig c;
  c.decoder.symbols = task.vocab;
  c.decoder.dim = model_dim;
  c.decoder.heads = heads;
  c.decoder.layers = decoder_layers;
  c.decoder.ff_dim = ff_dim;
  c.decoder.max_len = task.max_len + 4;
  c.sma.insertion_layers = sma_layers;
  c.visual_dim = task.visual_dim;
  c.encoder_depth = task.encoder_depth;
  c.use_sma = sma;
  c.use_amf = amf;
  return c;
}

std::string ExperimentReport::to_csv() const {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : rows)
    out += r.condition + "," + r.modality + "," + r.stage + "," + format_double(r.wer) + "," +
           std::to_string(r.seed) + "\n";
  return out;
}

void ExperimentReport::write_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << to_csv();
}

ExperimentReport ExperimentReport::read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(is, line) || line != kHeader) throw std::runtime_error(path + ": bad CSV header");
  ExperimentReport rep;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    if (f.size() != 5) throw std::runtime_error(path + ": expected 5 fields in '" + line + "'");
    rep.rows.push_back({f[0], f[1], f[2], std::stod(f[3]), std::stoull(f[4])});
  }
  return rep;
}

double ExperimentReport::mean_wer(const std::string& condition, const std::string& stage) const {
  double total = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.condition == condition && r.stage == stage) {
      total += r.wer;
      ++n;
    }
  }
  if (n == 0) throw std::out_of_range("no report rows for " + condition + "/" + stage);
  return total / n;
}

const Utterance& SeedData::utterance(const std::string& id) const {
  auto it = by_id.find(id);
  if (it == by_id.end()) throw std::out_of_range("unknown utterance id " + id);
  return *it->second;
}

EncodedSample encode_utterance(const ExperimentConfig& cfg, const SeedData& sd, const Utterance& u,
                               double snr_db, std::uint64_t noise_seed) {
  EncodedSample s;
  s.id = u.id;
  s.tokens = u.tokens;
  const NoiseSpec spec{snr_db, cfg.noise, &sd.babble_pool};
  for (auto& layer : sd.encoders->audio.forward_layers(mix_noise(u.audio, spec, noise_seed)))
    s.audio_layers.push_back(std::move(layer.frames));
  s.visual = sd.visual_layers.at(u.id).back();
  return s;
}

SeedData prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SeedData sd;
  sd.seed = seed;
  sd.task = cfg.task;
  sd.task.seed = seed;
  sd.encoders = std::make_unique<TaskEncoders>(make_encoders(sd.task));
  sd.data = gen_dataset(sd.task, *sd.encoders);
  for (const auto& u : sd.data.train) sd.babble_pool.push_back(u.audio);
  for (const auto* split : {&sd.data.train, &sd.data.dev, &sd.data.test}) {
    for (const auto& u : *split) {
      sd.by_id[u.id] = &u;
      std::vector<Matrix> layers;
      for (auto& l : sd.encoders->visual.forward_layers(u.visual)) layers.push_back(std::move(l.frames));
      sd.visual_layers[u.id] = std::move(layers);
    }
  }
  for (size_t i = 0; i < sd.data.train.size(); ++i) {
    for (double snr : cfg.train_snrs)
      sd.train.push_back(encode_utterance(cfg, sd, sd.data.train[i], snr, derive_seed(seed, kTrainNoise, i, snr_key(snr))));
  }
  return sd;
}

namespace {

TrainConfig train_config(const ExperimentConfig& cfg, int steps, std::uint64_t seed) {
  TrainConfig tc;
  tc.optim.learning_rate = cfg.lr;
  tc.steps = steps;
  tc.batch = cfg.batch;
  tc.seed = seed;
  return tc;
}

std::vector<NBestList> decode_split(const ExperimentConfig& cfg, const SeedData& sd, AvsrModel& model,
                                    const std::vector<Utterance>& utts, double snr, std::uint64_t purpose) {
  const DecoderConfig& dc = model.decoder_config();
  BeamConfig bc;
  bc.beam_width = cfg.beam;
  bc.nbest = cfg.nbest;
  bc.max_len = dc.max_len;
  bc.bos = dc.bos();
  bc.eos = dc.eos();
  std::vector<NBestList> out;
  out.reserve(utts.size());
  for (size_t i = 0; i < utts.size(); ++i) {
    const EncodedSample s = encode_utterance(cfg, sd, utts[i], snr, derive_seed(sd.seed, purpose, i, snr_key(snr)));
    Tape t(false);
    DecoderContext ctx = prepare_sample(model, t, s, true);
    NBestList nb = beam_search(model, t, ctx, bc);
    nb.utterance_id = utts[i].id;
    out.push_back(std::move(nb));
  }
  return out;
}

std::vector<double> noisy(const std::vector<double>& snrs) {
  std::vector<double> out;
  for (double s : snrs)
    if (s != kCleanSnr) out.push_back(s);
  return out.empty() ? snrs : out;
}

}  // namespace

std::shared_ptr<AvsrModel> pretrain_base_model(const ExperimentConfig& cfg, SeedData& sd) {
  auto model = std::make_shared<AvsrModel>(cfg.model_config(true, true), derive_seed(sd.seed, kModelInit));
  pretrain_base(*model, sd.train, train_config(cfg, cfg.pretrain_steps, derive_seed(sd.seed, kTraining, 0)));
  return model;
}

Stage1Result run_stage1(const ExperimentConfig& cfg, SeedData& sd, const AvsrModel& base, bool sma, bool amf) {
  Stage1Result r;
  r.model = std::make_shared<AvsrModel>(base);
  r.model->reset_counters();
  r.model->mutable_config().use_sma = sma;
  r.model->mutable_config().use_amf = amf;
  r.curve = train_stage1(*r.model, sd.train,
                         train_config(cfg, cfg.stage1_steps, derive_seed(sd.seed, kTraining, 1 + sma * 2 + amf)));
  for (double snr : cfg.snrs) {
    const std::string cond = condition_name(snr);
    r.lists.test[cond] = decode_split(cfg, sd, *r.model, sd.data.test, snr, kTestNoise);
    r.lists.dev[cond] = decode_split(cfg, sd, *r.model, sd.data.dev, snr, kDevNoise);
  }
  // Scorer training lists: each train utterance once, cycling through the
  // noisy training conditions, with noise the decoder has not been trained on.
  const std::vector<double> conds = noisy(cfg.train_snrs);
  const size_t n = std::min(sd.data.train.size(), static_cast<size_t>(std::max(0, cfg.scorer_train_utts)));
  for (size_t i = 0; i < n; ++i) {
    const double snr = conds[i % conds.size()];
    auto lists = decode_split(cfg, sd, *r.model, {sd.data.train[i]}, snr, derive_seed(kScorerNoise, i));
    r.lists.scorer_train.push_back(std::move(lists.front()));
  }
  return r;
}

double corpus_wer(const std::vector<NBestList>& lists, const SeedData& sd) {
  WerAccumulator acc;
  for (const auto& l : lists) {
    if (l.candidates.empty()) throw std::invalid_argument("corpus_wer: empty N-best list " + l.utterance_id);
    acc.add(sd.utterance(l.utterance_id).tokens, l.candidates.front().tokens);
  }
  return acc.rate();
}

double corpus_oracle_wer(const std::vector<NBestList>& lists, const SeedData& sd) {
  size_t errors = 0, words = 0;
  for (const auto& l : lists) {
    const auto& ref = sd.utterance(l.utterance_id).tokens;
    errors += oracle_errors(l, ref);
    words += ref.size();
  }
  return words == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(words);
}

Stage2Result run_stage2(const ExperimentConfig& cfg, SeedData& sd, const Stage1Lists& lists,
                        InstrumentationCounters* counters) {
  Stage2Result out;
  const auto layer = static_cast<size_t>(cfg.unit_layer);
  Eigen::Index rows = 0;
  for (const auto& u : sd.data.train) rows += sd.visual_layers.at(u.id)[layer].rows();
  Matrix pooled(rows, sd.task.visual_dim);
  rows = 0;
  for (const auto& u : sd.data.train) {
    const Matrix& m = sd.visual_layers.at(u.id)[layer];
    pooled.middleRows(rows, m.rows()) = m;
    rows += m.rows();
  }
  out.codebook = kmeans_fit(pooled, cfg.codebook_k, cfg.kmeans_iters, derive_seed(sd.seed, kModelInit, 7));

  UnitCache cache;
  auto units_for = [&](const std::string& id) {
    return cache.get_or_compute(id, [&] {
      const Matrix& m = sd.visual_layers.at(id)[layer];
      const std::vector<int> labels = quantize_frames(m, out.codebook);
      return rle_compress(labels, FeatureSequence{m, 1.0, Modality::visual});
    });
  };

  ScorerConfig sc;
  sc.symbols = sd.task.vocab;
  sc.codebook_size = cfg.codebook_k;
  sc.unit_feature_dim = sd.task.visual_dim;
  sc.lora_rank = cfg.lora_rank;
  sc.lora_alpha = cfg.lora_alpha;
  Scorer scorer(sc, derive_seed(sd.seed, kModelInit, 8));

  // Language-model corpus disjoint from every split.
  std::vector<ScorerPretrainExample> references;
  for (const auto& u : gen_utterances(sd.task, *sd.encoders, cfg.scorer_pretrain_utts, "lm",
                                      derive_seed(sd.seed, kModelInit, 11))) {
    const Matrix m = std::move(sd.encoders->visual.forward_layers(u.visual)[layer].frames);
    references.push_back({std::make_shared<VisualUnitSequence>(rle_compress(
                              quantize_frames(m, out.codebook), FeatureSequence{m, 1.0, Modality::visual})),
                          u.tokens});
  }
  ScorerTrainConfig pc;
  pc.optim.learning_rate = cfg.scorer_pretrain_lr;
  pc.steps = cfg.scorer_pretrain_steps;
  pc.batch = cfg.scorer_batch;
  pc.seed = derive_seed(sd.seed, kTraining, 10);
  out.pretrain_curve = pretrain_scorer(scorer, references, pc);

  std::vector<ScorerExample> examples;
  for (const auto& nb : lists.scorer_train) {
    if (nb.candidates.size() < 2) continue;
    const auto& ref = sd.utterance(nb.utterance_id).tokens;
    size_t worst = 0;
    for (const auto& h : nb.candidates) worst = std::max(worst, edit_distance(ref, h.tokens));
    const int oracle = select_oracle(nb, ref);
    if (edit_distance(ref, nb.candidates[static_cast<size_t>(oracle)].tokens) == worst) continue;
    examples.push_back({units_for(nb.utterance_id), nb, oracle});
  }
  if (examples.empty()) throw std::runtime_error("run_stage2: no informative training lists for the scorer");
  ScorerTrainConfig tc;
  tc.optim.learning_rate = cfg.scorer_lr;
  tc.steps = cfg.scorer_steps;
  tc.batch = cfg.scorer_batch;
  tc.seed = derive_seed(sd.seed, kTraining, 9);
  out.curve = train_scorer(scorer, examples, tc);
  scorer.set_counters(counters);

  auto scores_for = [&](const std::vector<NBestList>& ls) {
    std::vector<std::vector<double>> r;
    for (const auto& nb : ls) r.push_back(scorer.score_candidates(build_prompt(*units_for(nb.utterance_id), nb)));
    return r;
  };

  out.lambda = cfg.lambda;
  if (out.lambda < 0) {
    // Pooled dev errors for each grid value; ties go to the larger lambda.
    std::vector<std::pair<const NBestList*, std::vector<double>>> dev;
    for (const auto& [cond, ls] : lists.dev) {
      auto r = scores_for(ls);
      for (size_t i = 0; i < ls.size(); ++i) dev.emplace_back(&ls[i], std::move(r[i]));
    }
    size_t best_errors = std::numeric_limits<size_t>::max();
    out.lambda = 1.0;
    for (double lam : cfg.lambda_grid) {
      size_t errors = 0;
      for (const auto& [nb, r] : dev) {
        const NBestList re = rerank(*nb, r, lam);
        errors += edit_distance(sd.utterance(nb->utterance_id).tokens, re.candidates.front().tokens);
      }
      if (errors < best_errors || (errors == best_errors && lam > out.lambda)) {
        best_errors = errors;
        out.lambda = lam;
      }
    }
  }
  for (const auto& [cond, ls] : lists.test) {
    auto r = scores_for(ls);
    std::vector<NBestList> re;
    for (size_t i = 0; i < ls.size(); ++i) re.push_back(rerank(ls[i], r[i], out.lambda));
    out.test[cond] = std::move(re);
  }
  return out;
}

void write_stage1_lists(const std::string& dir, const Stage1Lists& lists) {
  fs::create_directories(dir);
  for (const auto& [cond, ls] : lists.test) write_nbest_file(dir + "/test_" + cond + ".nbest", ls);
  for (const auto& [cond, ls] : lists.dev) write_nbest_file(dir + "/dev_" + cond + ".nbest", ls);
  write_nbest_file(dir + "/scorer_train.nbest", lists.scorer_train);
}

Stage1Lists read_stage1_lists(const std::string& dir, const std::vector<double>& snrs) {
  Stage1Lists lists;
  for (double snr : snrs) {
    const std::string cond = condition_name(snr);
    lists.test[cond] = read_nbest_file(dir + "/test_" + cond + ".nbest");
    lists.dev[cond] = read_nbest_file(dir + "/dev_" + cond + ".nbest");
  }
  lists.scorer_train = read_nbest_file(dir + "/scorer_train.nbest");
  return lists;
}

void write_stage2_outputs(const std::string& dir, const Stage2Result& s2) {
  fs::create_directories(dir);
  write_codebook_file(dir + "/codebook.bin", s2.codebook);
  std::ofstream txt(dir + "/codebook.txt", std::ios::binary);
  export_codebook_text(txt, s2.codebook);
  for (const auto& [cond, ls] : s2.test) write_nbest_file(dir + "/rescored_test_" + cond + ".nbest", ls);
}

const char* to_string(Arm a) {
  switch (a) {
    case Arm::audio_only: return "audio_only";
    case Arm::full: return "full";
    case Arm::wo_vur: return "wo_vur";
    case Arm::sma_only: return "sma_only";
    case Arm::amf_vur: return "amf_vur";
  }
  return "?";
}

Arm parse_arm(const std::string& s) {
  for (Arm a : {Arm::audio_only, Arm::full, Arm::wo_vur, Arm::sma_only, Arm::amf_vur})
    if (s == to_string(a)) return a;
  throw std::invalid_argument("unknown arm '" + s + "'");
}

namespace {

template <typename Fn>
auto for_each_seed(const ExperimentConfig& cfg, Fn fn) {
  using Result = decltype(fn(std::uint64_t{}));
  std::vector<Result> results(cfg.seeds.size());
  if (cfg.threads <= 1) {
    for (size_t i = 0; i < cfg.seeds.size(); ++i) results[i] = fn(cfg.seeds[i]);
    return results;
  }
  for (size_t start = 0; start < cfg.seeds.size(); start += static_cast<size_t>(cfg.threads)) {
    std::vector<std::future<Result>> running;
    const size_t end = std::min(cfg.seeds.size(), start + static_cast<size_t>(cfg.threads));
    for (size_t i = start; i < end; ++i) running.push_back(std::async(std::launch::async, fn, cfg.seeds[i]));
    for (size_t i = start; i < end; ++i) results[i] = running[i - start].get();
  }
  return results;
}

ArmsOutcome run_arms_seed(const ExperimentConfig& cfg, const std::vector<Arm>& arms,
                          const std::vector<double>& snrs, std::uint64_t seed) {
  ExperimentConfig c = cfg;
  c.snrs = snrs;
  SeedData sd = prepare_seed(c, seed);
  auto base = pretrain_base_model(c, sd);
  const std::string seed_dir = c.out_dir.empty() ? "" : c.out_dir + "/seed-" + std::to_string(seed);

  auto wants = [&](std::initializer_list<Arm> xs) {
    for (Arm a : xs)
      if (std::find(arms.begin(), arms.end(), a) != arms.end()) return true;
    return false;
  };
  std::optional<Stage1Result> audio, full, amf;
  std::optional<Stage2Result> full2, amf2;
  InstrumentationCounters full_vur, amf_vur_counter;
  if (wants({Arm::audio_only, Arm::sma_only})) audio = run_stage1(c, sd, *base, true, false);
  if (wants({Arm::full, Arm::wo_vur})) full = run_stage1(c, sd, *base, true, true);
  if (wants({Arm::amf_vur})) amf = run_stage1(c, sd, *base, false, true);
  if (wants({Arm::full})) full2 = run_stage2(c, sd, full->lists, &full_vur);
  if (wants({Arm::amf_vur})) amf2 = run_stage2(c, sd, amf->lists, &amf_vur_counter);
  if (!seed_dir.empty()) {
    if (audio) write_stage1_lists(seed_dir + "/audio", audio->lists);
    if (full) write_stage1_lists(seed_dir + "/sma_amf", full->lists);
    if (amf) write_stage1_lists(seed_dir + "/amf", amf->lists);
    if (full2) write_stage2_outputs(seed_dir + "/sma_amf", *full2);
    if (amf2) write_stage2_outputs(seed_dir + "/amf", *amf2);
  }

  ArmsOutcome out;
  for (Arm a : arms) {
    const ConditionLists* lists = nullptr;
    const AvsrModel* model = nullptr;
    long vur = 0;
    switch (a) {
      case Arm::audio_only:
      case Arm::sma_only: lists = &audio->lists.test; model = audio->model.get(); break;
      case Arm::wo_vur: lists = &full->lists.test; model = full->model.get(); break;
      case Arm::full: lists = &full2->test; model = full->model.get(); vur = full_vur.vur_calls; break;
      case Arm::amf_vur: lists = &amf2->test; model = amf->model.get(); vur = amf_vur_counter.vur_calls; break;
    }
    const bool visual = model->config().use_amf;
    for (double snr : snrs) {
      const std::string cond = condition_name(snr);
      out.report.rows.push_back({cond, visual ? "audio-visual" : "audio", to_string(a), corpus_wer(lists->at(cond), sd), seed});
    }
    out.counters.push_back({seed, a, model->counters().sma_calls, model->counters().amf_calls, vur});
  }
  // N-best oracle of each decoded system, for the lower-bound check.
  auto oracle_rows = [&](const std::optional<Stage1Result>& s, const char* name) {
    if (!s) return;
    for (double snr : snrs) {
      const std::string cond = condition_name(snr);
      out.report.rows.push_back({cond, s->model->config().use_amf ? "audio-visual" : "audio",
                                 std::string("oracle_") + name, corpus_oracle_wer(s->lists.test.at(cond), sd), seed});
    }
  };
  oracle_rows(audio, "audio");
  oracle_rows(full, "sma_amf");
  oracle_rows(amf, "amf");
  return out;
}

}  // namespace

ArmsOutcome run_arms(const ExperimentConfig& cfg, const std::vector<Arm>& arms, const std::vector<double>& snrs) {
  cfg.validate();
  if (arms.empty()) throw std::invalid_argument("run_arms: no arms");
  auto per_seed = for_each_seed(cfg, [&](std::uint64_t seed) { return run_arms_seed(cfg, arms, snrs, seed); });
  ArmsOutcome out;
  for (auto& r : per_seed) {
    out.report.rows.insert(out.report.rows.end(), r.report.rows.begin(), r.report.rows.end());
    out.counters.insert(out.counters.end(), r.counters.begin(), r.counters.end());
  }
  return out;
}

ArmsOutcome run_ablation(const ExperimentConfig& cfg) {
  return run_arms(cfg, {Arm::full, Arm::wo_vur, Arm::sma_only, Arm::amf_vur}, {kCleanSnr, cfg.ablation_snr});
}

ExperimentReport run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  for (int l : cfg.sweep_layers)
    if (l < 1 || l > cfg.task.encoder_depth) throw std::invalid_argument("sweep: layer outside 1..encoder_depth");
  const std::vector<double> snrs{kCleanSnr, 0.0};
  auto per_seed = for_each_seed(cfg, [&](std::uint64_t seed) {
    ExperimentConfig c = cfg;
    c.snrs = snrs;
    SeedData sd = prepare_seed(c, seed);
    auto base = pretrain_base_model(c, sd);
    Stage1Result s1 = run_stage1(c, sd, *base, c.use_sma, true);
    ExperimentReport rep;
    for (int layer : cfg.sweep_layers) {
      for (int k : cfg.sweep_k) {
        c.unit_layer = layer;
        c.codebook_k = k;
        Stage2Result s2 = run_stage2(c, sd, s1.lists);
        for (double snr : snrs) {
          const std::string cond = condition_name(snr);
          rep.rows.push_back({cond, "audio-visual",
                              "stage2/layer=" + std::to_string(layer) + "/K=" + std::to_string(k),
                              corpus_wer(s2.test.at(cond), sd), seed});
        }
      }
    }
    return rep;
  });
  ExperimentReport out;
  for (auto& r : per_seed) out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
  return out;
}

}  // namespace avur
