#include "fixtures.hpp"

#include "avur/common/edit_distance.hpp"
#include "avur/harness/config.hpp"
#include "avur/harness/metrics.hpp"
#include "avur/harness/noise.hpp"
#include "avur/harness/pipeline.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

using namespace avur;
using namespace avur::testing;
namespace fs = std::filesystem;

namespace {

// Plain recursion over the three edit operations, no table.
size_t naive_edit_distance(const std::vector<int>& a, size_t i, const std::vector<int>& b, size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const size_t sub = naive_edit_distance(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  const size_t del = naive_edit_distance(a, i + 1, b, j) + 1;
  const size_t ins = naive_edit_distance(a, i, b, j + 1) + 1;
  return std::min({sub, del, ins});
}

ToyTaskConfig tiny_task() {
  ToyTaskConfig c;
  c.train_size = 30;
  c.dev_size = 5;
  c.test_size = 10;
  c.audio_dim = 8;
  c.visual_dim = 8;
  c.encoder_depth = 2;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST_CASE("word error rate examples") {
  CHECK(wer({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(wer({1, 2, 3}, {1, 3}) == doctest::Approx(1.0 / 3.0));
  CHECK(wer({1, 2, 3}, {}) == 1.0);
  CHECK(wer({1, 2}, {3, 4, 5, 6}) == 2.0);
  CHECK(wer({1, 2, 3, 4}, {2, 1, 3, 4}) == 0.5);
  CHECK_THROWS(wer({}, {1}));
  WerAccumulator acc;
  acc.add({1, 2, 3}, {1, 2});
  acc.add({4}, {5});
  CHECK(acc.errors == 2);
  CHECK(acc.rate() == 0.5);
  NBestList l;
  l.candidates = {{{9, 9}, 0, 0, false}, {{1, 2}, 0, 0, false}};
  CHECK(oracle_errors(l, {1, 2, 3}) == 1);
}

TEST_CASE("edit distance agrees with plain recursion") {
  Rng rng(9);
  for (int trial = 0; trial < 3000; ++trial) {
    std::vector<int> a, b;
    const int la = static_cast<int>(rng() % 7), lb = static_cast<int>(rng() % 7);
    for (int i = 0; i < la; ++i) a.push_back(static_cast<int>(rng() % 3));
    for (int i = 0; i < lb; ++i) b.push_back(static_cast<int>(rng() % 3));
    REQUIRE(edit_distance(a, b) == naive_edit_distance(a, 0, b, 0));
  }
}

TEST_CASE("noise is scaled to the requested SNR") {
  Rng rng(10);
  const FeatureSequence x{random_matrix(40, 8, rng), 50.0, Modality::audio};
  std::vector<FeatureSequence> pool;
  for (int i = 0; i < 5; ++i) pool.push_back({random_matrix(17, 8, rng), 50.0, Modality::audio});
  for (double snr : {20.0, 10.0, 5.0, 0.0, -5.0, -10.0}) {
    for (NoiseKind kind : {NoiseKind::gaussian, NoiseKind::babble}) {
      NoiseSpec spec{snr, kind, &pool};
      const Matrix n = make_noise(x, spec, 77);
      CHECK(std::abs(measured_snr_db(x.frames, n) - snr) <= 1e-9);
      const FeatureSequence y = mix_noise(x, spec, 77);
      CHECK((y.frames - x.frames - n).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  CHECK(mix_noise(x, NoiseSpec{}, 1).frames == x.frames);
  NoiseSpec short_pool{0.0, NoiseKind::babble, nullptr};
  CHECK_THROWS(make_noise(x, short_pool, 1));
  CHECK(condition_name(kCleanSnr) == "clean");
  CHECK(condition_name(-5) == "-5dB");
  CHECK(parse_condition("-5dB") == -5.0);
  CHECK(parse_condition("10") == 10.0);
  CHECK(parse_condition("clean") == kCleanSnr);
  CHECK_THROWS(parse_condition("loud"));
}

TEST_CASE("datasets are reproducible from their seed") {
  const ToyTaskConfig cfg = tiny_task();
  const TaskEncoders enc = make_encoders(cfg);
  const Dataset a = gen_dataset(cfg, enc), b = gen_dataset(cfg, enc);
  REQUIRE(a.train.size() == 30);
  CHECK(a.dev.size() == 5);
  CHECK(a.test.size() == 10);
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].tokens == b.train[i].tokens);
    CHECK(a.train[i].audio.frames == b.train[i].audio.frames);
    CHECK(a.train[i].visual.frames == b.train[i].visual.frames);
  }
  ToyTaskConfig other = cfg;
  other.seed = 2;
  CHECK(gen_dataset(other, enc).train[0].tokens != a.train[0].tokens);
}

TEST_CASE("symbols sharing a viseme look the same") {
  ToyTaskConfig cfg = tiny_task();
  const TaskEncoders enc = make_encoders(cfg);
  // 3 and 11 share viseme 3 under the default map
  const std::vector<int> s1{3, 0, 5}, s2{11, 8, 13}, s3{4, 0, 5};
  CHECK(cfg.visemes_of(s1) == cfg.visemes_of(s2));
  CHECK(make_visual(cfg, enc.visual, s1, 5).frames == make_visual(cfg, enc.visual, s2, 5).frames);
  CHECK(make_visual(cfg, enc.visual, s1, 5).frames != make_visual(cfg, enc.visual, s3, 5).frames);
  CHECK(make_audio(cfg, enc.audio, s1, 5).frames != make_audio(cfg, enc.audio, s2, 5).frames);
}

TEST_CASE("symbol and length marginals are uniform within three sigma") {
  ToyTaskConfig cfg = tiny_task();
  cfg.train_size = 2000;
  cfg.audio_dim = 4;
  cfg.visual_dim = 4;
  const TaskEncoders enc = make_encoders(cfg);
  const auto utts = gen_utterances(cfg, enc, 2000, "m", 99);
  std::vector<double> sym(static_cast<size_t>(cfg.vocab), 0.0), len(static_cast<size_t>(cfg.max_len + 1), 0.0);
  double total = 0.0;
  for (const auto& u : utts) {
    len[u.tokens.size()] += 1;
    for (int s : u.tokens) sym[static_cast<size_t>(s)] += 1;
    total += static_cast<double>(u.tokens.size());
  }
  const double p = 1.0 / cfg.vocab;
  for (double c : sym) CHECK(std::abs(c - total * p) <= 3.0 * std::sqrt(total * p * (1 - p)));
  const double q = 1.0 / (cfg.max_len - cfg.min_len + 1);
  for (int l = cfg.min_len; l <= cfg.max_len; ++l)
    CHECK(std::abs(len[static_cast<size_t>(l)] - 2000 * q) <= 3.0 * std::sqrt(2000 * q * (1 - q)));
  for (int l = 0; l < cfg.min_len; ++l) CHECK(len[static_cast<size_t>(l)] == 0.0);
}

TEST_CASE("task validation") {
  ToyTaskConfig cfg = tiny_task();
  cfg.visemes = cfg.vocab;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_task();
  cfg.viseme_map = {0, 1};
  CHECK_THROWS(cfg.validate());
  cfg.viseme_map.assign(static_cast<size_t>(cfg.vocab), 0);
  cfg.viseme_map[0] = cfg.visemes;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_task();
  cfg.min_len = 4;
  cfg.max_len = 3;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("config files round-trip and reject unknown keys") {
  ExperimentConfig cfg;
  std::istringstream in(
      "# comment\n"
      "nbest = 4\n"
      "beam=6\n"
      "snrs = clean, 5dB, -5\n"
      "lambda = 0.25   # trailing\n"
      "use_vur = false\n"
      "vocab = 12\n"
      "sma_layers = 1,2,4\n");
  apply_config(cfg, in);
  CHECK(cfg.nbest == 4);
  CHECK(cfg.beam == 6);
  CHECK(cfg.snrs == std::vector<double>{kCleanSnr, 5.0, -5.0});
  CHECK(cfg.lambda == 0.25);
  CHECK(!cfg.use_vur);
  CHECK(cfg.task.vocab == 12);
  CHECK(cfg.sma_layers == std::vector<int>{1, 2, 4});

  ExperimentConfig back;
  std::istringstream dumped(dump_config(cfg));
  apply_config(back, dumped);
  CHECK(dump_config(back) == dump_config(cfg));
  CHECK(config_keys().size() > 30);

  std::istringstream unknown("nbest = 4\nbeam_widht = 3\n");
  try {
    apply_config(cfg, unknown, "x.cfg");
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("x.cfg:2") != std::string::npos);
  }
  std::istringstream bad_value("nbest = four\n");
  CHECK_THROWS_AS(apply_config(cfg, bad_value), ConfigError);
  std::istringstream no_eq("nbest 4\n");
  CHECK_THROWS_AS(apply_config(cfg, no_eq), ConfigError);
  CHECK_THROWS_AS(set_config_value(cfg, "seeds", "1,x"), ConfigError);
}

TEST_CASE("report CSV round trip") {
  ExperimentReport rep;
  rep.rows = {{"clean", "audio", "audio_only", 0.125, 1}, {"-5dB", "audio-visual", "full", 1.0 / 3.0, 2}};
  const fs::path dir = fs::temp_directory_path() / "avur_csv_test";
  fs::create_directories(dir);
  const std::string path = (dir / "r.csv").string();
  rep.write_csv(path);
  CHECK(slurp(path).rfind("condition,modality,stage,wer,seed\n", 0) == 0);
  const ExperimentReport back = ExperimentReport::read_csv(path);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].wer == rep.rows[1].wer);
  CHECK(back.to_csv() == rep.to_csv());
  CHECK(back.mean_wer("-5dB", "full") == 1.0 / 3.0);
  CHECK_THROWS(back.mean_wer("0dB", "full"));
  fs::remove_all(dir);
}

TEST_CASE("a tiny experiment is byte-identical across runs") {
  ExperimentConfig cfg;
  std::istringstream tiny(
      "seeds = 1\n"
      "train_size = 24\ndev_size = 6\ntest_size = 6\n"
      "pretrain_steps = 10\nstage1_steps = 6\n"
      "scorer_pretrain_utts = 20\nscorer_pretrain_steps = 6\nscorer_steps = 4\nscorer_train_utts = 12\n"
      "snrs = clean, 0\ntrain_snrs = clean, 0\n"
      "kmeans_iters = 10\n");
  apply_config(cfg, tiny);
  const fs::path root = fs::temp_directory_path() / "avur_determinism_test";
  fs::remove_all(root);
  std::vector<std::string> csv;
  std::vector<std::map<std::string, std::string>> trees;
  for (const char* run : {"a", "b"}) {
    cfg.out_dir = (root / run).string();
    const ArmsOutcome out =
        run_arms(cfg, {Arm::audio_only, Arm::wo_vur, Arm::full, Arm::sma_only, Arm::amf_vur}, cfg.snrs);
    csv.push_back(out.report.to_csv());
    trees.push_back(tree_contents(root / run));
  }
  CHECK(csv[0] == csv[1]);
  CHECK(trees[0].size() >= 10);
  CHECK(trees[0] == trees[1]);
  CHECK(trees[0].count("seed-1/sma_amf/codebook.bin") == 1);
  CHECK(trees[0].count("seed-1/sma_amf/rescored_test_clean.nbest") == 1);
  fs::remove_all(root);
}
