#include "fixtures.hpp"

#include <doctest.h>

#include <map>
#include <set>
#include <sstream>
#include <thread>

using namespace avur;
using namespace avur::testing;

namespace {

double inertia_of(const Matrix& x, const Matrix& centroids) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < centroids.rows(); ++k) best = std::min(best, (x.row(i) - centroids.row(k)).squaredNorm());
    total += best;
  }
  return total;
}

// Lowest within-cluster sum of squares over every split into two non-empty groups.
double best_two_partition(const Matrix& x) {
  const Eigen::Index n = x.rows();
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 1; mask + 1 < (1ULL << n); ++mask) {
    if (mask & 1ULL) continue;  // each split once
    double total = 0.0;
    for (int side = 0; side < 2; ++side) {
      RowVector mean = RowVector::Zero(x.cols());
      int count = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (((mask >> i) & 1ULL) == static_cast<std::uint64_t>(side)) {
          mean += x.row(i);
          ++count;
        }
      mean /= count;
      for (Eigen::Index i = 0; i < n; ++i)
        if (((mask >> i) & 1ULL) == static_cast<std::uint64_t>(side)) total += (x.row(i) - mean).squaredNorm();
    }
    best = std::min(best, total);
  }
  return best;
}

std::vector<int> random_labels(Rng& rng, int n, int k) {
  std::vector<int> out;
  for (int i = 0; i < n; ++i) out.push_back(static_cast<int>(rng() % static_cast<unsigned>(k)));
  return out;
}

}  // namespace

TEST_CASE("k-means never beats the best two-way split") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Rng rng(seed);
    const Matrix x = random_matrix(9, 2, rng);
    const Codebook cb = kmeans_fit(x, 2, 100, seed);
    CHECK(cb.inertia >= best_two_partition(x) - 1e-12);
    CHECK(std::abs(cb.inertia - inertia_of(x, cb.centroids)) <= 1e-10);
  }
}

TEST_CASE("k-means inertia never increases") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const Matrix x = random_matrix(200, 4, rng);
    const Codebook cb = kmeans_fit(x, 8, 100, seed);
    REQUIRE(!cb.inertia_history.empty());
    for (size_t i = 1; i < cb.inertia_history.size(); ++i)
      CHECK(cb.inertia_history[i] <= cb.inertia_history[i - 1] + 1e-9);
    CHECK(cb.size() == 8);
    CHECK(cb.dim() == 4);
  }
}

TEST_CASE("k-means with one cluster per distinct point is exact") {
  Rng rng(4);
  const Matrix pts = random_matrix(5, 3, rng);
  Matrix x(40, 3);
  for (Eigen::Index i = 0; i < 40; ++i) x.row(i) = pts.row(i % 5);
  const Codebook cb = kmeans_fit(x, 5, 50, 9);
  CHECK(cb.inertia <= 1e-20);
  std::set<int> used;
  for (int q : quantize_frames(x, cb)) used.insert(q);
  CHECK(used.size() == 5);
}

TEST_CASE("k-means rejects impossible requests") {
  Rng rng(1);
  const Matrix x = random_matrix(6, 2, rng);
  CHECK_THROWS_AS(kmeans_fit(x, 1, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(kmeans_fit(x, 7, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(kmeans_fit(x, 2, 0, 1), std::invalid_argument);
  Matrix dup = Matrix::Ones(6, 2);
  dup.row(5).setZero();
  CHECK_THROWS_AS(kmeans_fit(dup, 3, 10, 1), std::invalid_argument);
}

TEST_CASE("quantization matches a linear scan with lowest-index ties") {
  Rng rng(5);
  Codebook cb;
  cb.centroids = random_matrix(16, 4, rng);
  cb.centroids.row(9) = cb.centroids.row(3);
  const Matrix x = random_matrix(500, 4, rng);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    double bd = squared_distance(x.row(i), cb.centroids.row(0));
    for (int k = 1; k < 16; ++k) {
      const double d = (x.row(i) - cb.centroids.row(k)).squaredNorm();
      if (d < bd) {
        bd = d;
        best = k;
      }
    }
    CHECK(quantize(x.row(i), cb) == best);
  }
  CHECK(quantize(cb.centroids.row(9), cb) == 3);
}

TEST_CASE("run-length units expand back to their labels") {
  Rng rng(6);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 20);
    const std::vector<int> labels = random_labels(rng, n, 3);
    const FeatureSequence f{random_matrix(n, 2, rng), 25.0, Modality::visual};
    const VisualUnitSequence u = rle_compress(labels, f);
    REQUIRE(u.expand_labels() == labels);
    for (size_t i = 1; i < u.size(); ++i) REQUIRE(u.units[i].label != u.units[i - 1].label);
  }
  const std::vector<int> labels{2, 2, 2, 0, 1, 1};
  Matrix frames(6, 1);
  frames << 1, 2, 6, 4, 5, 7;
  const VisualUnitSequence u = rle_compress(labels, {frames, 25.0, Modality::visual});
  REQUIRE(u.size() == 3);
  CHECK(u.units[0].mean(0) == 3.0);
  CHECK(u.units[0].span == 3);
  CHECK(u.units[2].mean(0) == 6.0);
  CHECK(u.labels() == std::vector<int>{2, 0, 1});
  CHECK_THROWS(rle_compress(std::vector<int>{1, 2}, {frames, 25.0, Modality::visual}));
}

TEST_CASE("unit cache computes once per id") {
  UnitCache cache;
  int calls = 0;
  auto make = [&] {
    ++calls;
    VisualUnitSequence u;
    u.units.push_back({1, RowVector::Zero(2), 1});
    return u;
  };
  auto a = cache.get_or_compute("x", make);
  auto b = cache.get_or_compute("x", make);
  CHECK(a == b);
  CHECK(calls == 1);
  CHECK(cache.find("y") == nullptr);
  cache.get_or_compute("y", make);
  CHECK(cache.size() == 2);
  CHECK(cache.misses() == 2);

  UnitCache shared;
  std::vector<std::thread> threads;
  std::vector<std::shared_ptr<const VisualUnitSequence>> seen(8);
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&, i] {
      seen[static_cast<size_t>(i)] = shared.get_or_compute("z", [] { return VisualUnitSequence{}; });
    });
  for (auto& t : threads) t.join();
  for (const auto& s : seen) CHECK(s == seen[0]);
  CHECK(shared.misses() == 1);
}

TEST_CASE("codebook binary files round-trip bit for bit") {
  Rng rng(7);
  Codebook cb;
  cb.centroids = random_matrix(5, 3, rng);
  cb.seed = 123456789012345ULL;
  cb.iterations = 17;
  std::stringstream ss;
  write_codebook(ss, cb);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "AVCB");
  CHECK(bytes.size() == 4 + 4 + 8 * 4 + 5 * 3 * 8);
  const Codebook back = read_codebook(ss);
  CHECK(back.centroids == cb.centroids);
  CHECK(back.seed == cb.seed);
  CHECK(back.iterations == 17);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS(read_codebook(truncated));
  std::stringstream wrong("XXXX" + bytes.substr(4));
  CHECK_THROWS(read_codebook(wrong));
  std::ostringstream text;
  export_codebook_text(text, cb);
  CHECK(text.str().rfind("5 3 123456789012345 17\n", 0) == 0);
}

TEST_CASE("list-wise loss of a uniform list") {
  const std::vector<double> flat(4, 0.3);
  for (int gt = 0; gt < 4; ++gt) {
    CHECK(std::abs(listwise_loss(flat, gt) - std::log(4.0)) <= 1e-12);
    const auto g = listwise_loss_grad(flat, gt);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(g[static_cast<size_t>(i)] - (i == gt ? -0.75 : 0.25)) <= 1e-10);
  }
  CHECK_THROWS(listwise_loss(std::vector<double>{1.0}, 0));
  CHECK_THROWS(listwise_loss(flat, 4));
  Tape t(false);
  CHECK(std::abs(listwise_loss(t.constant(Matrix::Constant(1, 4, -2.0)), 2).scalar() - std::log(4.0)) <= 1e-12);
}

TEST_CASE("gradient checks of the scorer, adapter and losses") {
  for (auto fn : {check_scorer, check_scorer_lm, check_lora, check_losses}) {
    const GradSweep s = sweep_seeds(fn, 3);
    INFO("worst seed " << s.worst_seed << " param " << s.worst_param);
    CHECK(s.worst <= 1e-4);
  }
}

TEST_CASE("oracle selection by edit distance with score tie-break") {
  NBestList l;
  l.candidates = {{{1, 2, 3}, 0, -0.1, false}, {{1, 2}, 0, -0.2, false}, {{1, 9, 4}, 0, -0.3, false},
                  {{1, 2, 4}, 0, -0.4, false}};
  CHECK(select_oracle(l, {1, 2, 4}) == 3);
  CHECK(select_oracle(l, {1, 2, 3}) == 0);
  CHECK(select_oracle(l, {1, 7, 4}) == 2);
  // distance 1 for candidates 0, 1 and 3; candidate 0 has the highest score
  CHECK(select_oracle(l, {1, 2, 5}) == 0);
  CHECK_THROWS(select_oracle(l, {}));
}

TEST_CASE("z-score normalisation") {
  const auto z = zscore(std::vector<double>{1.0, 2.0, 3.0, 6.0});
  double mean = 0.0, var = 0.0;
  for (double v : z) mean += v / 4.0;
  for (double v : z) var += (v - mean) * (v - mean) / 4.0;
  CHECK(std::abs(mean) <= 1e-15);
  CHECK(std::abs(var - 1.0) <= 1e-14);
  CHECK(zscore(std::vector<double>{2.0, 2.0, 2.0}) == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("rerank endpoints and an adversarial flip") {
  NBestList l;
  l.utterance_id = "u";
  l.candidates = {{{1}, 0, -0.1, false}, {{2}, 0, -0.2, false}, {{3}, 0, -0.3, false}};
  const std::vector<double> r{-1.0, 5.0, 0.0};
  const NBestList first_pass = rerank(l, r, 1.0);
  for (size_t i = 0; i < 3; ++i) CHECK(first_pass.candidates[i].tokens == l.candidates[i].tokens);
  const NBestList rescored = rerank(l, r, 0.0);
  CHECK(rescored.candidates[0].tokens == std::vector<int>{2});
  CHECK(rescored.candidates[1].tokens == std::vector<int>{3});
  CHECK(rescored.candidates[2].tokens == std::vector<int>{1});
  CHECK(rescored.rescore_scores == std::vector<double>{5.0, 0.0, -1.0});
  // a strongly contrary scorer overturns the first pass once it dominates the mix
  const std::vector<double> contrary{-10.0, 0.0, 10.0};
  CHECK(rerank(l, contrary, 0.5).candidates[0].tokens == std::vector<int>{3});
  CHECK(rerank(l, contrary, 0.99).candidates[0].tokens == std::vector<int>{1});
  // equal keys keep first-pass order
  const NBestList tied = rerank(l, std::vector<double>{1.0, 1.0, 1.0}, 0.0);
  for (size_t i = 0; i < 3; ++i) CHECK(tied.candidates[i].tokens == l.candidates[i].tokens);
  CHECK_THROWS(rerank(l, std::vector<double>{1.0}, 0.5));
  CHECK_THROWS(rerank(l, r, 1.5));
  CHECK_THROWS(rerank(l, r, -0.1));
}

TEST_CASE("prompt text follows the template") {
  VisualUnitSequence u;
  u.units = {{3, RowVector::Zero(2), 2}, {1, RowVector::Zero(2), 1}};
  NBestList l;
  l.candidates = {{{4, 5}, 0, 0, false}, {{6}, 0, 0, false}};
  const std::string text = render_prompt(u, l);
  CHECK(text ==
        "[Instruction]: You are an AVSR hypothesis evaluator. Given the input below, assign scores to all "
        "candidates based on lip-motion plausibility and linguistic coherence. Input: [Visual Units] 3 1 "
        "[Candidates] 4 5, 6");
  const Prompt p = build_prompt(u, l);
  CHECK(p.text == text);
  CHECK(p.unit_labels == std::vector<int>{3, 1});
  CHECK(p.unit_times == std::vector<double>{1.0, 2.5});
  CHECK(p.candidates.size() == 2);
  CHECK(p.candidates_word == prompt_word_id("[Candidates]"));
  CHECK(p.lead_words.size() == 26);
  CHECK_THROWS(prompt_word_id("unknown"));
  CHECK_THROWS(build_prompt(u, NBestList{}));
}

TEST_CASE("distinct units and lists give distinct prompts") {
  Rng rng(8);
  std::map<std::string, std::pair<std::vector<int>, std::vector<std::vector<int>>>> seen;
  for (int trial = 0; trial < 10000; ++trial) {
    const VisualUnitSequence u = random_units(rng, 1 + static_cast<int>(rng() % 4), 12, 1);
    const NBestList l = random_nbest(rng, 1 + static_cast<int>(rng() % 3), 12, 1, 3);
    std::vector<std::vector<int>> cands;
    for (const auto& h : l.candidates) cands.push_back(h.tokens);
    auto key = std::make_pair(u.labels(), cands);
    auto [it, inserted] = seen.emplace(render_prompt(u, l), key);
    if (!inserted) REQUIRE(it->second == key);
  }
}

TEST_CASE("scores follow their candidates under permutation") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Scorer scorer(small_scorer_config(), seed);
    Rng rng(seed + 50);
    randomize_lora(scorer, rng);
    for (Param* p : scorer.projection_params())
      if (p->name.rfind("scorer.head", 0) == 0) perturb(*p, rng, 0.5);
    const VisualUnitSequence u = random_units(rng, 5, 4, 3);
    const NBestList l = random_nbest(rng, 5, 5, 1, 4);
    const std::vector<double> base = scorer.score_candidates(build_prompt(u, l));
    std::vector<size_t> perm{3, 0, 4, 1, 2};
    NBestList shuffled = l;
    for (size_t i = 0; i < 5; ++i) shuffled.candidates[i] = l.candidates[perm[i]];
    const std::vector<double> moved = scorer.score_candidates(build_prompt(u, shuffled));
    for (size_t i = 0; i < 5; ++i) CHECK(moved[i] == base[perm[i]]);
  }
}

TEST_CASE("an untrained adapter leaves the scorer unchanged") {
  ScorerConfig plain = small_scorer_config();
  plain.lora_rank = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Scorer with(small_scorer_config(), seed), without(plain, seed);
    CHECK(without.lora_params().empty());
    CHECK(!with.lora_params().empty());
    Rng rng(seed);
    const Prompt p = build_prompt(random_units(rng, 4, 4, 3), random_nbest(rng, 4, 5, 1, 4));
    CHECK(with.score_candidates(p) == without.score_candidates(p));
  }
  Rng rng(3);
  Linear lin = Linear::init("lin", 4, 3, rng);
  const Matrix x = random_matrix(5, 4, rng);
  Tape t(false);
  const Matrix before = lin.forward(t, t.constant(x)).value();
  attach_lora(lin, 2, 4.0, 0.0, rng);
  CHECK(lin.forward(t, t.constant(x)).value() == before);
  CHECK(lin.lora->scaling == 2.0);
}

namespace {

std::vector<ScorerExample> scorer_examples(Rng& rng, int n) {
  std::vector<ScorerExample> out;
  for (int i = 0; i < n; ++i) {
    ScorerExample e;
    e.units = std::make_shared<VisualUnitSequence>(random_units(rng, 4, 4, 3));
    e.nbest = random_nbest(rng, 4, 5, 1, 4);
    e.oracle = static_cast<int>(rng() % 4);
    out.push_back(e);
  }
  return out;
}

std::vector<Matrix> values_of(const ParamRefs& ps) {
  std::vector<Matrix> out;
  for (Param* p : ps) out.push_back(p->value);
  return out;
}

}  // namespace

TEST_CASE("list-wise training moves only adapter and projections") {
  Scorer scorer(small_scorer_config(), 4);
  Rng rng(40);
  const auto examples = scorer_examples(rng, 6);
  const auto base_before = values_of(scorer.base_params());
  const auto trainable_before = values_of(scorer.trainable_params());
  ScorerTrainConfig cfg;
  cfg.steps = 8;
  cfg.batch = 3;
  const TrainResult r = train_scorer(scorer, examples, cfg);
  CHECK(r.loss_curve.size() == 8);
  CHECK(values_of(scorer.base_params()) == base_before);
  CHECK(values_of(scorer.trainable_params()) != trainable_before);
  for (Param* p : scorer.base_params()) CHECK(!p->requires_grad);
}

TEST_CASE("language-model pretraining fits references and refreezes the base") {
  Scorer scorer(small_scorer_config(), 5);
  Rng rng(41);
  std::vector<ScorerPretrainExample> examples;
  for (int i = 0; i < 4; ++i)
    examples.push_back({std::make_shared<VisualUnitSequence>(random_units(rng, 3, 4, 3)), {i % 5, 2, 4}});
  const auto lora_before = values_of(scorer.lora_params());
  const auto base_before = values_of(scorer.base_params());
  ScorerTrainConfig cfg;
  cfg.steps = 60;
  cfg.batch = 4;
  cfg.optim.learning_rate = 1e-2;
  cfg.optim.total_steps = 60;
  const TrainResult r = pretrain_scorer(scorer, examples, cfg);
  REQUIRE(r.loss_curve.size() == 60);
  CHECK(r.moving_average(10, 60) < r.moving_average(10, 10));
  CHECK(values_of(scorer.base_params()) != base_before);
  CHECK(values_of(scorer.lora_params()) == lora_before);
  for (Param* p : scorer.base_params()) CHECK(!p->requires_grad);
  for (Param* p : scorer.trainable_params()) CHECK(p->requires_grad);
}
