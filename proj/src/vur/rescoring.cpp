#include "avur/vur/rescoring.hpp"

#include "avur/common/edit_distance.hpp"
#include "avur/vur/scorer.hpp"

#include <algorithm>
#include <numeric>

namespace avur {

int select_oracle(const NBestList& nbest, const std::vector<int>& reference) {
  if (reference.empty()) throw std::invalid_argument("select_oracle: empty reference");
  if (nbest.candidates.empty()) throw std::invalid_argument("select_oracle: empty N-best list");
  int best = 0;
  size_t best_d = edit_distance(reference, nbest.candidates[0].tokens);
  for (size_t i = 1; i < nbest.candidates.size(); ++i) {
    const size_t d = edit_distance(reference, nbest.candidates[i].tokens);
    const auto& cur = nbest.candidates[static_cast<size_t>(best)];
    if (d < best_d || (d == best_d && nbest.candidates[i].score > cur.score)) {
      best = static_cast<int>(i);
      best_d = d;
    }
  }
  return best;
}

Var listwise_loss(Var scores, int i_gt) {
  if (scores.rows() != 1 || scores.cols() < 2)
    throw ShapeError("listwise_loss: need a 1 x N row with N >= 2, got " + shape_str(scores.value()));
  return cross_entropy(scores, {i_gt});
}

double listwise_loss(std::span<const double> scores, int i_gt) {
  if (scores.size() < 2) throw std::invalid_argument("listwise_loss: need N >= 2");
  if (i_gt < 0 || static_cast<size_t>(i_gt) >= scores.size())
    throw std::out_of_range("listwise_loss: i_gt outside list");
  Matrix row = Eigen::Map<const Matrix>(scores.data(), 1, static_cast<Eigen::Index>(scores.size()));
  return -log_softmax_rows(row)(0, i_gt);
}

std::vector<double> listwise_loss_grad(std::span<const double> scores, int i_gt) {
  if (i_gt < 0 || static_cast<size_t>(i_gt) >= scores.size())
    throw std::out_of_range("listwise_loss_grad: i_gt outside list");
  Matrix row = Eigen::Map<const Matrix>(scores.data(), 1, static_cast<Eigen::Index>(scores.size()));
  Matrix p = softmax_rows(row);
  std::vector<double> g(p.data(), p.data() + p.size());
  g[static_cast<size_t>(i_gt)] -= 1.0;
  return g;
}

std::vector<double> zscore(std::span<const double> xs) {
  std::vector<double> out(xs.size(), 0.0);
  if (xs.empty()) return out;
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0)) return out;
  for (size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - mean) / sd;
  return out;
}

NBestList rerank(const NBestList& nbest, std::span<const double> r, double lambda) {
  if (r.size() != nbest.candidates.size())
    throw std::invalid_argument("rerank: " + std::to_string(r.size()) + " scores for " +
                                std::to_string(nbest.candidates.size()) + " candidates");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("rerank: lambda outside [0, 1]");
  std::vector<double> s;
  for (const auto& h : nbest.candidates) s.push_back(h.score);
  const std::vector<double> zs = zscore(s);
  std::vector<double> key(r.size());
  for (size_t i = 0; i < r.size(); ++i) {
    key[i] = lambda == 1.0 ? zs[i] : lambda == 0.0 ? r[i] : lambda * zs[i] + (1.0 - lambda) * r[i];
  }
  std::vector<size_t> order(r.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return key[a] > key[b]; });
  NBestList out;
  out.utterance_id = nbest.utterance_id;
  for (size_t i : order) {
    out.candidates.push_back(nbest.candidates[i]);
    out.rescore_scores.push_back(r[i]);
  }
  return out;
}

NBestList rescore(const NBestList& nbest, const VisualUnitSequence& units, Scorer& scorer, double lambda) {
  const std::vector<double> r = scorer.score_candidates(build_prompt(units, nbest));
  return rerank(nbest, r, lambda);
}

}  // namespace avur
