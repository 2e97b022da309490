#pragma once

#include "avur/amf/beam_search.hpp"
#include "avur/numerics/tape.hpp"

#include <span>

namespace avur {

class Scorer;
struct VisualUnitSequence;

// Candidate with the smallest word edit distance to the reference; ties go to
// the higher first-pass score, then the lower index.
int select_oracle(const NBestList& nbest, const std::vector<int>& reference);

// -log softmax(r)[i_gt] for a 1 x N row of scores.
Var listwise_loss(Var scores, int i_gt);
double listwise_loss(std::span<const double> scores, int i_gt);
// softmax(r) - onehot(i_gt)
std::vector<double> listwise_loss_grad(std::span<const double> scores, int i_gt);

// (x - mean) / std over the list; all zeros when the spread is zero.
std::vector<double> zscore(std::span<const double> xs);

// Reorders candidates by lambda * z(s_infer) + (1 - lambda) * r, descending,
// keeping the original order among equal keys. rescore_scores carries r in
// the new order.
NBestList rerank(const NBestList& nbest, std::span<const double> r, double lambda);

NBestList rescore(const NBestList& nbest, const VisualUnitSequence& units, Scorer& scorer,
                  double lambda = 0.0);

}  // namespace avur
