#include "avur/harness/metrics.hpp"

#include "avur/common/edit_distance.hpp"

namespace avur {

double wer(const std::vector<int>& ref, const std::vector<int>& hyp) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

void WerAccumulator::add(const std::vector<int>& ref, const std::vector<int>& hyp) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  errors += edit_distance(ref, hyp);
  words += ref.size();
}

double WerAccumulator::rate() const {
  return words == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(words);
}

size_t oracle_errors(const NBestList& nbest, const std::vector<int>& ref) {
  if (nbest.candidates.empty()) throw std::invalid_argument("oracle_errors: empty N-best list");
  size_t best = edit_distance(ref, nbest.candidates.front().tokens);
  for (const auto& h : nbest.candidates) best = std::min(best, edit_distance(ref, h.tokens));
  return best;
}

}  // namespace avur
