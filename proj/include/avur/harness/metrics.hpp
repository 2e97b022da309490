#pragma once

#include "avur/amf/beam_search.hpp"

namespace avur {

// (S + I + D) / |ref|; may exceed 1.
double wer(const std::vector<int>& ref, const std::vector<int>& hyp);

// Pooled error count over a corpus, divided by total reference length.
struct WerAccumulator {
  size_t errors = 0;
  size_t words = 0;

  void add(const std::vector<int>& ref, const std::vector<int>& hyp);
  double rate() const;
};

// Best achievable WER if the closest candidate of each list were chosen.
size_t oracle_errors(const NBestList& nbest, const std::vector<int>& ref);

}  // namespace avur
