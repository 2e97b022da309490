#pragma once

#include "avur/amf/decoder.hpp"

#include <functional>
#include <iosfwd>
#include <string>

namespace avur {

struct Hypothesis {
  std::vector<int> tokens;  // transcript symbols, BOS/EOS stripped
  double log_prob = 0.0;    // sum of token log-probabilities (EOS included when finished)
  double score = 0.0;       // s_infer: log_prob / scored length
  bool forced = false;      // hit max length without EOS
};

struct NBestList {
  std::string utterance_id;
  std::vector<Hypothesis> candidates;      // first-pass order: score descending
  std::vector<double> rescore_scores;      // r_i, empty until rescored

  size_t size() const { return candidates.size(); }
  // N >= min_size, distinct candidates, scores non-increasing.
  void validate(size_t min_size = 2) const;
};

struct BeamConfig {
  int beam_width = 8;
  int nbest = 5;
  int max_len = 16;  // decoding steps, EOS included
  int bos = 0;
  int eos = 1;
};

// Log-probabilities over the full output vocabulary after the given prefix
// (prefix includes BOS).
using LogProbFn = std::function<RowVector(const std::vector<int>& prefix)>;

// Length-normalized beam search. Live hypotheses are pruned to beam_width by
// cumulative log-probability; EOS extensions are moved to the finished pool;
// BOS is never emitted. Ties break by lexicographically smaller token ids.
// Returns the top nbest finished hypotheses, topped up with forced-terminated
// live ones when too few reached EOS.
NBestList beam_search(const LogProbFn& log_probs, const BeamConfig& cfg);

// Model-backed search over one utterance's prepared context.
NBestList beam_search(AvsrModel& model, Tape& t, const DecoderContext& ctx, const BeamConfig& cfg);

std::vector<int> greedy_decode(const LogProbFn& log_probs, const BeamConfig& cfg);

// Plain-text records, one per candidate:
//   utterance_id <TAB> rank <TAB> space-separated token ids <TAB> s_infer
// rank is 1-based first-pass rank; s_infer is the shortest round-trip decimal.
void write_nbest(std::ostream& os, const std::vector<NBestList>& lists);
std::vector<NBestList> read_nbest(std::istream& is);
void write_nbest_file(const std::string& path, const std::vector<NBestList>& lists);
std::vector<NBestList> read_nbest_file(const std::string& path);

std::string format_double(double v);

}  // namespace avur
