#include "avur/amf/beam_search.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace avur {

void NBestList::validate(size_t min_size) const {
  if (candidates.size() < min_size)
    throw std::invalid_argument("NBestList " + utterance_id + ": " + std::to_string(candidates.size()) +
                                " candidates, need at least " + std::to_string(min_size));
  std::set<std::vector<int>> seen;
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (!seen.insert(candidates[i].tokens).second)
      throw std::invalid_argument("NBestList " + utterance_id + ": duplicate candidate");
    if (i > 0 && candidates[i].score > candidates[i - 1].score)
      throw std::invalid_argument("NBestList " + utterance_id + ": scores not sorted descending");
  }
  if (!rescore_scores.empty() && rescore_scores.size() != candidates.size())
    throw std::invalid_argument("NBestList " + utterance_id + ": rescore score count mismatch");
}

namespace {

struct Extension {
  size_t parent;
  int token;
  double log_prob;
  std::vector<int> tokens;  // parent tokens + token (EOS included if token is EOS)
};

bool by_log_prob(const Extension& a, const Extension& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

bool by_score(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace

NBestList beam_search(const LogProbFn& log_probs, const BeamConfig& cfg) {
  if (cfg.nbest < 1 || cfg.beam_width < cfg.nbest)
    throw std::invalid_argument("beam_search: need beam_width >= nbest >= 1");
  if (cfg.max_len < 1) throw std::invalid_argument("beam_search: max_len must be >= 1");

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (int step = 0; step < cfg.max_len && !live.empty(); ++step) {
    std::vector<Extension> ext;
    for (size_t h = 0; h < live.size(); ++h) {
      std::vector<int> prefix{cfg.bos};
      prefix.insert(prefix.end(), live[h].tokens.begin(), live[h].tokens.end());
      const RowVector lp = log_probs(prefix);
      for (Eigen::Index tok = 0; tok < lp.size(); ++tok) {
        if (tok == cfg.bos) continue;
        Extension e{h, static_cast<int>(tok), live[h].log_prob + lp(tok), live[h].tokens};
        e.tokens.push_back(static_cast<int>(tok));
        ext.push_back(std::move(e));
      }
    }
    const size_t keep = std::min(ext.size(), static_cast<size_t>(cfg.beam_width));
    std::partial_sort(ext.begin(), ext.begin() + static_cast<std::ptrdiff_t>(keep), ext.end(), by_log_prob);
    std::vector<Hypothesis> next;
    for (size_t i = 0; i < keep; ++i) {
      Extension& e = ext[i];
      if (e.token == cfg.eos) {
        e.tokens.pop_back();
        const double len = static_cast<double>(e.tokens.size() + 1);
        finished.push_back({std::move(e.tokens), e.log_prob, e.log_prob / len, false});
      } else {
        next.push_back({std::move(e.tokens), e.log_prob, 0.0, false});
      }
    }
    live = std::move(next);
  }

  std::sort(finished.begin(), finished.end(), by_score);
  NBestList out;
  const size_t n = static_cast<size_t>(cfg.nbest);
  for (size_t i = 0; i < finished.size() && out.candidates.size() < n; ++i)
    out.candidates.push_back(finished[i]);
  if (out.candidates.size() < n) {
    for (auto& h : live) {
      h.forced = true;
      h.score = h.log_prob / static_cast<double>(std::max<size_t>(1, h.tokens.size()));
    }
    std::sort(live.begin(), live.end(), by_score);
    for (size_t i = 0; i < live.size() && out.candidates.size() < n; ++i) out.candidates.push_back(live[i]);
    std::stable_sort(out.candidates.begin(), out.candidates.end(), by_score);
  }
  return out;
}

NBestList beam_search(AvsrModel& model, Tape& t, const DecoderContext& ctx, const BeamConfig& cfg) {
  // Every prefix the search asks about extends one it asked about on the
  // previous step, so each call costs a single incremental decoder step.
  std::map<std::vector<int>, DecoderState> states;
  auto fn = [&](const std::vector<int>& prefix) -> RowVector {
    DecoderState state;
    if (prefix.size() > 1) {
      auto it = states.find(std::vector<int>(prefix.begin(), prefix.end() - 1));
      if (it == states.end()) throw std::logic_error("beam_search: prefix state missing");
      state = it->second;
    }
    RowVector z = model.step(t, ctx, state, prefix.back());
    states.emplace(prefix, std::move(state));
    return log_softmax_rows(Matrix(z)).row(0);
  };
  return beam_search(fn, cfg);
}

std::vector<int> greedy_decode(const LogProbFn& log_probs, const BeamConfig& cfg) {
  std::vector<int> tokens;
  for (int step = 0; step < cfg.max_len; ++step) {
    std::vector<int> prefix{cfg.bos};
    prefix.insert(prefix.end(), tokens.begin(), tokens.end());
    const RowVector lp = log_probs(prefix);
    int best = -1;
    for (Eigen::Index tok = 0; tok < lp.size(); ++tok) {
      if (tok == cfg.bos) continue;
      if (best < 0 || lp(tok) > lp(best)) best = static_cast<int>(tok);
    }
    if (best == cfg.eos) break;
    tokens.push_back(best);
  }
  return tokens;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_nbest(std::ostream& os, const std::vector<NBestList>& lists) {
  for (const auto& list : lists) {
    for (size_t i = 0; i < list.candidates.size(); ++i) {
      const auto& h = list.candidates[i];
      os << list.utterance_id << '\t' << (i + 1) << '\t';
      for (size_t k = 0; k < h.tokens.size(); ++k) os << (k ? " " : "") << h.tokens[k];
      os << '\t' << format_double(h.score) << '\n';
    }
  }
}

std::vector<NBestList> read_nbest(std::istream& is) {
  std::vector<NBestList> lists;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (line.back() == '\t') fields.emplace_back();
    if (fields.size() != 4)
      throw std::runtime_error("nbest line " + std::to_string(lineno) + ": expected 4 tab-separated fields");
    const size_t rank = std::stoul(fields[1]);
    if (lists.empty() || lists.back().utterance_id != fields[0]) {
      lists.push_back({});
      lists.back().utterance_id = fields[0];
    }
    NBestList& list = lists.back();
    if (rank != list.candidates.size() + 1)
      throw std::runtime_error("nbest line " + std::to_string(lineno) + ": rank out of sequence");
    Hypothesis h;
    std::stringstream ts(fields[2]);
    int tok;
    while (ts >> tok) h.tokens.push_back(tok);
    const auto& sf = fields[3];
    auto res = std::from_chars(sf.data(), sf.data() + sf.size(), h.score);
    if (res.ec != std::errc() || res.ptr != sf.data() + sf.size())
      throw std::runtime_error("nbest line " + std::to_string(lineno) + ": bad s_infer '" + sf + "'");
    list.candidates.push_back(std::move(h));
  }
  return lists;
}

void write_nbest_file(const std::string& path, const std::vector<NBestList>& lists) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_nbest(os, lists);
}

std::vector<NBestList> read_nbest_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("missing N-best file " + path);
  return read_nbest(is);
}

}  // namespace avur
