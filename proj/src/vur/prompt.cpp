#include "avur/vur/prompt.hpp"

#include <algorithm>
#include <sstream>

namespace avur {

namespace {

constexpr std::string_view kTokensSlot = "{tokens}";
constexpr std::string_view kCandidatesSlot = "{candidates}";
constexpr std::string_view kEndWord = "</c>";

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream is{std::string(s)};
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::string join(const std::vector<int>& xs, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

const std::vector<std::string>& prompt_vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v;
    for (auto& w : split_words(kPromptTemplate)) {
      if (w == kTokensSlot || w == kCandidatesSlot) continue;
      if (std::find(v.begin(), v.end(), w) == v.end()) v.push_back(w);
    }
    v.emplace_back(kEndWord);
    return v;
  }();
  return vocab;
}

int prompt_word_id(std::string_view word) {
  const auto& v = prompt_vocabulary();
  auto it = std::find(v.begin(), v.end(), word);
  if (it == v.end()) throw std::out_of_range("prompt word not in vocabulary: " + std::string(word));
  return static_cast<int>(it - v.begin());
}

std::string render_prompt(const VisualUnitSequence& units, const NBestList& nbest) {
  std::vector<std::string> cands;
  for (const auto& h : nbest.candidates) cands.push_back(join(h.tokens, " "));
  std::string joined;
  for (size_t i = 0; i < cands.size(); ++i) joined += (i ? ", " : "") + cands[i];

  std::string text(kPromptTemplate);
  text.replace(text.find(kTokensSlot), kTokensSlot.size(), join(units.labels(), " "));
  text.replace(text.find(kCandidatesSlot), kCandidatesSlot.size(), joined);
  return text;
}

Prompt build_prompt(const VisualUnitSequence& units, const NBestList& nbest) {
  if (nbest.candidates.empty()) throw std::invalid_argument("build_prompt: empty N-best list");
  Prompt p;
  p.text = render_prompt(units, nbest);
  const std::string_view tmpl = kPromptTemplate;
  for (const auto& w : split_words(tmpl.substr(0, tmpl.find(kTokensSlot)))) p.lead_words.push_back(prompt_word_id(w));
  p.candidates_word = prompt_word_id("[Candidates]");
  p.unit_labels = units.labels();
  const Eigen::Index dim = units.units.empty() ? 0 : units.units.front().mean.size();
  p.unit_features.resize(static_cast<Eigen::Index>(units.size()), dim);
  double start = 0.0;
  for (size_t m = 0; m < units.size(); ++m) {
    const auto& u = units.units[m];
    if (u.mean.size() != dim) throw ShapeError("build_prompt: unit features of differing width");
    p.unit_features.row(static_cast<Eigen::Index>(m)) = u.mean;
    p.unit_times.push_back(start + 0.5 * u.span);
    start += u.span;
  }
  for (const auto& h : nbest.candidates) p.candidates.push_back(h.tokens);
  return p;
}

}  // namespace avur
