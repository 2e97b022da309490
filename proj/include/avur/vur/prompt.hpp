#pragma once

#include "avur/amf/beam_search.hpp"
#include "avur/vur/units.hpp"

#include <string_view>

namespace avur {

inline constexpr int kPromptTemplateVersion = 1;

// Scorer prompt, version 1. {tokens} receives the space-separated unit labels
// and {candidates} the comma-separated candidate transcriptions.
inline constexpr std::string_view kPromptTemplate =
    "[Instruction]: You are an AVSR hypothesis evaluator. Given the input below, assign scores to "
    "all candidates based on lip-motion plausibility and linguistic coherence. "
    "Input: [Visual Units] {tokens} [Candidates] {candidates}";

struct Prompt {
  std::string text;
  std::vector<int> lead_words;   // template words before the unit labels
  std::vector<int> unit_labels;
  Matrix unit_features;          // M x D_v averaged features
  std::vector<double> unit_times;  // span centres in frames
  int candidates_word = 0;       // the "[Candidates]" marker
  std::vector<std::vector<int>> candidates;
};

// Words of the template, in first-appearance order, plus the end-of-candidate
// word. The scorer's text embedding table is indexed by position in this list.
const std::vector<std::string>& prompt_vocabulary();
int prompt_word_id(std::string_view word);

std::string render_prompt(const VisualUnitSequence& units, const NBestList& nbest);
Prompt build_prompt(const VisualUnitSequence& units, const NBestList& nbest);

}  // namespace avur
