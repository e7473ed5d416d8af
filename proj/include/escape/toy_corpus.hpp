#pragma once

#include "escape/corpus.hpp"
#include "escape/tokenizer.hpp"

#include <string>
#include <vector>

namespace escape {

// Bundled synthetic writing-task corpus. Human documents come from a
// template grammar over a closed vocabulary in register "a" (plain word
// choices, no discourse fillers). A deterministic transform rewrites a
// document into register "b" (formal synonyms plus fillers); pretraining
// mixtures for the bundled tiny models are dominated by register "b", so
// their unconditioned samples carry measurable register-"b" signal while
// register "a" stays reachable through the style marker tokens.

inline constexpr const char* kStyleMarkerA = "<sty-a>";
inline constexpr const char* kStyleMarkerB = "<sty-b>";

struct ToyStyleParams {
  double p_style_b = 0.85;   // mixture weight of register "b" in pretraining
  double p_marker = 0.75;    // fraction of pretraining docs with a style marker
  double p_swap = 0.92;      // per-word a->b substitution rate in the transform
  double p_filler = 0.40;    // per-sentence filler insertion rate (from 3rd sentence)
  int copies_per_doc = 2;    // pretraining variants drawn per human doc
};

/// Deterministic full word list for the bundled tokenizer. Includes
/// specials, style markers, both registers, and all task lexicons.
const std::vector<std::string>& toy_lexicon();

/// Tokenizer over toy_lexicon(); shared by every bundled tiny model.
const Tokenizer& toy_tokenizer();

/// Synonym groups over the toy lexicon (register pairs plus neutral sets),
/// used by the word-swap text perturber.
const std::vector<std::vector<std::string>>& toy_synonym_groups();

/// Synthetic human documents for a task. Deterministic in (task, n, seed).
/// News docs carry a headline; essay/creative only a body.
std::vector<RawHumanDoc> make_toy_human_docs(Task task, int n, uint64_t seed);

/// Rewrites a register-"a" text into register "b": aligned synonym
/// substitutions plus sentence-initial fillers after the second sentence.
std::string style_b_transform(const std::string& text, uint64_t seed,
                              const ToyStyleParams& params = {});

/// Pretraining document strings (style marker prefix included when drawn)
/// for the bundled tiny models: a mixture over all three tasks.
std::vector<std::string> make_pretrain_docs(int docs_per_task, uint64_t seed,
                                            const ToyStyleParams& params = {});

/// Words whose presence marks register "b" (substitutes and fillers).
const std::vector<std::string>& style_b_marker_words();

}  // namespace escape
