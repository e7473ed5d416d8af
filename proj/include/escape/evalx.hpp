#pragma once

#include "escape/corpus.hpp"
#include "escape/detector.hpp"
#include "escape/generate.hpp"
#include "escape/model_registry.hpp"
#include "escape/soft_prompt.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace escape {

struct F1Result {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool degenerate = false;  // some denominator was zero
};

/// AI-class F1 (positive class = ai). Zero denominators yield 0 and set the
/// degenerate flag instead of dividing by zero.
F1Result f1_ai(const std::vector<Label>& predictions, const std::vector<Label>& truths);

enum class EvasionMethod { original, escape, external };
std::string to_string(EvasionMethod m);
EvasionMethod method_from_string(const std::string& s);

struct EvalMeta {
  Task task = Task::news;
  std::string generator_model;
  EvasionMethod method = EvasionMethod::original;
  std::string detector_id;
};

struct EvalReport {
  Task task = Task::news;
  std::string generator_model;
  EvasionMethod method = EvasionMethod::original;
  std::string detector_id;
  double f1_ai = 0.0;
  double precision_ai = 0.0;
  double recall_ai = 0.0;
  bool degenerate = false;
  int n_samples = 0;
  int n_skipped = 0;
};

/// Classifies every (text, truth) sample; per-sample classify failures are
/// skipped and counted rather than aborting the whole report.
EvalReport evaluate_detector(const DetectorHandle& det,
                             const std::vector<std::pair<std::string, Label>>& samples,
                             const EvalMeta& meta);

struct PerplexityResult {
  double ppl = 0.0;
  bool windowed = false;  // text exceeded scorer context, scored in chunks
};

/// exp(−mean token log-prob) under the scorer. Texts longer than the
/// scorer's context are scored in consecutive windows.
PerplexityResult perplexity(const ModelHandle& scorer, const std::string& text);

struct PerplexityReport {
  std::string method;
  Task task = Task::news;
  double mean_ppl_original = 0.0;
  double mean_ppl_evasive = 0.0;
  double ppl_change = 0.0;  // evasive − original
  std::string scorer_model_id;
  int n_texts = 0;
  int n_windowed = 0;
};

PerplexityReport perplexity_change(const std::vector<std::string>& original_texts,
                                   const std::vector<std::string>& evasive_texts,
                                   const ModelHandle& scorer, const std::string& method,
                                   Task task);

/// Replaces about `frac` of the word tokens with uniform draws from the
/// non-special vocabulary; the crude evasion baseline perplexity is judged
/// against.
std::string random_word_substitution(const std::string& text, double frac, uint64_t seed,
                                     const Tokenizer& tok);

struct GridCell {
  std::string prompt_source_model;
  std::string target_model;
  std::string detector_id;
  Task task = Task::news;
  bool hole = false;
  std::string hole_reason;
  EvalReport report;
};

/// Evaluates every loadable (prompt checkpoint → target model) pair against
/// every detector: evasive generations from the target's test prompts versus
/// the human test texts. Dimension-incompatible pairs become holes.
std::vector<GridCell> transfer_grid(const std::vector<std::filesystem::path>& prompt_ckpts,
                                    const std::vector<ModelHandle>& targets,
                                    const std::vector<std::pair<std::string, DetectorHandle>>&
                                        detectors,
                                    const std::vector<CorpusRecord>& human_test,
                                    const GenerationConfig& gen, Task task);

// Plain-text table renderers for the three report shapes: detector F1 by
// evasion method, the source-by-target transfer grid, and perplexity change
// by method.
std::string render_f1_table(const std::vector<EvalReport>& reports);
std::string render_transfer_table(const std::vector<GridCell>& grid);
std::string render_ppl_table(const std::vector<PerplexityReport>& reports);

// Line-delimited JSON report IO.
std::string eval_report_to_json(const EvalReport& r);
std::string ppl_report_to_json(const PerplexityReport& r);
std::string grid_cell_to_json(const GridCell& c);
EvalReport eval_report_from_json(const std::string& text);
PerplexityReport ppl_report_from_json(const std::string& text);
GridCell grid_cell_from_json(const std::string& text);
void write_report_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

}  // namespace escape
