#include "escape/evalx.hpp"

#include "escape/io.hpp"
#include "escape/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace escape {

using nlohmann::json;
namespace fs = std::filesystem;

F1Result f1_ai(const std::vector<Label>& predictions, const std::vector<Label>& truths) {
  require(predictions.size() == truths.size(), "f1_ai: length mismatch");
  require(!predictions.empty(), "f1_ai: empty input");
  int tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const bool p = predictions[i] == Label::ai;
    const bool t = truths[i] == Label::ai;
    if (p && t) ++tp;
    else if (p && !t) ++fp;
    else if (!p && t) ++fn;
  }
  F1Result r;
  if (tp + fp == 0) r.degenerate = true;
  else r.precision = static_cast<double>(tp) / (tp + fp);
  if (tp + fn == 0) r.degenerate = true;
  else r.recall = static_cast<double>(tp) / (tp + fn);
  if (r.precision + r.recall > 0.0)
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  else
    r.degenerate = true;
  return r;
}

std::string to_string(EvasionMethod m) {
  switch (m) {
    case EvasionMethod::original: return "original";
    case EvasionMethod::escape: return "escape";
    case EvasionMethod::external: return "external";
  }
  throw Error("unreachable evasion method value");
}

EvasionMethod method_from_string(const std::string& s) {
  if (s == "original") return EvasionMethod::original;
  if (s == "escape") return EvasionMethod::escape;
  if (s == "external") return EvasionMethod::external;
  throw Error("unknown evasion method: " + s);
}

EvalReport evaluate_detector(const DetectorHandle& det,
                             const std::vector<std::pair<std::string, Label>>& samples,
                             const EvalMeta& meta) {
  require(!samples.empty(), "evaluate_detector: no samples");
  EvalReport rep;
  rep.task = meta.task;
  rep.generator_model = meta.generator_model;
  rep.method = meta.method;
  rep.detector_id = meta.detector_id;
  std::vector<Label> preds, truths;
  for (const auto& [text, truth] : samples) {
    try {
      preds.push_back(classify(det, text).label);
      truths.push_back(truth);
    } catch (const Error&) {
      ++rep.n_skipped;
    }
  }
  require(!preds.empty(), "evaluate_detector: every sample failed to classify");
  const F1Result f = f1_ai(preds, truths);
  rep.f1_ai = f.f1;
  rep.precision_ai = f.precision;
  rep.recall_ai = f.recall;
  rep.degenerate = f.degenerate;
  rep.n_samples = static_cast<int>(preds.size());
  return rep;
}

PerplexityResult perplexity(const ModelHandle& scorer, const std::string& text) {
  PerplexityResult r;
  r.ppl = std::exp(-mean_token_log_prob(scorer, text, &r.windowed));
  return r;
}

PerplexityReport perplexity_change(const std::vector<std::string>& original_texts,
                                   const std::vector<std::string>& evasive_texts,
                                   const ModelHandle& scorer, const std::string& method,
                                   Task task) {
  require(!original_texts.empty() && !evasive_texts.empty(),
          "perplexity_change: both text lists must be non-empty");
  PerplexityReport rep;
  rep.method = method;
  rep.task = task;
  rep.scorer_model_id = scorer.id;
  auto mean_ppl = [&](const std::vector<std::string>& texts) {
    double sum = 0.0;
    for (const auto& t : texts) {
      const auto p = perplexity(scorer, t);
      sum += p.ppl;
      if (p.windowed) ++rep.n_windowed;
    }
    return sum / static_cast<double>(texts.size());
  };
  rep.mean_ppl_original = mean_ppl(original_texts);
  rep.mean_ppl_evasive = mean_ppl(evasive_texts);
  rep.ppl_change = rep.mean_ppl_evasive - rep.mean_ppl_original;
  rep.n_texts = static_cast<int>(evasive_texts.size());
  return rep;
}

std::string random_word_substitution(const std::string& text, double frac, uint64_t seed,
                                     const Tokenizer& tok) {
  require(frac >= 0.0 && frac <= 1.0, "substitution fraction must be in [0,1]");
  std::vector<std::string> plain;  // non-special vocabulary to draw from
  for (const auto& w : tok.vocab())
    if (!(w.size() >= 2 && w.front() == '<' && w.back() == '>')) plain.push_back(w);
  require(!plain.empty(), "vocabulary has no plain words");
  auto words = Tokenizer::split_words(text);
  Rng rng(derive_seed(seed, text));
  for (auto& w : words)
    if (rng.uniform() < frac) w = plain[rng.below(plain.size())];
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<GridCell> transfer_grid(const std::vector<fs::path>& prompt_ckpts,
                                    const std::vector<ModelHandle>& targets,
                                    const std::vector<std::pair<std::string, DetectorHandle>>&
                                        detectors,
                                    const std::vector<CorpusRecord>& human_test,
                                    const GenerationConfig& gen, Task task) {
  require(!human_test.empty(), "transfer_grid: no evaluation records");
  std::vector<GridCell> grid;
  for (const auto& ckpt_path : prompt_ckpts) {
    const SoftPrompt sp = load_soft_prompt(ckpt_path);
    for (const auto& target : targets) {
      // generations are shared by all detectors for this (prompt, target)
      std::vector<std::pair<std::string, Label>> samples;
      std::string failure;
      if (sp.embed_dim() != target.config().d_model) {
        failure = "embed_dim " + std::to_string(sp.embed_dim()) + " vs model " +
                  std::to_string(target.config().d_model);
      } else {
        for (size_t i = 0; i < human_test.size(); ++i) {
          const auto& rec = human_test[i];
          samples.emplace_back(rec.text, Label::human);
          TokenSequence prompt{target.tok->encode(rec.prompt)};
          GenerationConfig g = gen;
          g.seed = derive_seed(gen.seed, "grid-gen", i);
          const auto out =
              generate<float>(*target.lm, &sp, prompt, g, target.specials);
          samples.emplace_back(target.tok->decode(out.tokens), Label::ai);
        }
      }
      for (const auto& [det_id, det] : detectors) {
        GridCell cell;
        cell.prompt_source_model = sp.source_model_id;
        cell.target_model = target.id;
        cell.detector_id = det_id;
        cell.task = task;
        if (!failure.empty()) {
          cell.hole = true;
          cell.hole_reason = failure;
        } else {
          EvalMeta meta{task, target.id, EvasionMethod::escape, det_id};
          cell.report = evaluate_detector(det, samples, meta);
        }
        grid.push_back(std::move(cell));
      }
    }
  }
  return grid;
}

namespace {

std::string fmt3(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

void pad(std::string& s, size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
}

std::string rule(const std::vector<size_t>& widths) {
  std::string s;
  for (size_t w : widths) s += std::string(w, '-') + "  ";
  s += '\n';
  return s;
}

}  // namespace

std::string render_f1_table(const std::vector<EvalReport>& reports) {
  // rows: (task, generator, method); columns: detectors
  std::vector<std::string> det_ids;
  for (const auto& r : reports)
    if (std::find(det_ids.begin(), det_ids.end(), r.detector_id) == det_ids.end())
      det_ids.push_back(r.detector_id);
  std::vector<std::tuple<Task, std::string, EvasionMethod>> rows;
  for (const auto& r : reports) {
    auto key = std::make_tuple(r.task, r.generator_model, r.method);
    if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
  }
  const size_t label_w = 40;
  std::vector<size_t> widths{label_w};
  for (const auto& d : det_ids) widths.push_back(std::max<size_t>(8, d.size()));
  std::string out = "AI-class F1 by evasion method\n";
  std::string head(label_w, ' ');
  out += head + "  ";
  for (size_t i = 0; i < det_ids.size(); ++i) {
    std::string h = det_ids[i];
    pad(h, widths[i + 1]);
    out += h + "  ";
  }
  out += '\n' + rule(widths);
  for (const auto& [task, gen_model, method] : rows) {
    std::string label = to_string(task) + " / " + gen_model + " / " + to_string(method);
    pad(label, label_w);
    out += label + "  ";
    for (size_t i = 0; i < det_ids.size(); ++i) {
      std::string cell = "-";
      for (const auto& r : reports)
        if (r.task == task && r.generator_model == gen_model && r.method == method &&
            r.detector_id == det_ids[i])
          cell = fmt3(r.f1_ai);
      pad(cell, widths[i + 1]);
      out += cell + "  ";
    }
    out += '\n';
  }
  return out;
}

std::string render_transfer_table(const std::vector<GridCell>& grid) {
  std::vector<std::string> sources, tgts, dets;
  for (const auto& c : grid) {
    if (std::find(sources.begin(), sources.end(), c.prompt_source_model) == sources.end())
      sources.push_back(c.prompt_source_model);
    if (std::find(tgts.begin(), tgts.end(), c.target_model) == tgts.end())
      tgts.push_back(c.target_model);
    if (std::find(dets.begin(), dets.end(), c.detector_id) == dets.end())
      dets.push_back(c.detector_id);
  }
  std::string out = "Transfer grid: AI-class F1 (source prompt row, target model column)\n";
  const size_t label_w = 34;
  std::vector<size_t> widths{label_w};
  for (const auto& t : tgts) widths.push_back(std::max<size_t>(8, t.size()));
  for (const auto& det : dets) {
    out += "detector: " + det + '\n';
    std::string head(label_w, ' ');
    out += head + "  ";
    for (size_t i = 0; i < tgts.size(); ++i) {
      std::string h = tgts[i];
      pad(h, widths[i + 1]);
      out += h + "  ";
    }
    out += '\n' + rule(widths);
    for (const auto& s : sources) {
      std::string label = "prompt from " + s;
      pad(label, label_w);
      out += label + "  ";
      for (size_t i = 0; i < tgts.size(); ++i) {
        std::string cell = "-";
        for (const auto& c : grid)
          if (c.prompt_source_model == s && c.target_model == tgts[i] && c.detector_id == det)
            cell = c.hole ? "(hole)" : fmt3(c.report.f1_ai);
        pad(cell, widths[i + 1]);
        out += cell + "  ";
      }
      out += '\n';
    }
  }
  return out;
}

std::string render_ppl_table(const std::vector<PerplexityReport>& reports) {
  std::string out = "Perplexity change under independent scorer\n";
  std::vector<size_t> widths{24, 10, 12, 12, 12, 12};
  std::vector<std::string> head{"method", "task", "ppl(orig)", "ppl(evasive)", "change",
                                "scorer"};
  for (size_t i = 0; i < head.size(); ++i) {
    pad(head[i], widths[i]);
    out += head[i] + "  ";
  }
  out += '\n' + rule(widths);
  for (const auto& r : reports) {
    std::vector<std::string> cells{r.method,
                                   to_string(r.task),
                                   fmt3(r.mean_ppl_original),
                                   fmt3(r.mean_ppl_evasive),
                                   fmt3(r.ppl_change),
                                   r.scorer_model_id};
    for (size_t i = 0; i < cells.size(); ++i) {
      pad(cells[i], widths[i]);
      out += cells[i] + "  ";
    }
    out += '\n';
  }
  return out;
}

std::string eval_report_to_json(const EvalReport& r) {
  json j{{"task", to_string(r.task)},
         {"generator_model", r.generator_model},
         {"method", to_string(r.method)},
         {"detector_id", r.detector_id},
         {"f1_ai", r.f1_ai},
         {"precision_ai", r.precision_ai},
         {"recall_ai", r.recall_ai},
         {"degenerate", r.degenerate},
         {"n_samples", r.n_samples},
         {"n_skipped", r.n_skipped}};
  return j.dump();
}

std::string ppl_report_to_json(const PerplexityReport& r) {
  json j{{"method", r.method},
         {"task", to_string(r.task)},
         {"mean_ppl_original", r.mean_ppl_original},
         {"mean_ppl_evasive", r.mean_ppl_evasive},
         {"ppl_change", r.ppl_change},
         {"scorer_model_id", r.scorer_model_id},
         {"n_texts", r.n_texts},
         {"n_windowed", r.n_windowed}};
  return j.dump();
}

std::string grid_cell_to_json(const GridCell& c) {
  json j{{"prompt_source_model", c.prompt_source_model},
         {"target_model", c.target_model},
         {"detector_id", c.detector_id},
         {"task", to_string(c.task)},
         {"hole", c.hole}};
  if (c.hole) j["hole_reason"] = c.hole_reason;
  else j["report"] = json::parse(eval_report_to_json(c.report));
  return j.dump();
}

EvalReport eval_report_from_json(const std::string& text) {
  const json j = json::parse(text);
  EvalReport r;
  r.task = task_from_string(j.at("task").get<std::string>());
  r.generator_model = j.at("generator_model").get<std::string>();
  r.method = method_from_string(j.at("method").get<std::string>());
  r.detector_id = j.at("detector_id").get<std::string>();
  r.f1_ai = j.at("f1_ai").get<double>();
  r.precision_ai = j.at("precision_ai").get<double>();
  r.recall_ai = j.at("recall_ai").get<double>();
  r.degenerate = j.at("degenerate").get<bool>();
  r.n_samples = j.at("n_samples").get<int>();
  r.n_skipped = j.at("n_skipped").get<int>();
  return r;
}

PerplexityReport ppl_report_from_json(const std::string& text) {
  const json j = json::parse(text);
  PerplexityReport r;
  r.method = j.at("method").get<std::string>();
  r.task = task_from_string(j.at("task").get<std::string>());
  r.mean_ppl_original = j.at("mean_ppl_original").get<double>();
  r.mean_ppl_evasive = j.at("mean_ppl_evasive").get<double>();
  r.ppl_change = j.at("ppl_change").get<double>();
  r.scorer_model_id = j.at("scorer_model_id").get<std::string>();
  r.n_texts = j.at("n_texts").get<int>();
  r.n_windowed = j.at("n_windowed").get<int>();
  return r;
}

GridCell grid_cell_from_json(const std::string& text) {
  const json j = json::parse(text);
  GridCell c;
  c.prompt_source_model = j.at("prompt_source_model").get<std::string>();
  c.target_model = j.at("target_model").get<std::string>();
  c.detector_id = j.at("detector_id").get<std::string>();
  c.task = task_from_string(j.at("task").get<std::string>());
  c.hole = j.at("hole").get<bool>();
  if (c.hole) c.hole_reason = j.at("hole_reason").get<std::string>();
  else c.report = eval_report_from_json(j.at("report").dump());
  return c;
}

void write_report_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string body;
  for (const auto& l : lines) body += l + '\n';
  write_text_file(path, body);
}

}  // namespace escape
