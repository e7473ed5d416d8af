#include "escape/pipeline.hpp"

#include "escape/corpus.hpp"
#include "escape/detector.hpp"
#include "escape/evalx.hpp"
#include "escape/io.hpp"
#include "escape/model_registry.hpp"
#include "escape/ppo.hpp"
#include "escape/toy_corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fcntl.h>
#include <fstream>
#include <iostream>
#include <map>
#include <unistd.h>

namespace escape {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

uint64_t parse_hex64(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

/// One pipeline run per directory: .lock is created exclusively and removed
/// on scope exit, including on exceptions.
struct DirLock {
  explicit DirLock(const fs::path& dir) : path(dir / ".lock") {
    const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    require(fd >= 0, "run directory is locked (remove stale " + path.string() +
                         " if no other run is active)");
    ::close(fd);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path, ec);
  }
  fs::path path;
};

struct Ctx {
  RunConfig cfg;
  fs::path dir;
  fs::path home;
  std::map<std::string, ModelHandle> model_cache;
  std::optional<std::vector<CorpusRecord>> corpus_cache, gens_cache;
  std::optional<DetectorHandle> det_cache;

  Task task() const { return task_from_string(cfg.data.task); }

  const ModelHandle& model(const std::string& id) {
    auto it = model_cache.find(id);
    if (it == model_cache.end()) it = model_cache.emplace(id, prepare_model(id, home)).first;
    return it->second;
  }

  const std::vector<CorpusRecord>& corpus() {
    if (!corpus_cache) corpus_cache = read_corpus(dir / "corpus.jsonl");
    return *corpus_cache;
  }
  const std::vector<CorpusRecord>& generations() {
    if (!gens_cache) gens_cache = read_corpus(dir / "generations.jsonl");
    return *gens_cache;
  }
  const DetectorHandle& detector() {
    if (!det_cache) det_cache = load_detector(dir / "detector", home);
    return *det_cache;
  }
};

/// Longest prompt that still leaves room for max_len generated tokens.
std::vector<TokenId> encode_prompt(const Ctx& c, const ModelHandle& m, const std::string& text) {
  std::vector<TokenId> ids = m.tok->encode(text);
  const int nb = m.specials.bos >= 0 ? 1 : 0;
  const int budget = m.config().max_ctx - c.cfg.gen.max_len - nb - c.cfg.prompt.k;
  require(budget >= 1, "gen.max_len plus prompt.k leave no room for prompt text");
  if (static_cast<int>(ids.size()) > budget) ids.resize(static_cast<size_t>(budget));
  return ids;
}

std::vector<TokenSequence> split_prompts(Ctx& c, const ModelHandle& m, Split split) {
  std::vector<TokenSequence> out;
  for (const auto& rec : filter_records(c.corpus(), Label::human, split)) {
    auto ids = encode_prompt(c, m, rec.prompt);
    if (!ids.empty()) out.push_back({std::move(ids)});
  }
  require(!out.empty(), "no usable prompts in split");
  return out;
}

// --- stages ---------------------------------------------------------------

std::vector<std::string> stage_corpus(Ctx& c) {
  const Task task = c.task();
  std::vector<CorpusRecord> recs;
  if (!c.cfg.data.corpus.empty()) {
    recs = filter_records(read_corpus(c.cfg.data.corpus), Label::human, std::nullopt);
    std::erase_if(recs, [&](const CorpusRecord& r) { return r.task != task; });
    require(static_cast<int>(recs.size()) >= c.cfg.data.n_total,
            "external corpus has fewer than data.n_total human records for task " +
                c.cfg.data.task);
    std::sort(recs.begin(), recs.end(),
              [](const CorpusRecord& a, const CorpusRecord& b) { return a.id < b.id; });
    recs.resize(static_cast<size_t>(c.cfg.data.n_total));
  } else {
    const auto docs =
        make_toy_human_docs(task, c.cfg.data.n_total, derive_seed(c.cfg.seed, "toy-human"));
    recs = make_human_records(docs, task, toy_tokenizer());
  }
  SplitSpec spec;
  spec.n_total = c.cfg.data.n_total;
  spec.n_test = c.cfg.data.n_test;
  spec.n_val = c.cfg.data.n_val;
  spec.seed = derive_seed(c.cfg.seed, "split");
  split_corpus(recs, spec);
  write_corpus(c.dir / "corpus.jsonl", recs);
  c.corpus_cache = std::move(recs);
  return {"corpus.jsonl"};
}

std::vector<std::string> stage_generate(Ctx& c) {
  const ModelHandle& src = c.model(c.cfg.models.source_id);
  const uint64_t root = derive_seed(c.cfg.seed, "generate");
  std::vector<CorpusRecord> out;
  int empties = 0;
  for (const auto& rec : c.corpus()) {
    if (rec.label != Label::human) continue;
    const auto prompt = encode_prompt(c, src, rec.prompt);
    std::string text;
    for (uint64_t attempt = 0; attempt < 4 && text.empty(); ++attempt) {
      GenerationConfig g = c.cfg.gen;
      g.seed = derive_seed(derive_seed(root, rec.id), "attempt", attempt);
      text = decode_plain(*src.tok, generate<float>(*src.lm, nullptr, {prompt}, g, src.specials).tokens);
    }
    if (text.empty()) {
      ++empties;
      continue;
    }
    CorpusRecord ai;
    ai.id = rec.id + "-ai";
    ai.task = rec.task;
    ai.label = Label::ai;
    ai.generator = src.id;
    ai.prompt = rec.prompt;
    ai.text = text;
    ai.split = rec.split;
    out.push_back(std::move(ai));
  }
  if (empties > 0)
    std::cerr << "[generate] " << empties << " prompts produced only empty text, skipped\n";
  require(!out.empty(), "generation produced no usable AI text");
  write_corpus(c.dir / "generations.jsonl", out);
  c.gens_cache = std::move(out);
  return {"generations.jsonl"};
}

std::vector<std::string> stage_detector(Ctx& c) {
  const auto humans = filter_records(c.corpus(), Label::human, std::nullopt);
  const auto data = pair_detection_dataset(humans, c.generations());
  json meta;
  meta["kind"] = c.cfg.detector.kind;
  DetectorHandle det;
  if (c.cfg.detector.kind == "supervised") {
    FineTuneHyper h;
    h.lr = c.cfg.detector.lr;
    h.weight_decay = c.cfg.detector.weight_decay;
    h.epochs = c.cfg.detector.epochs;
    h.batch_size = c.cfg.detector.batch_size;
    h.seed = derive_seed(c.cfg.seed, "detector");
    const FineTuneResult res = fine_tune_detector(SupervisedParams{}, data, h);
    det = res.detector;
    meta["best_epoch"] = res.best_epoch;
    meta["val_f1_ai"] = res.val_f1_ai;
    meta["val_f1_human"] = res.val_f1_human;
  } else {
    PerturbationConfig pc;
    pc.n_perturbations = c.cfg.detector.n_perturbations;
    pc.span_fraction = c.cfg.detector.span_fraction;
    pc.perturber = perturber_from_string(c.cfg.detector.perturber);
    pc.seed = derive_seed(c.cfg.seed, "detector-perturb");
    det = calibrate_zero_shot(c.model(c.cfg.models.source_id), data, pc);
    meta["threshold"] = det.threshold;
    meta["calib_scale"] = det.calib_scale;
  }
  save_detector(det, c.dir / "detector");
  write_text_file(c.dir / "detector_meta.json", meta.dump(2) + "\n");
  c.det_cache = std::move(det);
  return {"detector/manifest.json", "detector_meta.json"};
}

RewardModel make_run_reward_model(Ctx& c, const ModelHandle& model, const DetectorHandle& det) {
  if (c.cfg.reward_mode == "identity") return RewardModel{};
  // Calibrated mode: fit the monotone score map on grouped plain-model
  // candidates, best-in-group as the preferred sample.
  const auto prompts = split_prompts(c, model, Split::train);
  const size_t n_groups = std::min<size_t>(24, prompts.size());
  const uint64_t root = derive_seed(c.cfg.seed, "reward-fit");
  std::vector<RewardGroup> groups;
  for (size_t i = 0; i < n_groups; ++i) {
    RewardGroup grp;
    for (uint64_t j = 0; j < 4; ++j) {
      GenerationConfig g = c.cfg.gen;
      g.seed = derive_seed(root, "candidate", (static_cast<uint64_t>(i) << 8) | j);
      const std::string text =
          decode_plain(*model.tok, generate<float>(*model.lm, nullptr, prompts[i], g,
                                                   model.specials)
                                        .tokens);
      if (text.empty()) continue;
      grp.push_back({text, reward(det, text)});
    }
    if (grp.size() >= 2) groups.push_back(std::move(grp));
  }
  require(!groups.empty(), "reward calibration found no usable candidate groups");
  return fit_reward_model(groups, RewardMode::calibrated);
}

struct TrainStreams {
  std::ofstream rewards, log;
  TrainCallbacks callbacks();
};

TrainCallbacks TrainStreams::callbacks() {
  TrainCallbacks cb;
  cb.on_sample = [this](const SampleLogEntry& e) {
    json j{{"step", e.step},
           {"raw_reward", e.record.raw_reward},
           {"kl_sum", e.record.kl_sum},
           {"beta", e.record.beta},
           {"combined", e.record.combined}};
    rewards << j.dump() << "\n";
  };
  cb.on_step = [this](const TrainLogEntry& e) {
    json j{{"step", e.step},
           {"mean_reward", e.mean_reward},
           {"mean_kl", e.mean_kl},
           {"val_detector_f1", e.val_detector_f1},
           {"prompt_update_norm", e.prompt_update_norm},
           {"aborted", e.aborted}};
    log << j.dump() << "\n";
    log.flush();
  };
  cb.on_eval = [](int step, double f1) {
    std::cerr << "[train] step " << step << " val F1 " << f1 << "\n";
  };
  return cb;
}

json train_meta(const TrainResult& res) {
  return json{{"baseline_val_f1", res.baseline_val_f1},
              {"best_val_f1", res.best_val_f1},
              {"steps_run", res.steps_run},
              {"base_checksum_before", hex64(res.base_checksum_before)},
              {"base_checksum_after", hex64(res.base_checksum_after)}};
}

std::vector<std::string> stage_prompt_train(Ctx& c) {
  const ModelHandle& model = c.model(c.cfg.models.source_id);
  const DetectorHandle& det = c.detector();
  const auto train_prompts = split_prompts(c, model, Split::train);
  const auto val_prompts = split_prompts(c, model, Split::val);

  SoftPrompt init = init_soft_prompt(*model.lm, *model.tok, c.cfg.prompt.k,
                                     c.cfg.prompt.init_text, derive_seed(c.cfg.seed, "prompt-init"));
  init.source_model_id = model.id;
  init.task = c.cfg.data.task;

  const RewardModel rm = make_run_reward_model(c, model, det);
  PPOConfig pc = c.cfg.ppo;
  pc.seed = derive_seed(c.cfg.seed, "ppo");
  GenerationConfig g = c.cfg.gen;
  g.seed = derive_seed(c.cfg.seed, "ppo-gen");

  TrainStreams streams;
  streams.rewards.open(c.dir / "rewards.jsonl");
  streams.log.open(c.dir / "train_log.jsonl");
  const TrainResult res = train_evasive_prompt(model, det, train_prompts, val_prompts, rm, pc, g,
                                               std::move(init), streams.callbacks());
  save_soft_prompt(res.best_prompt, c.dir / "prompt_best.escp");
  save_soft_prompt(res.final_prompt, c.dir / "prompt_final.escp");
  write_text_file(c.dir / "train_meta.json", train_meta(res).dump(2) + "\n");
  return {"prompt_best.escp", "prompt_final.escp", "rewards.jsonl", "train_log.jsonl",
          "train_meta.json"};
}

std::vector<std::string> stage_transfer(Ctx& c) {
  const SoftPrompt source = load_soft_prompt(c.dir / "prompt_best.escp");
  const ModelHandle& target = c.model(c.cfg.models.target_id);
  const DetectorHandle& det = c.detector();
  const auto train_prompts = split_prompts(c, target, Split::train);
  const auto val_prompts = split_prompts(c, target, Split::val);

  const int e_s = source.embed_dim();
  const int e_t = target.config().d_model;
  const int e_h = c.cfg.projector.e_h;
  const Projector proj =
      (e_s == e_t && e_h >= e_s)
          ? init_projector_identity(e_s, e_h)
          : init_projector(e_s, e_h, e_t, derive_seed(c.cfg.seed, "projector-init"));

  const RewardModel rm = make_run_reward_model(c, target, det);
  PPOConfig pc = c.cfg.ppo;
  pc.max_steps = c.cfg.resolved_transfer_steps();
  pc.seed = derive_seed(c.cfg.seed, "transfer");
  GenerationConfig g = c.cfg.gen;
  g.seed = derive_seed(c.cfg.seed, "transfer-gen");

  TrainStreams streams;
  streams.rewards.open(c.dir / "transfer_rewards.jsonl");
  streams.log.open(c.dir / "transfer_log.jsonl");
  const TrainResult res = train_transfer(source, target, det, train_prompts, val_prompts, rm, pc,
                                         g, proj, streams.callbacks());
  require(res.best_projector.has_value(), "transfer training returned no projector");
  save_projector(*res.best_projector, c.dir / "projector_best.espj");
  save_soft_prompt(res.best_prompt, c.dir / "transfer_best.escp");
  write_text_file(c.dir / "transfer_meta.json", train_meta(res).dump(2) + "\n");
  return {"transfer_best.escp", "projector_best.espj", "transfer_rewards.jsonl",
          "transfer_log.jsonl", "transfer_meta.json"};
}

std::vector<CorpusRecord> evasive_records(Ctx& c, const ModelHandle& m, const SoftPrompt& sp,
                                          const std::vector<CorpusRecord>& humans,
                                          const char* seed_label) {
  const uint64_t root = derive_seed(c.cfg.seed, seed_label);
  std::vector<CorpusRecord> out;
  for (const auto& rec : humans) {
    const auto prompt = encode_prompt(c, m, rec.prompt);
    std::string text;
    for (uint64_t attempt = 0; attempt < 4 && text.empty(); ++attempt) {
      GenerationConfig g = c.cfg.gen;
      g.seed = derive_seed(derive_seed(root, rec.id), "attempt", attempt);
      text = decode_plain(*m.tok, generate<float>(*m.lm, &sp, {prompt}, g, m.specials).tokens);
    }
    if (text.empty()) continue;
    CorpusRecord ai;
    ai.id = rec.id + "-" + seed_label;
    ai.task = rec.task;
    ai.label = Label::ai;
    ai.generator = m.id;
    ai.prompt = rec.prompt;
    ai.text = text;
    ai.split = rec.split;
    out.push_back(std::move(ai));
  }
  return out;
}

std::vector<std::pair<std::string, Label>> detection_samples(
    const std::vector<CorpusRecord>& humans, const std::vector<CorpusRecord>& ais) {
  std::vector<std::pair<std::string, Label>> s;
  for (const auto& r : humans) s.emplace_back(r.text, Label::human);
  for (const auto& r : ais) s.emplace_back(r.text, Label::ai);
  return s;
}

std::vector<std::string> texts_of(const std::vector<CorpusRecord>& recs) {
  std::vector<std::string> t;
  for (const auto& r : recs) t.push_back(r.text);
  return t;
}

std::vector<std::string> stage_eval(Ctx& c) {
  const Task task = c.task();
  const auto humans_test = filter_records(c.corpus(), Label::human, Split::test);
  const auto ai_test = filter_records(c.generations(), Label::ai, Split::test);
  const DetectorHandle& det = c.detector();
  const std::string det_id = c.cfg.detector.kind;
  const ModelHandle& src = c.model(c.cfg.models.source_id);
  const ModelHandle& tgt = c.model(c.cfg.models.target_id);
  const ModelHandle& scorer = c.model(c.cfg.models.scorer_id);

  const SoftPrompt best = load_soft_prompt(c.dir / "prompt_best.escp");
  const SoftPrompt transferred = load_soft_prompt(c.dir / "transfer_best.escp");
  const auto evasive_src = evasive_records(c, src, best, humans_test, "eval-evasive");
  const auto evasive_tgt = evasive_records(c, tgt, transferred, humans_test, "eval-transfer");

  std::vector<EvalReport> reports;
  reports.push_back(evaluate_detector(det, detection_samples(humans_test, ai_test),
                                      {task, src.id, EvasionMethod::original, det_id}));
  reports.push_back(evaluate_detector(det, detection_samples(humans_test, evasive_src),
                                      {task, src.id, EvasionMethod::escape, det_id}));
  reports.push_back(evaluate_detector(det, detection_samples(humans_test, evasive_tgt),
                                      {task, tgt.id, EvasionMethod::escape, det_id}));

  const auto originals = texts_of(ai_test);
  std::vector<std::string> substituted;
  for (size_t i = 0; i < originals.size(); ++i)
    substituted.push_back(random_word_substitution(
        originals[i], 0.10, derive_seed(derive_seed(c.cfg.seed, "random-sub"), "text", i),
        *scorer.tok));
  std::vector<PerplexityReport> ppl;
  ppl.push_back(perplexity_change(originals, texts_of(evasive_src), scorer, "escape", task));
  ppl.push_back(
      perplexity_change(originals, texts_of(evasive_tgt), scorer, "escape_transfer", task));
  ppl.push_back(perplexity_change(originals, substituted, scorer, "random_sub", task));

  GenerationConfig gg = c.cfg.gen;
  gg.seed = derive_seed(c.cfg.seed, "grid-gen");
  const auto grid = transfer_grid({c.dir / "prompt_best.escp", c.dir / "transfer_best.escp"},
                                  {src, tgt}, {{det_id, det}}, humans_test, gg, task);

  fs::create_directories(c.dir / "eval");
  json jdet = json::array(), jppl = json::array(), jgrid = json::array();
  for (const auto& r : reports) jdet.push_back(json::parse(eval_report_to_json(r)));
  for (const auto& r : ppl) jppl.push_back(json::parse(ppl_report_to_json(r)));
  for (const auto& cell : grid) jgrid.push_back(json::parse(grid_cell_to_json(cell)));
  write_text_file(c.dir / "eval/detection.json", jdet.dump(2) + "\n");
  write_text_file(c.dir / "eval/perplexity.json", jppl.dump(2) + "\n");
  write_text_file(c.dir / "eval/grid.json", jgrid.dump(2) + "\n");
  return {"eval/detection.json", "eval/perplexity.json", "eval/grid.json"};
}

std::vector<std::string> stage_report(Ctx& c) {
  std::vector<EvalReport> reports;
  for (const auto& j : json::parse(read_text_file(c.dir / "eval/detection.json")))
    reports.push_back(eval_report_from_json(j.dump()));
  std::vector<PerplexityReport> ppl;
  for (const auto& j : json::parse(read_text_file(c.dir / "eval/perplexity.json")))
    ppl.push_back(ppl_report_from_json(j.dump()));
  std::vector<GridCell> grid;
  for (const auto& j : json::parse(read_text_file(c.dir / "eval/grid.json")))
    grid.push_back(grid_cell_from_json(j.dump()));

  std::vector<std::string> lines;
  lines.push_back("# Run report");
  lines.push_back("");
  lines.push_back("## Detection F1 by evasion method");
  lines.push_back("");
  lines.push_back(render_f1_table(reports));
  lines.push_back("## Soft prompt transfer grid");
  lines.push_back("");
  lines.push_back(render_transfer_table(grid));
  lines.push_back("## Perplexity change under scorer " + c.cfg.models.scorer_id);
  lines.push_back("");
  lines.push_back(render_ppl_table(ppl));
  write_report_lines(c.dir / "report.md", lines);
  return {"report.md"};
}

using StageFn = std::vector<std::string> (*)(Ctx&);

const std::vector<std::pair<std::string, StageFn>>& stage_table() {
  static const std::vector<std::pair<std::string, StageFn>> t = {
      {"corpus", stage_corpus},       {"generate", stage_generate},
      {"detector", stage_detector},   {"prompt-train", stage_prompt_train},
      {"transfer", stage_transfer},   {"eval", stage_eval},
      {"report", stage_report},
  };
  return t;
}

bool stage_ok(const RunManifest& m, const RunConfig& cfg, const fs::path& dir,
              const std::string& name) {
  const StageStatus* st = m.find(name);
  if (!st || st->status != "complete") return false;
  if (st->config_hash != stage_config_hash(cfg, name)) return false;
  for (const auto& a : st->artifacts)
    if (!fs::exists(dir / a)) return false;
  return true;
}

/// Direct prerequisites of each stage, mirroring the hash DAG.
const std::vector<std::string>& stage_deps(const std::string& name) {
  static const std::map<std::string, std::vector<std::string>> deps = {
      {"corpus", {}},
      {"generate", {"corpus"}},
      {"detector", {"generate"}},
      {"prompt-train", {"detector"}},
      {"transfer", {"prompt-train"}},
      {"eval", {"transfer"}},
      {"report", {"eval"}},
  };
  return deps.at(name);
}

}  // namespace

const StageStatus* RunManifest::find(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return &s;
  return nullptr;
}

StageStatus& RunManifest::upsert(const std::string& name) {
  for (auto& s : stages)
    if (s.name == name) return s;
  StageStatus fresh;
  fresh.name = name;
  stages.push_back(std::move(fresh));
  return stages.back();
}

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, fn] : stage_table()) n.push_back(name);
    return n;
  }();
  return names;
}

std::string manifest_to_json(const RunManifest& m) {
  json j;
  j["config_hash"] = hex64(m.config_hash);
  j["root_seed"] = m.root_seed;
  j["created_at"] = m.created_at;
  j["updated_at"] = m.updated_at;
  json stages = json::array();
  for (const auto& s : m.stages) {
    stages.push_back(json{{"name", s.name},
                          {"status", s.status},
                          {"config_hash", hex64(s.config_hash)},
                          {"completed_at", s.completed_at},
                          {"artifacts", s.artifacts}});
  }
  j["stages"] = stages;
  return j.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
  const json j = json::parse(text);
  RunManifest m;
  m.config_hash = parse_hex64(j.at("config_hash").get<std::string>());
  m.root_seed = j.at("root_seed").get<uint64_t>();
  m.created_at = j.at("created_at").get<std::string>();
  m.updated_at = j.at("updated_at").get<std::string>();
  for (const auto& js : j.at("stages")) {
    StageStatus s;
    s.name = js.at("name").get<std::string>();
    s.status = js.at("status").get<std::string>();
    s.config_hash = parse_hex64(js.at("config_hash").get<std::string>());
    s.completed_at = js.at("completed_at").get<std::string>();
    s.artifacts = js.at("artifacts").get<std::vector<std::string>>();
    m.stages.push_back(std::move(s));
  }
  return m;
}

RunManifest load_manifest(const fs::path& run_dir) {
  return manifest_from_json(read_text_file(run_dir / "manifest.json"));
}

void save_manifest(const RunManifest& m, const fs::path& run_dir) {
  write_text_file(run_dir / "manifest.json", manifest_to_json(m));
}

RunManifest run_pipeline(const RunConfig& cfg, const std::vector<std::string>& stages) {
  {
    const auto errs = try_validate_config(serialize_config(cfg), nullptr);
    if (!errs.empty()) {
      std::string msg = "invalid run config:";
      for (const auto& e : errs) msg += "\n  " + e.field + ": " + e.message;
      throw Error(msg);
    }
  }

  Ctx c;
  c.cfg = cfg;
  c.dir = cfg.output_dir;
  c.home = escape_home();
  fs::create_directories(c.dir);
  DirLock lock(c.dir);

  std::vector<std::string> requested = stages;
  if (requested.empty()) requested = pipeline_stages();
  for (const auto& s : requested) stage_config_hash(cfg, s);  // rejects unknown names

  RunManifest m;
  if (fs::exists(c.dir / "manifest.json")) {
    m = load_manifest(c.dir);
  } else {
    m.created_at = utc_now();
  }
  m.config_hash = config_hash(cfg);
  m.root_seed = cfg.seed;
  write_text_file(c.dir / "config.snapshot.cfg", serialize_config(cfg));

  const auto want = [&](const std::string& name) {
    return std::find(requested.begin(), requested.end(), name) != requested.end();
  };

  for (const auto& [name, fn] : stage_table()) {
    if (!want(name)) continue;
    if (stage_ok(m, cfg, c.dir, name)) {
      std::cerr << "[pipeline] " << name << ": up to date, skipped\n";
      continue;
    }
    // A missing prerequisite names the earliest incomplete stage in the
    // dependency chain, i.e. the one to run first.
    std::vector<std::string> closure;
    std::function<void(const std::string&)> collect = [&](const std::string& s) {
      for (const auto& dep : stage_deps(s)) {
        if (std::find(closure.begin(), closure.end(), dep) == closure.end())
          closure.push_back(dep);
        collect(dep);
      }
    };
    collect(name);
    for (const auto& dep : pipeline_stages()) {
      if (std::find(closure.begin(), closure.end(), dep) == closure.end()) continue;
      if (!stage_ok(m, cfg, c.dir, dep)) {
        require(want(dep), "stage '" + name + "' needs completed stage '" + dep +
                               "'; run stage '" + dep + "' first");
      }
    }
    std::cerr << "[pipeline] " << name << ": running\n";
    const auto t0 = std::chrono::steady_clock::now();
    StageStatus& st = m.upsert(name);
    st.status = "pending";
    st.artifacts = fn(c);
    st.status = "complete";
    st.config_hash = stage_config_hash(cfg, name);
    st.completed_at = utc_now();
    m.updated_at = utc_now();
    save_manifest(m, c.dir);
    const auto secs = std::chrono::duration_cast<std::chrono::duration<double>>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    std::cerr << "[pipeline] " << name << ": done in " << secs << "s\n";
  }

  m.updated_at = utc_now();
  save_manifest(m, c.dir);
  return m;
}

}  // namespace escape
