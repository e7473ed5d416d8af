#include "escape/config.hpp"

#include "escape/corpus.hpp"
#include "escape/detector.hpp"
#include "escape/io.hpp"
#include "escape/model_registry.hpp"
#include "escape/reward.hpp"
#include "escape/rng.hpp"

#include <charconv>
#include <functional>
#include <sstream>

namespace escape {

namespace {

struct FieldDef {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  // returns an error message, empty on success
  std::function<std::string(RunConfig&, const std::string&)> set;
};

template <typename T>
std::string format_number(T v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto res = std::from_chars(b, e, out);
  return res.ec == std::errc{} && res.ptr == e;
}

template <typename T>
FieldDef number_field(std::string key, T RunConfig::* /*unused*/, std::function<T&(RunConfig&)> ref) {
  FieldDef f;
  f.key = std::move(key);
  f.get = [ref](const RunConfig& c) { return format_number(ref(const_cast<RunConfig&>(c))); };
  f.set = [ref, key = f.key](RunConfig& c, const std::string& v) -> std::string {
    T parsed{};
    if (!parse_number(v, parsed)) return "cannot parse '" + v + "' as a number";
    ref(c) = parsed;
    return {};
  };
  return f;
}

FieldDef num_i(std::string key, std::function<int&(RunConfig&)> ref) {
  return number_field<int>(std::move(key), nullptr, std::move(ref));
}
FieldDef num_d(std::string key, std::function<double&(RunConfig&)> ref) {
  return number_field<double>(std::move(key), nullptr, std::move(ref));
}
FieldDef num_u(std::string key, std::function<uint64_t&(RunConfig&)> ref) {
  return number_field<uint64_t>(std::move(key), nullptr, std::move(ref));
}

FieldDef str_field(std::string key, std::function<std::string&(RunConfig&)> ref) {
  FieldDef f;
  f.key = std::move(key);
  f.get = [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); };
  f.set = [ref](RunConfig& c, const std::string& v) -> std::string {
    if (v.find('#') != std::string::npos) return "value must not contain '#'";
    ref(c) = v;
    return {};
  };
  return f;
}

const std::vector<FieldDef>& schema() {
  static const std::vector<FieldDef> defs = [] {
    std::vector<FieldDef> s;
    s.push_back(num_u("seed", [](RunConfig& c) -> uint64_t& { return c.seed; }));
    s.push_back(str_field("output_dir", [](RunConfig& c) -> std::string& { return c.output_dir; }));
    s.push_back(str_field("models.source_id",
                          [](RunConfig& c) -> std::string& { return c.models.source_id; }));
    s.push_back(str_field("models.target_id",
                          [](RunConfig& c) -> std::string& { return c.models.target_id; }));
    s.push_back(str_field("models.scorer_id",
                          [](RunConfig& c) -> std::string& { return c.models.scorer_id; }));
    s.push_back(num_i("prompt.k", [](RunConfig& c) -> int& { return c.prompt.k; }));
    s.push_back(str_field("prompt.init_text",
                          [](RunConfig& c) -> std::string& { return c.prompt.init_text; }));
    s.push_back(num_d("ppo.lr", [](RunConfig& c) -> double& { return c.ppo.lr; }));
    s.push_back(num_d("ppo.beta", [](RunConfig& c) -> double& { return c.ppo.beta; }));
    s.push_back(num_i("ppo.batch_size", [](RunConfig& c) -> int& { return c.ppo.batch_size; }));
    s.push_back(num_d("ppo.clip_ratio", [](RunConfig& c) -> double& { return c.ppo.clip_ratio; }));
    s.push_back(num_i("ppo.ppo_epochs", [](RunConfig& c) -> int& { return c.ppo.ppo_epochs; }));
    s.push_back(num_i("ppo.max_steps", [](RunConfig& c) -> int& { return c.ppo.max_steps; }));
    s.push_back(num_i("ppo.patience", [](RunConfig& c) -> int& { return c.ppo.patience; }));
    s.push_back(
        num_i("ppo.eval_interval", [](RunConfig& c) -> int& { return c.ppo.eval_interval; }));
    s.push_back(num_d("ppo.gae_lambda", [](RunConfig& c) -> double& { return c.ppo.gae_lambda; }));
    s.push_back(num_d("ppo.vf_coef", [](RunConfig& c) -> double& { return c.ppo.vf_coef; }));
    s.push_back(num_d("gen.top_p", [](RunConfig& c) -> double& { return c.gen.top_p; }));
    s.push_back(num_d("gen.temperature", [](RunConfig& c) -> double& { return c.gen.temperature; }));
    s.push_back(num_i("gen.max_len", [](RunConfig& c) -> int& { return c.gen.max_len; }));
    s.push_back(str_field("data.task", [](RunConfig& c) -> std::string& { return c.data.task; }));
    s.push_back(str_field("data.corpus", [](RunConfig& c) -> std::string& { return c.data.corpus; }));
    s.push_back(num_i("data.n_total", [](RunConfig& c) -> int& { return c.data.n_total; }));
    s.push_back(num_i("data.n_test", [](RunConfig& c) -> int& { return c.data.n_test; }));
    s.push_back(num_i("data.n_val", [](RunConfig& c) -> int& { return c.data.n_val; }));
    s.push_back(
        str_field("detector.kind", [](RunConfig& c) -> std::string& { return c.detector.kind; }));
    s.push_back(num_d("detector.lr", [](RunConfig& c) -> double& { return c.detector.lr; }));
    s.push_back(num_d("detector.weight_decay",
                      [](RunConfig& c) -> double& { return c.detector.weight_decay; }));
    s.push_back(num_i("detector.epochs", [](RunConfig& c) -> int& { return c.detector.epochs; }));
    s.push_back(
        num_i("detector.batch_size", [](RunConfig& c) -> int& { return c.detector.batch_size; }));
    s.push_back(str_field("detector.perturber",
                          [](RunConfig& c) -> std::string& { return c.detector.perturber; }));
    s.push_back(num_i("detector.n_perturbations",
                      [](RunConfig& c) -> int& { return c.detector.n_perturbations; }));
    s.push_back(num_d("detector.span_fraction",
                      [](RunConfig& c) -> double& { return c.detector.span_fraction; }));
    s.push_back(num_i("projector.e_h", [](RunConfig& c) -> int& { return c.projector.e_h; }));
    s.push_back(
        num_i("transfer.max_steps", [](RunConfig& c) -> int& { return c.transfer.max_steps; }));
    s.push_back(str_field("reward.mode", [](RunConfig& c) -> std::string& { return c.reward_mode; }));
    return s;
  }();
  return defs;
}

const FieldDef* find_field(const std::string& key) {
  for (const auto& f : schema())
    if (f.key == key) return &f;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool one_of(const std::string& v, std::initializer_list<const char*> opts) {
  for (const char* o : opts)
    if (v == o) return true;
  return false;
}

void check_ranges(const RunConfig& c, std::vector<ConfigError>& errs) {
  auto bad = [&](const char* field, const std::string& msg) { errs.push_back({field, msg}); };

  if (c.output_dir.empty()) bad("output_dir", "must not be empty");
  for (auto [field, id] : {std::pair{"models.source_id", c.models.source_id},
                           {"models.target_id", c.models.target_id},
                           {"models.scorer_id", c.models.scorer_id}}) {
    try {
      model_spec(id);
    } catch (const Error& e) {
      errs.push_back({field, e.what()});
    }
  }
  if (c.prompt.k < 1) bad("prompt.k", "must be >= 1");
  if (!(c.ppo.lr > 0.0)) bad("ppo.lr", "must be positive");
  if (c.ppo.beta < 0.0) bad("ppo.beta", "must be >= 0");
  if (c.ppo.batch_size < 1) bad("ppo.batch_size", "must be >= 1");
  if (!(c.ppo.clip_ratio > 0.0 && c.ppo.clip_ratio < 1.0)) bad("ppo.clip_ratio", "must be in (0,1)");
  if (c.ppo.ppo_epochs < 1) bad("ppo.ppo_epochs", "must be >= 1");
  if (c.ppo.max_steps < 0) bad("ppo.max_steps", "must be >= 0");
  if (c.ppo.patience < 1) bad("ppo.patience", "must be >= 1");
  if (c.ppo.eval_interval < 1) bad("ppo.eval_interval", "must be >= 1");
  if (!(c.ppo.gae_lambda >= 0.0 && c.ppo.gae_lambda <= 1.0))
    bad("ppo.gae_lambda", "must be in [0,1]");
  if (c.ppo.vf_coef < 0.0) bad("ppo.vf_coef", "must be >= 0");
  if (!(c.gen.top_p > 0.0 && c.gen.top_p <= 1.0)) bad("gen.top_p", "must be in (0,1]");
  if (c.gen.temperature < 0.0) bad("gen.temperature", "must be >= 0");
  if (c.gen.max_len < 1) bad("gen.max_len", "must be >= 1");
  if (!one_of(c.data.task, {"news", "essay", "creative"}))
    bad("data.task", "must be one of news, essay, creative");
  if (c.data.n_test < 1) bad("data.n_test", "must be >= 1");
  if (c.data.n_val < 1) bad("data.n_val", "must be >= 1");
  if (c.data.n_total <= c.data.n_test + c.data.n_val)
    bad("data.n_total", "must exceed n_test + n_val");
  if (!one_of(c.detector.kind, {"supervised", "zero_shot"}))
    bad("detector.kind", "must be supervised or zero_shot");
  if (!(c.detector.lr > 0.0)) bad("detector.lr", "must be positive");
  if (c.detector.weight_decay < 0.0) bad("detector.weight_decay", "must be >= 0");
  if (c.detector.epochs < 0) bad("detector.epochs", "must be >= 0");
  if (c.detector.batch_size < 1) bad("detector.batch_size", "must be >= 1");
  if (!one_of(c.detector.perturber, {"mask_fill", "synonym_swap", "identity"}))
    bad("detector.perturber", "must be one of mask_fill, synonym_swap, identity");
  if (c.detector.n_perturbations < 1) bad("detector.n_perturbations", "must be >= 1");
  if (!(c.detector.span_fraction > 0.0 && c.detector.span_fraction < 1.0))
    bad("detector.span_fraction", "must be in (0,1)");
  if (c.projector.e_h < 1) bad("projector.e_h", "must be >= 1");
  if (c.transfer.max_steps < 0) bad("transfer.max_steps", "must be >= 0");
  if (!one_of(c.reward_mode, {"identity", "calibrated"}))
    bad("reward.mode", "must be identity or calibrated");
}

}  // namespace

std::vector<ConfigError> try_validate_config(const std::string& text, RunConfig* out) {
  std::vector<ConfigError> errs;
  RunConfig cfg;
  std::vector<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (size_t h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no);
    if (eq == std::string::npos) {
      errs.push_back({where, "expected key = value, got '" + trim(line) + "'"});
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const FieldDef* f = find_field(key);
    if (!f) {
      errs.push_back({key, "unknown config key"});
      continue;
    }
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      errs.push_back({key, "duplicate key"});
      continue;
    }
    seen.push_back(key);
    if (std::string msg = f->set(cfg, value); !msg.empty()) errs.push_back({key, msg});
  }
  check_ranges(cfg, errs);
  if (errs.empty() && out) *out = cfg;
  return errs;
}

RunConfig validate_config(const std::string& text) {
  RunConfig cfg;
  const auto errs = try_validate_config(text, &cfg);
  if (!errs.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errs) msg += "\n  " + e.field + ": " + e.message;
    throw Error(msg);
  }
  return cfg;
}

RunConfig load_config_file(const std::filesystem::path& path) {
  return validate_config(read_text_file(path));
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : schema()) {
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += "\n";
  }
  return out;
}

uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(serialize_config(cfg)); }

namespace {

struct StageDef {
  const char* name;
  std::vector<const char*> deps;
  std::vector<const char*> prefixes;  // config keys this stage reads, by prefix
};

const std::vector<StageDef>& stage_defs() {
  static const std::vector<StageDef> defs = {
      {"corpus", {}, {"seed", "data."}},
      {"generate", {"corpus"}, {"models.source_id", "gen."}},
      {"detector", {"generate"}, {"detector."}},
      {"prompt-train", {"detector"}, {"prompt.", "ppo.", "reward.mode"}},
      {"transfer", {"prompt-train"}, {"models.target_id", "projector.", "transfer."}},
      {"eval", {"transfer"}, {"models.scorer_id"}},
      {"report", {"eval"}, {}},
  };
  return defs;
}

const StageDef& stage_def(const std::string& name) {
  for (const auto& s : stage_defs())
    if (name == s.name) return s;
  std::string known;
  for (const auto& s : stage_defs()) known += std::string(known.empty() ? "" : ", ") + s.name;
  throw Error("unknown stage '" + name + "' (stages: " + known + ")");
}

}  // namespace

uint64_t stage_config_hash(const RunConfig& cfg, const std::string& stage) {
  const StageDef& def = stage_def(stage);
  std::string text = stage + "\n";
  for (const auto& f : schema()) {
    for (const char* p : def.prefixes) {
      const std::string prefix(p);
      const bool match =
          prefix.back() == '.' ? f.key.rfind(prefix, 0) == 0 : f.key == prefix;
      if (match) {
        text += f.key + " = " + f.get(cfg) + "\n";
        break;
      }
    }
  }
  uint64_t h = fnv1a64(text);
  for (const char* dep : def.deps) {
    const uint64_t dh = stage_config_hash(cfg, dep);
    h = fnv1a64(&dh, sizeof(dh), h);
  }
  return h;
}

}  // namespace escape
