#pragma once

#include "escape/common.hpp"
#include "escape/generate.hpp"
#include "escape/ppo.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace escape {

/// Declarative description of one end-to-end run. Parsed from a flat
/// key=value document with dotted keys; unset keys take the defaults below.
struct RunConfig {
  uint64_t seed = 0;
  std::string output_dir = "runs/default";

  struct Models {
    std::string source_id = "tiny-a";
    std::string target_id = "tiny-b";
    std::string scorer_id = "tiny-c";
  } models;

  struct Prompt {
    int k = 8;
    std::string init_text;
  } prompt;

  PPOConfig ppo;  // ppo.seed is derived from the root seed, not configured

  GenerationConfig gen;  // gen.seed likewise derived

  struct Data {
    std::string task = "news";
    std::string corpus;  // path to existing JSONL; empty synthesizes a toy corpus
    int n_total = 2000;
    int n_test = 100;
    int n_val = 100;
  } data;

  struct Detector {
    std::string kind = "supervised";
    double lr = 2e-5;
    double weight_decay = 0.01;
    int epochs = 10;
    int batch_size = 32;
    std::string perturber = "synonym_swap";
    int n_perturbations = 10;
    double span_fraction = 0.15;
  } detector;

  struct ProjectorCfg {
    int e_h = 768;
  } projector;

  struct Transfer {
    int max_steps = 0;  // 0 means half of ppo.max_steps
  } transfer;

  std::string reward_mode = "identity";

  int resolved_transfer_steps() const {
    return transfer.max_steps > 0 ? transfer.max_steps : ppo.max_steps / 2;
  }
};

struct ConfigError {
  std::string field;
  std::string message;
};

/// Parses and checks a config document. On success `out` holds the complete
/// config (defaults filled); on failure the full error list is returned and
/// `out` is untouched.
std::vector<ConfigError> try_validate_config(const std::string& text, RunConfig* out);

/// try_validate_config that throws an Error listing every problem.
RunConfig validate_config(const std::string& text);

RunConfig load_config_file(const std::filesystem::path& path);

/// Every field in schema order, one key=value per line. Round-trips exactly:
/// validate_config(serialize_config(c)) reproduces c.
std::string serialize_config(const RunConfig& cfg);

uint64_t config_hash(const RunConfig& cfg);

/// Hash of the config fields a stage depends on, chained through the hashes
/// of its prerequisite stages, so an edit only invalidates downstream work.
uint64_t stage_config_hash(const RunConfig& cfg, const std::string& stage);

}  // namespace escape
