#pragma once

#include "escape/config.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace escape {

struct StageStatus {
  std::string name;
  std::string status = "pending";  // pending | complete
  uint64_t config_hash = 0;
  std::string completed_at;  // UTC ISO-8601, empty while pending
  std::vector<std::string> artifacts;  // paths relative to the run directory
};

/// Everything a finished (or partial) run leaves behind, persisted as
/// manifest.json in the run directory after every stage transition.
struct RunManifest {
  uint64_t config_hash = 0;
  uint64_t root_seed = 0;
  std::string created_at;
  std::string updated_at;
  std::vector<StageStatus> stages;

  const StageStatus* find(const std::string& name) const;
  StageStatus& upsert(const std::string& name);
};

std::string manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const std::string& text);
RunManifest load_manifest(const std::filesystem::path& run_dir);
void save_manifest(const RunManifest& m, const std::filesystem::path& run_dir);

/// The pipeline's stage names in dependency order.
const std::vector<std::string>& pipeline_stages();

/// Runs the requested stages (all when empty) in dependency order. A stage
/// is skipped when the manifest shows it complete under the same
/// stage-config hash and its artifacts still exist; a requested stage whose
/// prerequisite is incomplete fails naming that prerequisite. One run per
/// output directory, enforced with a lock file.
RunManifest run_pipeline(const RunConfig& cfg, const std::vector<std::string>& stages = {});

}  // namespace escape
