#pragma once

#include "escape/generate.hpp"
#include "escape/lm.hpp"
#include "escape/tokenizer.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace escape {

/// Artifact root: $ESCAPE_HOME if set, else ./.escape_home.
std::filesystem::path escape_home();

/// Immutable loaded model: frozen weights plus its tokenizer and decode
/// conventions. Safe to share across readers.
struct ModelHandle {
  std::string id;
  std::shared_ptr<const TransformerLM<float>> lm;
  std::shared_ptr<const Tokenizer> tok;
  DecodeSpecials specials;

  const TransformerConfig& config() const { return lm->config(); }
};

struct ModelSpec {
  std::string id;
  TransformerConfig cfg;
  uint64_t seed = 0;
};

/// Bundled tiny model lineup. Embedding widths differ on purpose so that
/// cross-model transfer always exercises a real dimension change.
const std::vector<ModelSpec>& builtin_model_specs();
const ModelSpec& model_spec(const std::string& id);
bool is_builtin_model(const std::string& id);

/// Loads a bundled model, pretraining and caching it under
/// `home`/models first if no cache exists.
ModelHandle prepare_model(const std::string& id, const std::filesystem::path& home);
inline ModelHandle prepare_model(const std::string& id) {
  return prepare_model(id, escape_home());
}

// Model cache file IO (format tag ESLM1).
void save_lm(const TransformerLM<float>& lm, const std::string& id, int64_t seed,
             const std::filesystem::path& path);
TransformerLM<float> load_lm(const std::filesystem::path& path, std::string* id_out = nullptr);

struct PretrainConfig {
  int docs_per_task = 100;
  int epochs = 8;
  int batch_docs = 8;
  double lr = 2.5e-3;
};

/// Next-token pretraining on the bundled mixture; returns final mean loss.
double pretrain_lm(TransformerLM<float>& lm, const Tokenizer& tok,
                   const std::vector<std::string>& docs, uint64_t seed,
                   const PretrainConfig& pc = {});

}  // namespace escape
