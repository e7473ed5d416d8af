#pragma once

#include "escape/detector.hpp"
#include "escape/generate.hpp"
#include "escape/model_registry.hpp"
#include "escape/optim.hpp"
#include "escape/projector.hpp"
#include "escape/reward.hpp"
#include "escape/soft_prompt.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace escape {

struct PPOConfig {
  double lr = 1.41e-5;
  double beta = 0.1;
  int batch_size = 16;
  double clip_ratio = 0.2;
  int ppo_epochs = 4;
  int max_steps = 500;
  int patience = 3;        // evaluations without a new best val F1 before stopping
  int eval_interval = 10;  // steps between validation evaluations
  double gae_lambda = 0.95;
  double vf_coef = 0.5;
  uint64_t seed = 0;

  void validate() const {
    require(lr > 0.0, "ppo.lr must be positive");
    require(beta >= 0.0, "ppo.beta must be >= 0");
    require(batch_size >= 1, "ppo.batch_size must be >= 1");
    require(clip_ratio > 0.0 && clip_ratio < 1.0, "ppo.clip_ratio must be in (0,1)");
    require(ppo_epochs >= 1, "ppo.ppo_epochs must be >= 1");
    require(max_steps >= 0, "ppo.max_steps must be >= 0");
    require(patience >= 1, "ppo.patience must be >= 1");
    require(eval_interval >= 1, "ppo.eval_interval must be >= 1");
    require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "ppo.gae_lambda must be in [0,1]");
    require(vf_coef >= 0.0, "ppo.vf_coef must be >= 0");
  }
};

/// The trainable parameter set behind the soft prompt: either the prompt
/// rows themselves or a projector that produces them from a frozen source
/// prompt. The PPO loop only sees prompt-row gradients.
class PromptVariable {
 public:
  virtual ~PromptVariable() = default;
  virtual SoftPrompt current() const = 0;
  virtual void zero_grad() = 0;
  virtual void add_prompt_grad(const Matrixf& d_rows) = 0;
  virtual std::vector<Adam<float>::ParamView> param_views() = 0;
  virtual std::vector<Adam<float>::GradView> grad_views() const = 0;
  virtual std::unique_ptr<PromptVariable> clone() const = 0;
  virtual const Projector* projector() const { return nullptr; }
  // checksum of any parameters this variable must never update (0 if none)
  virtual uint64_t frozen_checksum() const { return 0; }
};

std::unique_ptr<PromptVariable> make_direct_prompt(SoftPrompt prompt);
/// Prompt = project(source, projector); the source rows stay frozen.
std::unique_ptr<PromptVariable> make_projected_prompt(SoftPrompt source, Projector proj,
                                                      std::string target_model_id);

struct ValueHead {
  Vectorf w;
  float b = 0.0f;
};

struct PolicyState {
  ModelHandle base;  // frozen
  std::unique_ptr<PromptVariable> prompt;
  ValueHead value;
  std::unique_ptr<Adam<float>> opt;
};

PolicyState make_policy_state(ModelHandle base, std::unique_ptr<PromptVariable> prompt,
                              const PPOConfig& cfg);

struct RolloutSample {
  TokenSequence prompt;
  TokenSequence gen;
  std::vector<float> policy_logps;  // with soft prompt, rollout-time parameters
  std::vector<float> ref_logps;     // bare model, same tokens
  std::string text;                 // decoded generation, markers stripped
};

/// One sampled generation per prompt; failed or empty generations are
/// skipped with a note. Deterministic in (policy, prompts, gen.seed).
std::vector<RolloutSample> rollout(const PolicyState& policy,
                                   const std::vector<TokenSequence>& prompts,
                                   const GenerationConfig& gen);

struct TrainLogEntry {
  int step = 0;
  double mean_reward = 0.0;  // combined reward over the step's batch
  double mean_kl = 0.0;      // mean kl_sum over the batch
  double val_detector_f1 = -1.0;  // last evaluated value; -1 before any eval
  double prompt_update_norm = 0.0;
  bool aborted = false;  // non-finite gradient, parameters kept
};

/// One PPO update on (prompt variable, value head) from a rollout batch and
/// its reward records. Clipped surrogate, GAE advantages whitened per batch,
/// per-token KL shaping with the sequence reward added at the final token.
TrainLogEntry ppo_step(PolicyState& policy, const std::vector<RolloutSample>& batch,
                       const std::vector<RewardRecord>& rewards, const PPOConfig& cfg);

struct SampleLogEntry {
  int step = 0;
  RewardRecord record;
};

struct TrainResult {
  SoftPrompt best_prompt;
  SoftPrompt final_prompt;
  std::optional<Projector> best_projector;  // set for projected training
  std::vector<TrainLogEntry> log;
  std::vector<SampleLogEntry> sample_log;
  double baseline_val_f1 = -1.0;
  double best_val_f1 = -1.0;
  int steps_run = 0;
  uint64_t base_checksum_before = 0;
  uint64_t base_checksum_after = 0;
  ValueHead final_value;  // the only trainable state besides the prompt
};

struct TrainCallbacks {
  std::function<void(const TrainLogEntry&)> on_step;
  std::function<void(const SampleLogEntry&)> on_sample;
  std::function<void(int step, double val_f1)> on_eval;
};

/// Full training loop: rollout, detector reward, ppo_step; every
/// eval_interval steps the detector's AI-class F1 on val generations decides
/// early stopping (patience evaluations without a new minimum) and which
/// snapshot is returned as best.
TrainResult train_evasive_prompt(const ModelHandle& model, const DetectorHandle& detector,
                                 const std::vector<TokenSequence>& task_prompts,
                                 const std::vector<TokenSequence>& val_prompts,
                                 const RewardModel& reward_model, const PPOConfig& cfg,
                                 const GenerationConfig& gen, SoftPrompt init,
                                 const TrainCallbacks& cb = {});

/// Same loop with the projector as the trainable set; the source prompt and
/// both models stay frozen. cfg.max_steps is the transfer budget (callers
/// default it to half the source run).
TrainResult train_transfer(const SoftPrompt& source_prompt, const ModelHandle& target,
                           const DetectorHandle& detector,
                           const std::vector<TokenSequence>& task_prompts,
                           const std::vector<TokenSequence>& val_prompts,
                           const RewardModel& reward_model, const PPOConfig& cfg,
                           const GenerationConfig& gen, const Projector& init_proj,
                           const TrainCallbacks& cb = {});

}  // namespace escape
