#include "escape/ppo.hpp"

#include "escape/evalx.hpp"
#include "escape/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace escape {

namespace {

uint64_t matrix_checksum(const Matrixf& m) {
  return fnv1a64(m.data(), sizeof(float) * static_cast<size_t>(m.size()));
}

class DirectPrompt final : public PromptVariable {
 public:
  explicit DirectPrompt(SoftPrompt p) : sp_(std::move(p)) {
    require(sp_.k() >= 1, "soft prompt needs at least one row");
    require(sp_.rows.allFinite(), "soft prompt has non-finite entries");
    grad_ = Matrixf::Zero(sp_.rows.rows(), sp_.rows.cols());
  }

  SoftPrompt current() const override { return sp_; }
  void zero_grad() override { grad_.setZero(); }
  void add_prompt_grad(const Matrixf& d_rows) override { grad_ += d_rows; }

  std::vector<Adam<float>::ParamView> param_views() override {
    return {{sp_.rows.data(), sp_.rows.size()}};
  }
  std::vector<Adam<float>::GradView> grad_views() const override {
    return {{grad_.data(), grad_.size()}};
  }
  std::unique_ptr<PromptVariable> clone() const override {
    return std::make_unique<DirectPrompt>(sp_);
  }

 private:
  SoftPrompt sp_;
  Matrixf grad_;
};

class ProjectedPrompt final : public PromptVariable {
 public:
  ProjectedPrompt(SoftPrompt source, Projector proj, std::string target_model_id)
      : src_(std::move(source)), proj_(std::move(proj)), target_id_(std::move(target_model_id)) {
    proj_.validate();
    require(src_.embed_dim() == proj_.e_s(),
            "source prompt embed_dim does not match projector input");
    grads_ = make_zero_projector_grads(proj_);
  }

  SoftPrompt current() const override {
    SoftPrompt out = project(src_, proj_);
    out.source_model_id = target_id_;  // rows live in the target embedding space
    return out;
  }

  void zero_grad() override { grads_ = make_zero_projector_grads(proj_); }

  void add_prompt_grad(const Matrixf& d_rows) override {
    project_rows_backward(src_.rows, proj_, d_rows, grads_, nullptr);
  }

  std::vector<Adam<float>::ParamView> param_views() override {
    return {{proj_.W1.data(), proj_.W1.size()},
            {proj_.b1.data(), proj_.b1.size()},
            {proj_.W2.data(), proj_.W2.size()},
            {proj_.b2.data(), proj_.b2.size()}};
  }
  std::vector<Adam<float>::GradView> grad_views() const override {
    return {{grads_.W1.data(), grads_.W1.size()},
            {grads_.b1.data(), grads_.b1.size()},
            {grads_.W2.data(), grads_.W2.size()},
            {grads_.b2.data(), grads_.b2.size()}};
  }
  std::unique_ptr<PromptVariable> clone() const override {
    return std::make_unique<ProjectedPrompt>(src_, proj_, target_id_);
  }
  const Projector* projector() const override { return &proj_; }
  uint64_t frozen_checksum() const override { return matrix_checksum(src_.rows); }

 private:
  SoftPrompt src_;  // frozen
  Projector proj_;
  std::string target_id_;
  ProjectorGrads grads_;
};

}  // namespace

std::unique_ptr<PromptVariable> make_direct_prompt(SoftPrompt prompt) {
  return std::make_unique<DirectPrompt>(std::move(prompt));
}

std::unique_ptr<PromptVariable> make_projected_prompt(SoftPrompt source, Projector proj,
                                                      std::string target_model_id) {
  return std::make_unique<ProjectedPrompt>(std::move(source), std::move(proj),
                                           std::move(target_model_id));
}

PolicyState make_policy_state(ModelHandle base, std::unique_ptr<PromptVariable> prompt,
                              const PPOConfig& cfg) {
  cfg.validate();
  PolicyState ps;
  ps.base = std::move(base);
  ps.prompt = std::move(prompt);
  ps.value.w = Vectorf::Zero(ps.base.config().d_model);
  ps.value.b = 0.0f;
  ps.opt = std::make_unique<Adam<float>>(cfg.lr);
  return ps;
}

std::vector<RolloutSample> rollout(const PolicyState& policy,
                                   const std::vector<TokenSequence>& prompts,
                                   const GenerationConfig& gen) {
  require(!prompts.empty(), "rollout: no prompts");
  const SoftPrompt sp = policy.prompt->current();
  const auto& lm = *policy.base.lm;
  std::vector<RolloutSample> out;
  out.reserve(prompts.size());
  int skipped = 0;
  for (size_t i = 0; i < prompts.size(); ++i) {
    GenerationConfig g = gen;
    g.seed = derive_seed(gen.seed, "rollout-sample", i);
    try {
      RolloutSample s;
      s.prompt = prompts[i];
      s.gen = generate<float>(lm, &sp, prompts[i], g, policy.base.specials);
      if (s.gen.tokens.empty()) {
        ++skipped;
        continue;
      }
      s.policy_logps = sequence_log_probs<float>(lm, &sp, s.prompt, s.gen, policy.base.specials);
      s.ref_logps = sequence_log_probs<float>(lm, nullptr, s.prompt, s.gen, policy.base.specials);
      s.text = decode_plain(*policy.base.tok, s.gen.tokens);
      out.push_back(std::move(s));
    } catch (const Error& e) {
      ++skipped;
      std::cerr << "[rollout] sample " << i << " skipped: " << e.what() << "\n";
    }
  }
  if (skipped > 0) std::cerr << "[rollout] skipped " << skipped << " of " << prompts.size() << "\n";
  require(!out.empty(), "rollout: every sample failed");
  return out;
}

TrainLogEntry ppo_step(PolicyState& policy, const std::vector<RolloutSample>& batch,
                       const std::vector<RewardRecord>& rewards, const PPOConfig& cfg) {
  cfg.validate();
  require(!batch.empty(), "ppo_step: empty batch");
  require(batch.size() == rewards.size(), "ppo_step: batch/reward size mismatch");
  for (const auto& r : rewards)
    require(std::isfinite(r.combined), "ppo_step: non-finite reward");

  const auto& lm = *policy.base.lm;
  const int k = policy.prompt->current().k();
  const int nb = policy.base.specials.bos >= 0 ? 1 : 0;
  const size_t B = batch.size();

  TrainLogEntry entry;
  for (const auto& r : rewards) {
    entry.mean_reward += r.combined;
    entry.mean_kl += r.kl_sum;
  }
  entry.mean_reward /= static_cast<double>(B);
  entry.mean_kl /= static_cast<double>(B);

  // Shaped per-token rewards from rollout-time log-probs: each token pays the
  // KL ratio, the sequence reward lands on the final token.
  std::vector<std::vector<double>> shaped(B);
  size_t n_tokens = 0;
  for (size_t i = 0; i < B; ++i) {
    const auto& s = batch[i];
    const size_t T = s.gen.tokens.size();
    require(T >= 1 && s.policy_logps.size() == T && s.ref_logps.size() == T,
            "ppo_step: sample shape mismatch");
    shaped[i].resize(T);
    for (size_t t = 0; t < T; ++t)
      shaped[i][t] = -cfg.beta * (static_cast<double>(s.policy_logps[t]) -
                                  static_cast<double>(s.ref_logps[t]));
    shaped[i][T - 1] += rewards[i].raw_reward;
    n_tokens += T;
  }

  const SoftPrompt sp0 = policy.prompt->current();
  auto make_ctx = [&](const RolloutSample& s, const SoftPrompt& sp) {
    std::vector<TokenId> all = s.prompt.tokens;
    all.insert(all.end(), s.gen.tokens.begin(), s.gen.tokens.end());
    return build_context<float>(lm, &sp, all, policy.base.specials);
  };

  // Pass 1: values under the pre-update head define advantages and returns
  // for every epoch (GAE with gamma = 1).
  std::vector<std::vector<double>> adv(B), ret(B);
  std::vector<double> all_adv;
  all_adv.reserve(n_tokens);
  for (size_t i = 0; i < B; ++i) {
    const auto& s = batch[i];
    const size_t T = s.gen.tokens.size();
    const auto tr = lm.forward(make_ctx(s, sp0));
    const Eigen::Index pre = tr.x0.rows() - static_cast<Eigen::Index>(T);
    std::vector<double> V(T);
    for (size_t t = 0; t < T; ++t)
      V[t] = static_cast<double>(
                 policy.value.w.dot(tr.hidden.row(pre - 1 + static_cast<Eigen::Index>(t)))) +
             policy.value.b;
    adv[i].resize(T);
    ret[i].resize(T);
    double a = 0.0;
    for (size_t t = T; t-- > 0;) {
      const double v_next = t + 1 < T ? V[t + 1] : 0.0;
      const double delta = shaped[i][t] + v_next - V[t];
      a = delta + cfg.gae_lambda * a;
      adv[i][t] = a;
      ret[i][t] = a + V[t];
    }
    for (double v : adv[i]) all_adv.push_back(v);
  }
  double mean = std::accumulate(all_adv.begin(), all_adv.end(), 0.0) /
                static_cast<double>(all_adv.size());
  double var = 0.0;
  for (double v : all_adv) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(all_adv.size()));
  for (auto& row : adv)
    for (double& v : row) v = (v - mean) / (sd + 1e-8);

  // Snapshot for abort-and-keep-parameters on non-finite gradients.
  std::vector<Vectorf> saved;
  for (auto pv : policy.prompt->param_views()) saved.emplace_back(pv);
  const Vectorf saved_vw = policy.value.w;
  const float saved_vb = policy.value.b;
  const Matrixf rows_before = sp0.rows;

  const double inv_n = 1.0 / static_cast<double>(n_tokens);
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    policy.prompt->zero_grad();
    Vectorf gvw = Vectorf::Zero(policy.value.w.size());
    float gvb = 0.0f;
    const SoftPrompt sp = policy.prompt->current();
    for (size_t i = 0; i < B; ++i) {
      const auto& s = batch[i];
      const size_t T = s.gen.tokens.size();
      const auto tr = lm.forward(make_ctx(s, sp));
      const Eigen::Index pre = tr.x0.rows() - static_cast<Eigen::Index>(T);
      Matrixf d_logits = Matrixf::Zero(tr.logits.rows(), tr.logits.cols());
      for (size_t t = 0; t < T; ++t) {
        const Eigen::Index row = pre - 1 + static_cast<Eigen::Index>(t);
        VectorX<float> lr = tr.logits.row(row).transpose();
        const float lse = log_sum_exp(lr);
        const double logp_new = static_cast<double>(lr(s.gen.tokens[t]) - lse);
        const double ratio =
            std::exp(std::min(20.0, logp_new - static_cast<double>(s.policy_logps[t])));
        const double a = adv[i][t];
        const double clipped = std::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        // gradient flows only when the unclipped branch is active
        const double coef = (ratio * a <= clipped * a) ? -a * ratio * inv_n : 0.0;
        if (coef != 0.0) {
          VectorX<float> p = (lr.array() - lse).exp();
          p(s.gen.tokens[t]) -= 1.0f;
          d_logits.row(row) += static_cast<float>(-coef) * p.transpose();
        }
        // value head regression on frozen hidden features (no backbone flow)
        const double v = static_cast<double>(policy.value.w.dot(tr.hidden.row(row))) +
                         policy.value.b;
        const float vcoef = static_cast<float>(cfg.vf_coef * (v - ret[i][t]) * inv_n);
        gvw += vcoef * tr.hidden.row(row).transpose();
        gvb += vcoef;
      }
      const Matrixf dx0 = lm.backward(tr, d_logits, {}, nullptr);
      policy.prompt->add_prompt_grad(dx0.middleRows(nb, k));
    }

    bool finite = gvw.allFinite() && std::isfinite(gvb);
    for (auto gv : policy.prompt->grad_views())
      if (!gv.allFinite()) finite = false;
    if (!finite) {
      auto views = policy.prompt->param_views();
      for (size_t j = 0; j < views.size(); ++j) views[j] = saved[j];
      policy.value.w = saved_vw;
      policy.value.b = saved_vb;
      entry.aborted = true;
      std::cerr << "[ppo] non-finite gradient at epoch " << epoch
                << ", step aborted, parameters kept\n";
      break;
    }
    auto params = policy.prompt->param_views();
    params.emplace_back(policy.value.w.data(), policy.value.w.size());
    params.emplace_back(&policy.value.b, 1);
    auto grads = policy.prompt->grad_views();
    grads.emplace_back(gvw.data(), gvw.size());
    grads.emplace_back(&gvb, 1);
    policy.opt->step(std::move(params), grads);
  }

  entry.prompt_update_norm =
      static_cast<double>((policy.prompt->current().rows - rows_before).norm());
  return entry;
}

namespace {

struct PromptScheduler {
  explicit PromptScheduler(size_t n, uint64_t seed) : order(n), rng(seed) {
    std::iota(order.begin(), order.end(), size_t{0});
    cursor = n;  // force shuffle on first draw
  }
  size_t next() {
    if (cursor >= order.size()) {
      for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  }
  std::vector<size_t> order;
  Rng rng;
  size_t cursor;
};

TrainResult train_core(const ModelHandle& model, const DetectorHandle& detector,
                       const std::vector<TokenSequence>& task_prompts,
                       const std::vector<TokenSequence>& val_prompts,
                       const RewardModel& reward_model, const PPOConfig& cfg,
                       const GenerationConfig& gen, std::unique_ptr<PromptVariable> variable,
                       const TrainCallbacks& cb) {
  cfg.validate();
  gen.validate();
  require(!task_prompts.empty(), "training needs at least one task prompt");

  TrainResult res;
  res.base_checksum_before = model.lm->checksum();
  PolicyState policy = make_policy_state(model, std::move(variable), cfg);
  const uint64_t frozen_before = policy.prompt->frozen_checksum();

  auto eval_val = [&](int step) {
    const SoftPrompt sp = policy.prompt->current();
    std::vector<Label> preds, truths;
    for (size_t i = 0; i < val_prompts.size(); ++i) {
      GenerationConfig g = gen;
      g.seed = derive_seed(cfg.seed, "val-gen",
                           (static_cast<uint64_t>(step) << 32) | static_cast<uint64_t>(i));
      const auto out = generate<float>(*model.lm, &sp, val_prompts[i], g, model.specials);
      const std::string text = decode_plain(*model.tok, out.tokens);
      // degenerate empty output counts as detected, never as evasion
      truths.push_back(Label::ai);
      preds.push_back(text.empty() ? Label::ai : classify(detector, text).label);
    }
    return f1_ai(preds, truths).f1;
  };

  std::unique_ptr<PromptVariable> best = policy.prompt->clone();
  double best_f1 = std::numeric_limits<double>::infinity();
  double last_f1 = -1.0;
  if (!val_prompts.empty()) {
    best_f1 = last_f1 = res.baseline_val_f1 = eval_val(0);
    if (cb.on_eval) cb.on_eval(0, last_f1);
  }

  PromptScheduler sched(task_prompts.size(), derive_seed(cfg.seed, "prompt-order"));
  int since_best = 0;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    std::vector<TokenSequence> batch_prompts;
    batch_prompts.reserve(static_cast<size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) batch_prompts.push_back(task_prompts[sched.next()]);

    GenerationConfig g = gen;
    g.seed = derive_seed(cfg.seed, "rollout-step", static_cast<uint64_t>(step));
    const auto samples = rollout(policy, batch_prompts, g);

    std::vector<RewardRecord> recs;
    recs.reserve(samples.size());
    for (const auto& s : samples) {
      const double z = s.text.empty() ? 0.0 : reward(detector, s.text);
      const double kl = kl_penalty(s.policy_logps, s.ref_logps);
      recs.push_back(combined_reward(reward_model.apply(z), kl, cfg.beta));
      res.sample_log.push_back({step, recs.back()});
      if (cb.on_sample) cb.on_sample(res.sample_log.back());
    }

    TrainLogEntry entry = ppo_step(policy, samples, recs, cfg);
    entry.step = step;
    entry.val_detector_f1 = last_f1;
    res.steps_run = step;

    bool stop = false;
    if (!val_prompts.empty() && step % cfg.eval_interval == 0) {
      last_f1 = eval_val(step);
      entry.val_detector_f1 = last_f1;
      if (cb.on_eval) cb.on_eval(step, last_f1);
      if (last_f1 < best_f1 - 1e-12) {
        best_f1 = last_f1;
        best = policy.prompt->clone();
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        stop = true;  // val F1 has stopped decreasing
      }
    }
    res.log.push_back(entry);
    if (cb.on_step) cb.on_step(entry);
    if (stop) break;
  }

  if (val_prompts.empty()) best = policy.prompt->clone();
  res.best_prompt = best->current();
  res.final_prompt = policy.prompt->current();
  if (const Projector* p = best->projector()) res.best_projector = *p;
  res.best_val_f1 = std::isfinite(best_f1) ? best_f1 : -1.0;
  res.final_value = policy.value;
  res.base_checksum_after = model.lm->checksum();
  require(res.base_checksum_before == res.base_checksum_after,
          "base model parameters changed during training");
  require(policy.prompt->frozen_checksum() == frozen_before,
          "frozen prompt parameters changed during training");
  return res;
}

}  // namespace

TrainResult train_evasive_prompt(const ModelHandle& model, const DetectorHandle& detector,
                                 const std::vector<TokenSequence>& task_prompts,
                                 const std::vector<TokenSequence>& val_prompts,
                                 const RewardModel& reward_model, const PPOConfig& cfg,
                                 const GenerationConfig& gen, SoftPrompt init,
                                 const TrainCallbacks& cb) {
  require(init.embed_dim() == model.config().d_model,
          "initial prompt embed_dim does not match model");
  return train_core(model, detector, task_prompts, val_prompts, reward_model, cfg, gen,
                    make_direct_prompt(std::move(init)), cb);
}

TrainResult train_transfer(const SoftPrompt& source_prompt, const ModelHandle& target,
                           const DetectorHandle& detector,
                           const std::vector<TokenSequence>& task_prompts,
                           const std::vector<TokenSequence>& val_prompts,
                           const RewardModel& reward_model, const PPOConfig& cfg,
                           const GenerationConfig& gen, const Projector& init_proj,
                           const TrainCallbacks& cb) {
  require(init_proj.e_s() == source_prompt.embed_dim(),
          "projector input dim does not match source prompt");
  require(init_proj.e_t() == target.config().d_model,
          "projector output dim does not match target model");
  return train_core(target, detector, task_prompts, val_prompts, reward_model, cfg, gen,
                    make_projected_prompt(source_prompt, init_proj, target.id), cb);
}

}  // namespace escape
