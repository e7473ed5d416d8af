#pragma once

#include "escape/common.hpp"
#include "escape/lm.hpp"
#include "escape/rng.hpp"
#include "escape/soft_prompt.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace escape {

struct GenerationConfig {
  double top_p = 0.96;
  double temperature = 0.9;
  int max_len = 256;
  uint64_t seed = 0;

  void validate() const {
    require(top_p > 0.0 && top_p <= 1.0, "gen.top_p must be in (0,1]");
    require(temperature > 0.0, "gen.temperature must be positive");
    require(max_len >= 1, "gen.max_len must be at least 1");
  }
};

struct TokenSequence {
  std::vector<TokenId> tokens;
  int length() const { return static_cast<int>(tokens.size()); }
  bool operator==(const TokenSequence&) const = default;
};

/// Start/stop token conventions for decoding. Either id may be -1: no bos row
/// is fed, or generation never stops early.
struct DecodeSpecials {
  TokenId bos = -1;
  TokenId eos = -1;
};

namespace detail {

/// Samples from the nucleus of a logits row: smallest prefix of the sorted
/// distribution whose mass reaches top_p (the crossing token included),
/// renormalized. Temperatures below 1e-8 short-circuit to argmax.
inline int nucleus_sample(const Vectord& logits, const GenerationConfig& cfg, Rng& rng) {
  const Eigen::Index V = logits.size();
  if (cfg.temperature < 1e-8) {
    Eigen::Index best;
    logits.maxCoeff(&best);
    return static_cast<int>(best);
  }
  Vectord p = logits / cfg.temperature;
  const double lse = log_sum_exp(p);
  p = (p.array() - lse).exp();
  std::vector<int> order(static_cast<size_t>(V));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&p](int a, int b) { return p(a) > p(b); });
  double cum = 0.0;
  size_t keep = 0;
  while (keep < order.size()) {
    cum += p(order[keep]);
    ++keep;
    if (cum >= cfg.top_p) break;
  }
  const double r = rng.uniform() * cum;
  double acc = 0.0;
  for (size_t i = 0; i < keep; ++i) {
    acc += p(order[i]);
    if (r < acc) return order[i];
  }
  return order[keep - 1];
}

}  // namespace detail

/// Builds the embedded decode context [bos?][soft rows][prompt tokens] with
/// positional rows included, so soft rows sit directly after the start token.
template <typename Scalar>
MatrixX<Scalar> build_context(const TransformerLM<Scalar>& lm,
                              const SoftPromptT<Scalar>* soft_prompt,
                              const std::vector<TokenId>& prompt, DecodeSpecials sp) {
  const int k = soft_prompt ? soft_prompt->k() : 0;
  const int nb = sp.bos >= 0 ? 1 : 0;
  if (soft_prompt)
    require(soft_prompt->embed_dim() == lm.config().d_model,
            "soft prompt embed_dim does not match model");
  const int total = nb + k + static_cast<int>(prompt.size());
  require(total >= 1, "decode context is empty");
  require(total <= lm.config().max_ctx, "context overflow: prompt plus soft prompt too long");
  MatrixX<Scalar> x(total, lm.config().d_model);
  int r = 0;
  if (nb) x.row(r++) = lm.embed_tokens({sp.bos}, 0).row(0);
  for (int i = 0; i < k; ++i, ++r) x.row(r) = soft_prompt->rows.row(i) + lm.weights().pos.row(r);
  if (!prompt.empty()) x.bottomRows(static_cast<Eigen::Index>(prompt.size())) =
      lm.embed_tokens(prompt, r);
  return x;
}

/// Nucleus-sampling generation conditioned on an optional soft prompt.
/// Returns only the newly generated tokens; eos (when configured) stops
/// decoding and is not part of the output.
template <typename Scalar>
TokenSequence generate(const TransformerLM<Scalar>& lm, const SoftPromptT<Scalar>* soft_prompt,
                       const TokenSequence& prompt, const GenerationConfig& cfg,
                       DecodeSpecials sp = {}) {
  cfg.validate();
  MatrixX<Scalar> ctx = build_context(lm, soft_prompt, prompt.tokens, sp);
  require(ctx.rows() + cfg.max_len <= lm.config().max_ctx,
          "context overflow: prompt plus max_len exceeds max context");
  Rng rng(cfg.seed);
  auto st = lm.new_decode_state();
  RowVectorX<Scalar> logits;
  for (Eigen::Index t = 0; t < ctx.rows(); ++t) logits = lm.decode_step(st, ctx.row(t));
  TokenSequence out;
  for (int i = 0; i < cfg.max_len; ++i) {
    Vectord lg = logits.transpose().template cast<double>();
    require(lg.allFinite(), "non-finite logits during generation");
    const TokenId next = static_cast<TokenId>(detail::nucleus_sample(lg, cfg, rng));
    if (sp.eos >= 0 && next == sp.eos) return out;
    out.tokens.push_back(next);
    if (i + 1 < cfg.max_len)
      logits = lm.decode_step(st, lm.embed_tokens({next}, st.length).row(0));
  }
  return out;
}

/// log p(target_i | bos?, soft prompt?, prefix, target_<i) for every i.
template <typename Scalar>
std::vector<Scalar> sequence_log_probs(const TransformerLM<Scalar>& lm,
                                       const SoftPromptT<Scalar>* soft_prompt,
                                       const TokenSequence& prefix, const TokenSequence& target,
                                       DecodeSpecials sp = {}) {
  require(!target.tokens.empty(), "sequence_log_probs: empty target");
  std::vector<TokenId> all = prefix.tokens;
  all.insert(all.end(), target.tokens.begin(), target.tokens.end());
  MatrixX<Scalar> ctx = build_context(lm, soft_prompt, all, sp);
  const Eigen::Index pre =
      ctx.rows() - static_cast<Eigen::Index>(target.tokens.size());
  require(pre >= 1, "sequence_log_probs: no context before first target token");
  auto tr = lm.forward(ctx);
  std::vector<Scalar> out(target.tokens.size());
  for (size_t i = 0; i < target.tokens.size(); ++i) {
    VectorX<Scalar> row = tr.logits.row(pre - 1 + static_cast<Eigen::Index>(i)).transpose();
    out[i] = row(target.tokens[i]) - log_sum_exp(row);
  }
  return out;
}

}  // namespace escape
