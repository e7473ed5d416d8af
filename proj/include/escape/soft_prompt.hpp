#pragma once

#include "escape/common.hpp"
#include "escape/io.hpp"
#include "escape/lm.hpp"
#include "escape/rng.hpp"
#include "escape/tokenizer.hpp"

#include <filesystem>
#include <string>

namespace escape {

/// k trainable embedding rows prepended to the frozen model's input, plus the
/// metadata needed to reproduce and transfer them.
template <typename Scalar>
struct SoftPromptT {
  MatrixX<Scalar> rows;  // k x embed_dim
  std::string source_model_id;
  std::string task;
  std::string init_text;
  int64_t seed = 0;

  int k() const { return static_cast<int>(rows.rows()); }
  int embed_dim() const { return static_cast<int>(rows.cols()); }

  template <typename Other>
  SoftPromptT<Other> cast() const {
    SoftPromptT<Other> out;
    out.rows = rows.template cast<Other>();
    out.source_model_id = source_model_id;
    out.task = task;
    out.init_text = init_text;
    out.seed = seed;
    return out;
  }
};

using SoftPrompt = SoftPromptT<float>;

/// Initializes k rows from the embeddings of `init_text` tokens, padding with
/// draws from N(0, s^2) where s matches the typical vocabulary row scale.
template <typename Scalar>
SoftPromptT<Scalar> init_soft_prompt(const TransformerLM<Scalar>& lm, const Tokenizer& tok,
                                     int k, const std::string& init_text, uint64_t seed) {
  require(k > 0, "soft prompt needs at least one row");
  const auto& embed = lm.weights().embed;
  const int e = lm.config().d_model;
  SoftPromptT<Scalar> p;
  p.rows.resize(k, e);
  p.init_text = init_text;
  p.seed = static_cast<int64_t>(seed);
  int filled = 0;
  if (!init_text.empty()) {
    for (TokenId id : tok.encode(init_text)) {
      if (filled >= k) break;
      p.rows.row(filled++) = embed.row(id);
    }
  }
  if (filled < k) {
    const double mean_norm = embed.rowwise().norm().mean();
    const double stddev = mean_norm / std::sqrt(static_cast<double>(e));
    Rng rng(derive_seed(seed, "soft-prompt-init"));
    for (; filled < k; ++filled)
      for (int j = 0; j < e; ++j)
        p.rows(filled, j) = static_cast<Scalar>(rng.normal(0.0, stddev));
  }
  return p;
}

inline constexpr char kSoftPromptMagic[] = "ESCP1";

template <typename Scalar>
void save_soft_prompt(const SoftPromptT<Scalar>& p, const std::filesystem::path& path) {
  auto out = open_binary_out(path);
  out.write(kSoftPromptMagic, 5);
  write_u32(out, static_cast<uint32_t>(p.rows.rows()));
  write_u32(out, static_cast<uint32_t>(p.rows.cols()));
  write_string(out, p.source_model_id);
  write_string(out, p.task);
  write_string(out, p.init_text);
  write_i64(out, p.seed);
  Matrixf rows = p.rows.template cast<float>();
  write_matrix_f32(out, rows);
  require(out.good(), "failed writing soft prompt: " + path.string());
}

/// Loads an ESCP1 checkpoint. If `expected_embed_dim` >= 0 the stored width
/// must match; a mismatched prompt cannot be applied to the model at hand.
inline SoftPrompt load_soft_prompt(const std::filesystem::path& path,
                                   int expected_embed_dim = -1) {
  auto in = open_binary_in(path);
  char magic[5];
  in.read(magic, 5);
  require(in.good() && std::string(magic, 5) == kSoftPromptMagic,
          "not a soft prompt checkpoint: " + path.string());
  const uint32_t k = read_u32(in);
  const uint32_t e = read_u32(in);
  require(k > 0 && e > 0, "soft prompt checkpoint has empty shape");
  require(expected_embed_dim < 0 || static_cast<int>(e) == expected_embed_dim,
          "soft prompt embed_dim " + std::to_string(e) + " does not match model embed_dim " +
              std::to_string(expected_embed_dim));
  SoftPrompt p;
  p.source_model_id = read_string(in);
  p.task = read_string(in);
  p.init_text = read_string(in);
  p.seed = read_i64(in);
  p.rows = read_matrix_f32(in, k, e);
  require(in.good(), "truncated soft prompt checkpoint: " + path.string());
  return p;
}

}  // namespace escape
