#pragma once

#include "escape/common.hpp"
#include "escape/rng.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace escape {

struct TransformerConfig {
  int vocab_size = 0;
  int d_model = 0;
  int n_layers = 0;
  int n_heads = 0;
  int d_ff = 0;
  int max_ctx = 0;
  double ln_eps = 1e-5;

  int head_dim() const { return d_model / n_heads; }
  void validate() const {
    require(vocab_size > 0 && d_model > 0 && n_layers > 0 && n_heads > 0 && d_ff > 0 &&
                max_ctx > 0,
            "transformer config fields must be positive");
    require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  }
};

template <typename Scalar>
struct LayerWeights {
  MatrixX<Scalar> Wq, Wk, Wv, Wo;  // d x d
  VectorX<Scalar> bq, bk, bv, bo;  // d
  VectorX<Scalar> ln1_g, ln1_b, ln2_g, ln2_b;
  MatrixX<Scalar> W1;  // d x d_ff
  VectorX<Scalar> b1;  // d_ff
  MatrixX<Scalar> W2;  // d_ff x d
  VectorX<Scalar> b2;  // d
};

// Decoder-only pre-LN transformer weights. Logits use an untied output
// matrix: logits = h * unembed^T + b_out.
template <typename Scalar>
struct TransformerWeights {
  MatrixX<Scalar> embed;    // V x d
  MatrixX<Scalar> pos;      // max_ctx x d
  std::vector<LayerWeights<Scalar>> layers;
  VectorX<Scalar> lnf_g, lnf_b;
  MatrixX<Scalar> unembed;  // V x d
  VectorX<Scalar> b_out;    // V

  void init_zero(const TransformerConfig& cfg);
  void init_random(const TransformerConfig& cfg, uint64_t seed, double scale = 0.02);
};

/// Applies `fn(name, flat_view)` to every parameter block, in a fixed order
/// shared by Adam, checkpoint IO, and checksums.
template <typename Scalar, typename Fn>
void for_each_param(TransformerWeights<Scalar>& w, Fn&& fn) {
  auto visit = [&fn](const std::string& name, auto& m) {
    fn(name, Eigen::Map<VectorX<Scalar>>(m.data(), m.size()));
  };
  visit("embed", w.embed);
  visit("pos", w.pos);
  for (size_t l = 0; l < w.layers.size(); ++l) {
    auto& L = w.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    visit(p + "Wq", L.Wq);
    visit(p + "bq", L.bq);
    visit(p + "Wk", L.Wk);
    visit(p + "bk", L.bk);
    visit(p + "Wv", L.Wv);
    visit(p + "bv", L.bv);
    visit(p + "Wo", L.Wo);
    visit(p + "bo", L.bo);
    visit(p + "ln1_g", L.ln1_g);
    visit(p + "ln1_b", L.ln1_b);
    visit(p + "ln2_g", L.ln2_g);
    visit(p + "ln2_b", L.ln2_b);
    visit(p + "W1", L.W1);
    visit(p + "b1", L.b1);
    visit(p + "W2", L.W2);
    visit(p + "b2", L.b2);
  }
  visit("lnf_g", w.lnf_g);
  visit("lnf_b", w.lnf_b);
  visit("unembed", w.unembed);
  visit("b_out", w.b_out);
}

template <typename Scalar, typename Fn>
void for_each_param(const TransformerWeights<Scalar>& w, Fn&& fn) {
  for_each_param(const_cast<TransformerWeights<Scalar>&>(w),
                 [&fn](const std::string& name, Eigen::Map<VectorX<Scalar>> view) {
                   fn(name, Eigen::Map<const VectorX<Scalar>>(view.data(), view.size()));
                 });
}

template <typename Scalar>
void TransformerWeights<Scalar>::init_zero(const TransformerConfig& cfg) {
  const int d = cfg.d_model;
  embed = MatrixX<Scalar>::Zero(cfg.vocab_size, d);
  pos = MatrixX<Scalar>::Zero(cfg.max_ctx, d);
  layers.assign(static_cast<size_t>(cfg.n_layers), {});
  for (auto& L : layers) {
    L.Wq = L.Wk = L.Wv = L.Wo = MatrixX<Scalar>::Zero(d, d);
    L.bq = L.bk = L.bv = L.bo = VectorX<Scalar>::Zero(d);
    L.ln1_g = L.ln2_g = VectorX<Scalar>::Ones(d);
    L.ln1_b = L.ln2_b = VectorX<Scalar>::Zero(d);
    L.W1 = MatrixX<Scalar>::Zero(d, cfg.d_ff);
    L.b1 = VectorX<Scalar>::Zero(cfg.d_ff);
    L.W2 = MatrixX<Scalar>::Zero(cfg.d_ff, d);
    L.b2 = VectorX<Scalar>::Zero(d);
  }
  lnf_g = VectorX<Scalar>::Ones(d);
  lnf_b = VectorX<Scalar>::Zero(d);
  unembed = MatrixX<Scalar>::Zero(cfg.vocab_size, d);
  b_out = VectorX<Scalar>::Zero(cfg.vocab_size);
}

template <typename Scalar>
void TransformerWeights<Scalar>::init_random(const TransformerConfig& cfg, uint64_t seed,
                                             double scale) {
  init_zero(cfg);
  Rng rng(seed);
  auto fill = [&rng, scale](MatrixX<Scalar>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = static_cast<Scalar>(rng.normal(0.0, scale));
  };
  fill(embed);
  fill(pos);
  for (auto& L : layers) {
    fill(L.Wq);
    fill(L.Wk);
    fill(L.Wv);
    fill(L.Wo);
    fill(L.W1);
    fill(L.W2);
  }
  fill(unembed);
}

// Gradient accumulator with the same shapes as the weights.
template <typename Scalar>
using WeightGrads = TransformerWeights<Scalar>;

template <typename Scalar>
WeightGrads<Scalar> make_zero_grads(const TransformerConfig& cfg) {
  WeightGrads<Scalar> g;
  g.init_zero(cfg);  // seeds LN gains with ones
  for_each_param(g, [](const std::string&, Eigen::Map<VectorX<Scalar>> v) { v.setZero(); });
  return g;
}

namespace detail {

template <typename Scalar>
struct LayerTrace {
  MatrixX<Scalar> x_in;            // T x d, block input
  MatrixX<Scalar> ln1_hat;         // normalized rows, pre-affine
  VectorX<Scalar> ln1_rstd;        // per-row 1/sigma
  MatrixX<Scalar> q, k, v;         // T x d
  std::vector<MatrixX<Scalar>> attn;  // per head: T x T row-softmax
  MatrixX<Scalar> ctx;             // T x d, concatenated head outputs
  MatrixX<Scalar> x_mid;           // after attention residual
  MatrixX<Scalar> ln2_hat;
  VectorX<Scalar> ln2_rstd;
  MatrixX<Scalar> mlp_pre;         // T x d_ff
  MatrixX<Scalar> mlp_act;         // gelu(mlp_pre)
};

}  // namespace detail

/// Forward activations for one sequence; required by backward().
template <typename Scalar>
struct ForwardTrace {
  MatrixX<Scalar> x0;  // embedded input rows (T x d), positions included
  std::vector<detail::LayerTrace<Scalar>> layers;
  MatrixX<Scalar> lnf_hat;
  VectorX<Scalar> lnf_rstd;
  MatrixX<Scalar> hidden;  // final hidden states, T x d
  MatrixX<Scalar> logits;  // T x V
};

/// Per-layer key/value cache for incremental decoding.
template <typename Scalar>
struct DecodeState {
  std::vector<MatrixX<Scalar>> k, v;  // per layer, grows to T x d
  int length = 0;
};

template <typename Scalar>
Scalar gelu(Scalar x) {
  const Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(c * (x + Scalar(0.044715) * x * x * x)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar c = Scalar(0.7978845608028654);
  const Scalar u = c * (x + Scalar(0.044715) * x * x * x);
  const Scalar t = std::tanh(u);
  const Scalar du = c * (Scalar(1) + Scalar(3) * Scalar(0.044715) * x * x);
  return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t * t) * du;
}

/// Frozen-capable decoder-only causal transformer over Eigen dense types.
template <typename Scalar>
class TransformerLM {
 public:
  TransformerLM() = default;
  TransformerLM(TransformerConfig cfg, TransformerWeights<Scalar> weights)
      : cfg_(cfg), w_(std::move(weights)) {
    cfg_.validate();
  }

  [[nodiscard]] static TransformerLM random_init(TransformerConfig cfg, uint64_t seed) {
    cfg.validate();
    TransformerWeights<Scalar> w;
    w.init_random(cfg, seed);
    return TransformerLM(cfg, std::move(w));
  }

  const TransformerConfig& config() const { return cfg_; }
  TransformerWeights<Scalar>& weights() { return w_; }
  const TransformerWeights<Scalar>& weights() const { return w_; }

  /// FNV-1a over every parameter byte in visitation order.
  uint64_t checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for_each_param(w_, [&h](const std::string&, Eigen::Map<const VectorX<Scalar>> v) {
      h = fnv1a64(v.data(), sizeof(Scalar) * static_cast<size_t>(v.size()), h);
    });
    return h;
  }

  /// Embeds token rows with positions starting at `pos0`.
  MatrixX<Scalar> embed_tokens(const std::vector<TokenId>& toks, int pos0 = 0) const {
    MatrixX<Scalar> x(static_cast<Eigen::Index>(toks.size()), cfg_.d_model);
    for (size_t i = 0; i < toks.size(); ++i) {
      require(toks[i] >= 0 && toks[i] < cfg_.vocab_size, "token id out of vocabulary");
      require(pos0 + static_cast<int>(i) < cfg_.max_ctx, "sequence exceeds max context");
      x.row(static_cast<Eigen::Index>(i)) =
          w_.embed.row(toks[i]) + w_.pos.row(pos0 + static_cast<int>(i));
    }
    return x;
  }

  /// Full forward pass over embedded rows `x0` (positions already added).
  ForwardTrace<Scalar> forward(const MatrixX<Scalar>& x0) const {
    const Eigen::Index T = x0.rows();
    require(T > 0 && T <= cfg_.max_ctx, "sequence length out of range");
    require(x0.cols() == cfg_.d_model, "input width mismatch");
    ForwardTrace<Scalar> tr;
    tr.x0 = x0;
    tr.layers.resize(static_cast<size_t>(cfg_.n_layers));
    MatrixX<Scalar> x = x0;
    for (int l = 0; l < cfg_.n_layers; ++l) {
      auto& lt = tr.layers[static_cast<size_t>(l)];
      const auto& L = w_.layers[static_cast<size_t>(l)];
      lt.x_in = x;
      MatrixX<Scalar> xn = layer_norm(x, L.ln1_g, L.ln1_b, lt.ln1_hat, lt.ln1_rstd);
      attention_forward(L, xn, lt);
      lt.x_mid = x + lt.ctx * L.Wo;
      lt.x_mid.rowwise() += L.bo.transpose();
      MatrixX<Scalar> xn2 =
          layer_norm(lt.x_mid, L.ln2_g, L.ln2_b, lt.ln2_hat, lt.ln2_rstd);
      lt.mlp_pre = xn2 * L.W1;
      lt.mlp_pre.rowwise() += L.b1.transpose();
      lt.mlp_act = lt.mlp_pre.unaryExpr([](Scalar v) { return gelu(v); });
      x = lt.x_mid + lt.mlp_act * L.W2;
      x.rowwise() += L.b2.transpose();
    }
    tr.hidden = layer_norm(x, w_.lnf_g, w_.lnf_b, tr.lnf_hat, tr.lnf_rstd);
    tr.logits = tr.hidden * w_.unembed.transpose();
    tr.logits.rowwise() += w_.b_out.transpose();
    return tr;
  }

  /// Backward pass. `d_logits` and `d_hidden` are gradients flowing into the
  /// logits and (directly) into the final hidden states; either may be empty.
  /// Returns d(x0). Weight gradients are accumulated into `wg` if non-null.
  MatrixX<Scalar> backward(const ForwardTrace<Scalar>& tr, const MatrixX<Scalar>& d_logits,
                           const MatrixX<Scalar>& d_hidden,
                           WeightGrads<Scalar>* wg = nullptr) const {
    const Eigen::Index T = tr.x0.rows();
    MatrixX<Scalar> dh = MatrixX<Scalar>::Zero(T, cfg_.d_model);
    if (d_logits.size() > 0) {
      dh.noalias() = d_logits * w_.unembed;
      if (wg) {
        wg->unembed.noalias() += d_logits.transpose() * tr.hidden;
        wg->b_out += d_logits.colwise().sum().transpose();
      }
    }
    if (d_hidden.size() > 0) dh += d_hidden;

    MatrixX<Scalar> dx = layer_norm_backward(dh, tr.lnf_hat, tr.lnf_rstd, w_.lnf_g,
                                             wg ? &wg->lnf_g : nullptr,
                                             wg ? &wg->lnf_b : nullptr);
    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
      const auto& lt = tr.layers[static_cast<size_t>(l)];
      const auto& L = w_.layers[static_cast<size_t>(l)];
      LayerWeights<Scalar>* lg = wg ? &wg->layers[static_cast<size_t>(l)] : nullptr;

      // MLP branch: x = x_mid + gelu(ln2(x_mid) W1 + b1) W2 + b2
      MatrixX<Scalar> d_act = dx * L.W2.transpose();
      if (lg) {
        lg->W2.noalias() += lt.mlp_act.transpose() * dx;
        lg->b2 += dx.colwise().sum().transpose();
      }
      MatrixX<Scalar> d_pre =
          d_act.cwiseProduct(lt.mlp_pre.unaryExpr([](Scalar v) { return gelu_grad(v); }));
      MatrixX<Scalar> d_xn2 = d_pre * L.W1.transpose();
      if (lg) {
        MatrixX<Scalar> xn2 = lt.ln2_hat;
        xn2.array().rowwise() *= L.ln2_g.transpose().array();
        xn2.rowwise() += L.ln2_b.transpose();
        lg->W1.noalias() += xn2.transpose() * d_pre;
        lg->b1 += d_pre.colwise().sum().transpose();
      }
      MatrixX<Scalar> d_mid =
          dx + layer_norm_backward(d_xn2, lt.ln2_hat, lt.ln2_rstd, L.ln2_g,
                                   lg ? &lg->ln2_g : nullptr, lg ? &lg->ln2_b : nullptr);

      // Attention branch: x_mid = x_in + ctx Wo + bo
      MatrixX<Scalar> d_ctx = d_mid * L.Wo.transpose();
      if (lg) {
        lg->Wo.noalias() += lt.ctx.transpose() * d_mid;
        lg->bo += d_mid.colwise().sum().transpose();
      }
      MatrixX<Scalar> d_xn =
          attention_backward(L, lt, d_ctx, lg);
      dx = d_mid + layer_norm_backward(d_xn, lt.ln1_hat, lt.ln1_rstd, L.ln1_g,
                                       lg ? &lg->ln1_g : nullptr,
                                       lg ? &lg->ln1_b : nullptr);
    }
    return dx;
  }

  /// Adds embedding/position gradients for token rows produced by
  /// embed_tokens(); soft rows are the caller's responsibility.
  void accumulate_embedding_grads(const std::vector<TokenId>& toks, int pos0,
                                  const MatrixX<Scalar>& dx0, Eigen::Index row0,
                                  WeightGrads<Scalar>& wg) const {
    for (size_t i = 0; i < toks.size(); ++i) {
      wg.embed.row(toks[i]) += dx0.row(row0 + static_cast<Eigen::Index>(i));
      wg.pos.row(pos0 + static_cast<int>(i)) += dx0.row(row0 + static_cast<Eigen::Index>(i));
    }
  }

  // --- incremental decoding ---

  DecodeState<Scalar> new_decode_state() const {
    DecodeState<Scalar> st;
    st.k.assign(static_cast<size_t>(cfg_.n_layers), MatrixX<Scalar>(0, cfg_.d_model));
    st.v.assign(static_cast<size_t>(cfg_.n_layers), MatrixX<Scalar>(0, cfg_.d_model));
    return st;
  }

  /// Feeds one embedded row (position included) and returns its logits row.
  RowVectorX<Scalar> decode_step(DecodeState<Scalar>& st, const RowVectorX<Scalar>& x_row) const {
    require(st.length < cfg_.max_ctx, "decode exceeds max context");
    const int H = cfg_.n_heads, dh = cfg_.head_dim();
    RowVectorX<Scalar> x = x_row;
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const auto& L = w_.layers[static_cast<size_t>(l)];
      RowVectorX<Scalar> xn = layer_norm_row(x, L.ln1_g, L.ln1_b);
      RowVectorX<Scalar> q = xn * L.Wq + L.bq.transpose();
      RowVectorX<Scalar> k = xn * L.Wk + L.bk.transpose();
      RowVectorX<Scalar> v = xn * L.Wv + L.bv.transpose();
      auto& K = st.k[static_cast<size_t>(l)];
      auto& V = st.v[static_cast<size_t>(l)];
      K.conservativeResize(st.length + 1, Eigen::NoChange);
      V.conservativeResize(st.length + 1, Eigen::NoChange);
      K.row(st.length) = k;
      V.row(st.length) = v;
      RowVectorX<Scalar> ctx(cfg_.d_model);
      const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
      for (int h = 0; h < H; ++h) {
        auto Kh = K.middleCols(h * dh, dh);
        auto Vh = V.middleCols(h * dh, dh);
        VectorX<Scalar> scores = (Kh * q.segment(h * dh, dh).transpose()) * scale;
        softmax_inplace<Scalar>(scores);
        ctx.segment(h * dh, dh) = scores.transpose() * Vh;
      }
      x += ctx * L.Wo + L.bo.transpose();
      RowVectorX<Scalar> xn2 = layer_norm_row(x, L.ln2_g, L.ln2_b);
      RowVectorX<Scalar> pre = xn2 * L.W1 + L.b1.transpose();
      x += pre.unaryExpr([](Scalar vv) { return gelu(vv); }) * L.W2 + L.b2.transpose();
    }
    ++st.length;
    RowVectorX<Scalar> h = layer_norm_row(x, w_.lnf_g, w_.lnf_b);
    return h * w_.unembed.transpose() + w_.b_out.transpose();
  }

 private:
  MatrixX<Scalar> layer_norm(const MatrixX<Scalar>& x, const VectorX<Scalar>& g,
                             const VectorX<Scalar>& b, MatrixX<Scalar>& hat,
                             VectorX<Scalar>& rstd) const {
    const Eigen::Index T = x.rows(), d = x.cols();
    hat.resize(T, d);
    rstd.resize(T);
    MatrixX<Scalar> out(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
      const Scalar mu = x.row(t).mean();
      auto centered = (x.row(t).array() - mu).eval();
      const Scalar var = centered.square().mean();
      const Scalar rs = Scalar(1) / std::sqrt(var + Scalar(cfg_.ln_eps));
      rstd(t) = rs;
      hat.row(t) = centered * rs;
      out.row(t) = hat.row(t).cwiseProduct(g.transpose()) + b.transpose();
    }
    return out;
  }

  RowVectorX<Scalar> layer_norm_row(const RowVectorX<Scalar>& x, const VectorX<Scalar>& g,
                                    const VectorX<Scalar>& b) const {
    const Scalar mu = x.mean();
    auto centered = (x.array() - mu).eval();
    const Scalar var = centered.square().mean();
    const Scalar rs = Scalar(1) / std::sqrt(var + Scalar(cfg_.ln_eps));
    return ((centered * rs).matrix().cwiseProduct(g.transpose()) + b.transpose());
  }

  MatrixX<Scalar> layer_norm_backward(const MatrixX<Scalar>& dy, const MatrixX<Scalar>& hat,
                                      const VectorX<Scalar>& rstd, const VectorX<Scalar>& g,
                                      VectorX<Scalar>* dg, VectorX<Scalar>* db) const {
    const Eigen::Index T = dy.rows(), d = dy.cols();
    MatrixX<Scalar> dx(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
      auto a = dy.row(t).cwiseProduct(g.transpose());
      const Scalar m1 = a.mean();
      const Scalar m2 = a.cwiseProduct(hat.row(t)).mean();
      dx.row(t) = rstd(t) * (a.array() - m1 - hat.row(t).array() * m2).matrix();
    }
    if (dg) *dg += dy.cwiseProduct(hat).colwise().sum().transpose();
    if (db) *db += dy.colwise().sum().transpose();
    return dx;
  }

  void attention_forward(const LayerWeights<Scalar>& L, const MatrixX<Scalar>& xn,
                         detail::LayerTrace<Scalar>& lt) const {
    const Eigen::Index T = xn.rows();
    const int H = cfg_.n_heads, dh = cfg_.head_dim();
    lt.q.noalias() = xn * L.Wq;
    lt.q.rowwise() += L.bq.transpose();
    lt.k.noalias() = xn * L.Wk;
    lt.k.rowwise() += L.bk.transpose();
    lt.v.noalias() = xn * L.Wv;
    lt.v.rowwise() += L.bv.transpose();
    lt.attn.assign(static_cast<size_t>(H), MatrixX<Scalar>());
    lt.ctx.resize(T, cfg_.d_model);
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
    for (int h = 0; h < H; ++h) {
      auto Qh = lt.q.middleCols(h * dh, dh);
      auto Kh = lt.k.middleCols(h * dh, dh);
      auto Vh = lt.v.middleCols(h * dh, dh);
      MatrixX<Scalar> scores = (Qh * Kh.transpose()) * scale;
      MatrixX<Scalar>& probs = lt.attn[static_cast<size_t>(h)];
      probs.setZero(T, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        VectorX<Scalar> row = scores.row(t).head(t + 1).transpose();
        softmax_inplace<Scalar>(row);
        probs.row(t).head(t + 1) = row.transpose();
      }
      lt.ctx.middleCols(h * dh, dh).noalias() = probs * Vh;
    }
  }

  MatrixX<Scalar> attention_backward(const LayerWeights<Scalar>& L,
                                     const detail::LayerTrace<Scalar>& lt,
                                     const MatrixX<Scalar>& d_ctx,
                                     LayerWeights<Scalar>* lg) const {
    const Eigen::Index T = d_ctx.rows();
    const int H = cfg_.n_heads, dh = cfg_.head_dim();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
    MatrixX<Scalar> dq(T, cfg_.d_model), dk(T, cfg_.d_model), dv(T, cfg_.d_model);
    for (int h = 0; h < H; ++h) {
      const auto& probs = lt.attn[static_cast<size_t>(h)];
      auto Vh = lt.v.middleCols(h * dh, dh);
      auto Qh = lt.q.middleCols(h * dh, dh);
      auto Kh = lt.k.middleCols(h * dh, dh);
      auto d_ctx_h = d_ctx.middleCols(h * dh, dh);
      MatrixX<Scalar> d_probs = d_ctx_h * Vh.transpose();
      dv.middleCols(h * dh, dh).noalias() = probs.transpose() * d_ctx_h;
      // Row-softmax backward; rows are already causal (zero beyond t).
      MatrixX<Scalar> d_scores(T, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        auto p = probs.row(t).head(t + 1);
        auto dp = d_probs.row(t).head(t + 1);
        const Scalar dot = p.cwiseProduct(dp).sum();
        d_scores.row(t).setZero();
        d_scores.row(t).head(t + 1) = (p.array() * (dp.array() - dot)).matrix();
      }
      dq.middleCols(h * dh, dh).noalias() = d_scores * Kh * scale;
      dk.middleCols(h * dh, dh).noalias() = d_scores.transpose() * Qh * scale;
    }
    MatrixX<Scalar> xn = lt.ln1_hat;
    xn.array().rowwise() *= L.ln1_g.transpose().array();
    xn.rowwise() += L.ln1_b.transpose();
    if (lg) {
      lg->Wq.noalias() += xn.transpose() * dq;
      lg->bq += dq.colwise().sum().transpose();
      lg->Wk.noalias() += xn.transpose() * dk;
      lg->bk += dk.colwise().sum().transpose();
      lg->Wv.noalias() += xn.transpose() * dv;
      lg->bv += dv.colwise().sum().transpose();
    }
    MatrixX<Scalar> d_xn = dq * L.Wq.transpose();
    d_xn.noalias() += dk * L.Wk.transpose();
    d_xn.noalias() += dv * L.Wv.transpose();
    return d_xn;
  }

  TransformerConfig cfg_;
  TransformerWeights<Scalar> w_;
};

/// Cross-entropy helpers used by pretraining and tests: returns the summed
/// loss over (position, target) pairs and writes dLoss/dLogits.
template <typename Scalar>
Scalar cross_entropy_from_logits(const MatrixX<Scalar>& logits,
                                 const std::vector<std::pair<Eigen::Index, TokenId>>& targets,
                                 MatrixX<Scalar>* d_logits) {
  Scalar loss = 0;
  if (d_logits) d_logits->setZero(logits.rows(), logits.cols());
  for (const auto& [row, tok] : targets) {
    VectorX<Scalar> lr = logits.row(row).transpose();
    const Scalar lse = log_sum_exp(lr);
    loss += lse - lr(tok);
    if (d_logits) {
      VectorX<Scalar> p = (lr.array() - lse).exp();
      p(tok) -= Scalar(1);
      d_logits->row(row) += p.transpose();
    }
  }
  return loss;
}

}  // namespace escape
