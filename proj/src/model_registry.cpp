#include "escape/model_registry.hpp"

#include "escape/io.hpp"
#include "escape/optim.hpp"
#include "escape/rng.hpp"
#include "escape/toy_corpus.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>

namespace escape {

namespace fs = std::filesystem;

fs::path escape_home() {
  if (const char* env = std::getenv("ESCAPE_HOME"); env && *env) return fs::path(env);
  return fs::current_path() / ".escape_home";
}

namespace {

constexpr uint64_t kRegistrySeed = 0x455343506d646cull;

TransformerConfig tiny_cfg(int d_model, int d_ff) {
  TransformerConfig c;
  c.vocab_size = toy_tokenizer().vocab_size();
  c.d_model = d_model;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_ff = d_ff;
  c.max_ctx = 128;
  return c;
}

}  // namespace

const std::vector<ModelSpec>& builtin_model_specs() {
  static const std::vector<ModelSpec> specs = [] {
    std::vector<ModelSpec> out;
    auto add = [&out](const std::string& id, int d, int ff) {
      out.push_back({id, tiny_cfg(d, ff), derive_seed(kRegistrySeed, id)});
    };
    add("tiny-a", 48, 192);
    add("tiny-b", 64, 256);
    add("tiny-c", 56, 224);
    add("tiny-d", 40, 160);
    return out;
  }();
  return specs;
}

const ModelSpec& model_spec(const std::string& id) {
  for (const auto& s : builtin_model_specs())
    if (s.id == id) return s;
  throw Error("unknown model id: " + id + " (bundled: tiny-a, tiny-b, tiny-c, tiny-d)");
}

bool is_builtin_model(const std::string& id) {
  for (const auto& s : builtin_model_specs())
    if (s.id == id) return true;
  return false;
}

inline constexpr char kLmMagic[] = "ESLM1";

void save_lm(const TransformerLM<float>& lm, const std::string& id, int64_t seed,
             const fs::path& path) {
  auto out = open_binary_out(path);
  out.write(kLmMagic, 5);
  const auto& c = lm.config();
  write_u32(out, static_cast<uint32_t>(c.vocab_size));
  write_u32(out, static_cast<uint32_t>(c.d_model));
  write_u32(out, static_cast<uint32_t>(c.n_layers));
  write_u32(out, static_cast<uint32_t>(c.n_heads));
  write_u32(out, static_cast<uint32_t>(c.d_ff));
  write_u32(out, static_cast<uint32_t>(c.max_ctx));
  write_string(out, id);
  write_i64(out, seed);
  for_each_param(lm.weights(), [&out](const std::string&, Eigen::Map<const Vectorf> v) {
    write_u32(out, static_cast<uint32_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) write_f32(out, v(i));
  });
  require(out.good(), "failed writing model cache: " + path.string());
}

TransformerLM<float> load_lm(const fs::path& path, std::string* id_out) {
  auto in = open_binary_in(path);
  char magic[5];
  in.read(magic, 5);
  require(in.good() && std::string(magic, 5) == kLmMagic,
          "not a model cache file: " + path.string());
  TransformerConfig c;
  c.vocab_size = static_cast<int>(read_u32(in));
  c.d_model = static_cast<int>(read_u32(in));
  c.n_layers = static_cast<int>(read_u32(in));
  c.n_heads = static_cast<int>(read_u32(in));
  c.d_ff = static_cast<int>(read_u32(in));
  c.max_ctx = static_cast<int>(read_u32(in));
  c.validate();
  std::string id = read_string(in);
  read_i64(in);  // pretrain seed, informational
  TransformerWeights<float> w;
  w.init_zero(c);
  for_each_param(w, [&in, &path](const std::string& name, Eigen::Map<Vectorf> v) {
    const uint32_t n = read_u32(in);
    require(n == static_cast<uint32_t>(v.size()),
            "model cache shape mismatch at " + name + ": " + path.string());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = read_f32(in);
  });
  require(in.good(), "truncated model cache: " + path.string());
  if (id_out) *id_out = id;
  return TransformerLM<float>(c, std::move(w));
}

double pretrain_lm(TransformerLM<float>& lm, const Tokenizer& tok,
                   const std::vector<std::string>& docs, uint64_t seed,
                   const PretrainConfig& pc) {
  require(!docs.empty(), "pretraining needs at least one document");
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(docs.size());
  for (const auto& d : docs) {
    std::vector<TokenId> ids;
    ids.push_back(tok.bos_id());
    for (TokenId t : tok.encode(d)) ids.push_back(t);
    ids.push_back(tok.eos_id());
    if (static_cast<int>(ids.size()) > lm.config().max_ctx)
      ids.resize(static_cast<size_t>(lm.config().max_ctx));
    if (ids.size() >= 2) seqs.push_back(std::move(ids));
  }
  require(!seqs.empty(), "all pretraining documents were empty");

  Adam<float> opt(pc.lr);
  std::vector<size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  double last_epoch_loss = 0.0;
  for (int epoch = 0; epoch < pc.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, "pretrain-epoch", epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double epoch_loss = 0.0;
    int64_t epoch_tokens = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(pc.batch_docs)) {
      WeightGrads<float> wg = make_zero_grads<float>(lm.config());
      int64_t batch_tokens = 0;
      const size_t end = std::min(order.size(), start + static_cast<size_t>(pc.batch_docs));
      for (size_t j = start; j < end; ++j) {
        const auto& ids = seqs[order[j]];
        std::vector<TokenId> input(ids.begin(), ids.end() - 1);
        auto tr = lm.forward(lm.embed_tokens(input, 0));
        std::vector<std::pair<Eigen::Index, TokenId>> targets;
        targets.reserve(input.size());
        for (size_t t = 0; t < input.size(); ++t)
          targets.emplace_back(static_cast<Eigen::Index>(t), ids[t + 1]);
        Matrixf d_logits;
        epoch_loss += cross_entropy_from_logits<float>(tr.logits, targets, &d_logits);
        batch_tokens += static_cast<int64_t>(targets.size());
        Matrixf dx0 = lm.backward(tr, d_logits, {}, &wg);
        lm.accumulate_embedding_grads(input, 0, dx0, 0, wg);
      }
      epoch_tokens += batch_tokens;
      const float inv = 1.0f / static_cast<float>(batch_tokens);
      std::vector<Adam<float>::ParamView> params;
      std::vector<Adam<float>::GradView> grads;
      for_each_param(lm.weights(), [&params](const std::string&, Eigen::Map<Vectorf> v) {
        params.push_back(v);
      });
      for_each_param(wg, [&grads, inv](const std::string&, Eigen::Map<Vectorf> v) {
        v *= inv;
        grads.emplace_back(v.data(), v.size());
      });
      opt.step(std::move(params), grads);
    }
    last_epoch_loss = epoch_loss / static_cast<double>(epoch_tokens);
  }
  return last_epoch_loss;
}

ModelHandle prepare_model(const std::string& id, const fs::path& home) {
  const ModelSpec& spec = model_spec(id);
  const fs::path cache = home / "models" / (id + ".eslm");
  if (!fs::exists(cache)) {
    auto lm = TransformerLM<float>::random_init(spec.cfg, derive_seed(spec.seed, "init"));
    // Enough data and epochs that the tiny models learn both the template
    // grammar and the style-marker conditioning, not just the marginal mix.
    const auto docs = make_pretrain_docs(400, derive_seed(kRegistrySeed, "pretrain-data"));
    PretrainConfig pc;
    pc.docs_per_task = 400;
    pc.epochs = 12;
    const double loss = pretrain_lm(lm, toy_tokenizer(), docs, spec.seed, pc);
    std::cerr << "[models] pretrained " << id << " (final loss/token " << loss << ")\n";
    const fs::path tmp = cache.string() + ".tmp";
    save_lm(lm, id, static_cast<int64_t>(spec.seed), tmp);
    fs::rename(tmp, cache);
  }
  ModelHandle h;
  h.id = id;
  h.lm = std::make_shared<TransformerLM<float>>(load_lm(cache));
  h.tok = std::shared_ptr<const Tokenizer>(&toy_tokenizer(), [](const Tokenizer*) {});
  h.specials = {toy_tokenizer().bos_id(), toy_tokenizer().eos_id()};
  return h;
}

}  // namespace escape
