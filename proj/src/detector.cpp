#include "escape/detector.hpp"

#include "escape/evalx.hpp"
#include "escape/generate.hpp"
#include "escape/io.hpp"
#include "escape/optim.hpp"
#include "escape/rng.hpp"
#include "escape/toy_corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace escape {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(DetectorKind k) {
  return k == DetectorKind::supervised ? "supervised" : "zero_shot";
}

DetectorKind detector_kind_from_string(const std::string& s) {
  if (s == "supervised") return DetectorKind::supervised;
  if (s == "zero_shot") return DetectorKind::zero_shot;
  throw Error("unknown detector kind: " + s);
}

std::string to_string(Perturber p) {
  switch (p) {
    case Perturber::mask_fill: return "mask_fill";
    case Perturber::synonym_swap: return "synonym_swap";
    case Perturber::identity: return "identity";
  }
  throw Error("unreachable perturber value");
}

Perturber perturber_from_string(const std::string& s) {
  if (s == "mask_fill") return Perturber::mask_fill;
  if (s == "synonym_swap") return Perturber::synonym_swap;
  if (s == "identity") return Perturber::identity;
  throw Error("unknown perturber: " + s);
}

namespace {

constexpr size_t kMaxDetectorWords = 512;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vectorf featurize_words(const std::vector<std::string>& words) {
  Vectorf x = Vectorf::Zero(kFeatureDim);
  if (words.empty()) return x;
  const float n = static_cast<float>(words.size());
  for (const auto& w : words)
    x(static_cast<Eigen::Index>(fnv1a64("u:" + w) % kUnigramBuckets)) += 1.0f / n;
  for (size_t i = 0; i + 1 < words.size(); ++i)
    x(kUnigramBuckets +
      static_cast<Eigen::Index>(fnv1a64("b:" + words[i] + " " + words[i + 1]) % kBigramBuckets)) +=
        1.0f / n;

  // stylometrics, each roughly in [0,1]
  auto is_punct = [](const std::string& w) { return w.size() == 1 && !std::isalnum((unsigned char)w[0]); };
  double chars = 0, punct = 0, commas = 0, longw = 0;
  std::unordered_set<std::string> types;
  std::vector<double> sent_lens;
  double cur_sent = 0;
  for (const auto& w : words) {
    types.insert(w);
    if (is_punct(w)) {
      punct += 1;
      if (w == ",") commas += 1;
      if (w == "." || w == "!" || w == "?") {
        sent_lens.push_back(cur_sent);
        cur_sent = 0;
      }
    } else {
      chars += static_cast<double>(w.size());
      if (w.size() > 6) longw += 1;
      cur_sent += 1;
    }
  }
  if (cur_sent > 0) sent_lens.push_back(cur_sent);
  const double n_words = std::max(1.0, n - punct);
  double mean_sent = 0, sd_sent = 0;
  if (!sent_lens.empty()) {
    mean_sent = std::accumulate(sent_lens.begin(), sent_lens.end(), 0.0) /
                static_cast<double>(sent_lens.size());
    for (double s : sent_lens) sd_sent += (s - mean_sent) * (s - mean_sent);
    sd_sent = std::sqrt(sd_sent / static_cast<double>(sent_lens.size()));
  }
  const Eigen::Index s0 = kUnigramBuckets + kBigramBuckets;
  x(s0 + 0) = static_cast<float>(std::min(1.0, n / 100.0));
  x(s0 + 1) = static_cast<float>(std::min(1.0, chars / n_words / 10.0));
  x(s0 + 2) = static_cast<float>(punct / n);
  x(s0 + 3) = static_cast<float>(static_cast<double>(types.size()) / n);
  x(s0 + 4) = static_cast<float>(std::min(1.0, mean_sent / 20.0));
  x(s0 + 5) = static_cast<float>(longw / n_words);
  x(s0 + 6) = static_cast<float>(commas / n);
  x(s0 + 7) = static_cast<float>(std::min(1.0, sd_sent / 20.0));
  return x;
}

std::vector<std::string> detector_words(const std::string& text) {
  auto words = Tokenizer::split_words(text);
  if (words.size() > kMaxDetectorWords) {
    std::cerr << "[detector] input of " << words.size() << " words truncated to "
              << kMaxDetectorWords << "\n";
    words.resize(kMaxDetectorWords);
  }
  return words;
}

DetectorVerdict verdict_from_p_ai(double p_ai) {
  DetectorVerdict v;
  v.p_ai = p_ai;
  v.p_human = 1.0 - p_ai;
  v.label = p_ai > 0.5 ? Label::ai : Label::human;
  return v;
}

}  // namespace

Vectorf featurize(const std::string& text) { return featurize_words(detector_words(text)); }

DetectorVerdict classify(const DetectorHandle& det, const std::string& text) {
  require(!text.empty(), "classify: empty text");
  if (det.kind == DetectorKind::supervised) {
    const Vectorf x = featurize(text);
    const double z = static_cast<double>(det.params.w.dot(x)) + det.params.b;
    return verdict_from_p_ai(sigmoid(z));
  }
  require(det.proxy.has_value(), "zero-shot detector has no proxy model loaded");
  const double score = detectgpt_score(*det.proxy, text, det.perturb);
  return verdict_from_p_ai(sigmoid(det.calib_scale * (score - det.threshold)));
}

double reward(const DetectorHandle& det, const std::string& text) {
  return classify(det, text).p_human;
}

double mean_token_log_prob(const ModelHandle& m, const std::string& text, bool* windowed) {
  const auto ids = m.tok->encode(text);
  require(!ids.empty(), "mean_token_log_prob: text has no tokens");
  const size_t window = static_cast<size_t>(m.config().max_ctx - 1);
  if (windowed) *windowed = ids.size() > window;
  double total = 0.0;
  for (size_t start = 0; start < ids.size(); start += window) {
    TokenSequence chunk;
    chunk.tokens.assign(ids.begin() + static_cast<ptrdiff_t>(start),
                        ids.begin() + static_cast<ptrdiff_t>(std::min(ids.size(), start + window)));
    const auto lps = sequence_log_probs<float>(*m.lm, nullptr, {}, chunk, m.specials);
    total += std::accumulate(lps.begin(), lps.end(), 0.0);
  }
  return total / static_cast<double>(ids.size());
}

double mean_token_log_prob(const ModelHandle& m, const std::string& text) {
  return mean_token_log_prob(m, text, nullptr);
}

std::vector<std::string> make_perturbations(const ModelHandle& proxy, const std::string& text,
                                            const PerturbationConfig& cfg) {
  cfg.validate();
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(cfg.n_perturbations));
  if (cfg.perturber == Perturber::identity) {
    out.assign(static_cast<size_t>(cfg.n_perturbations), text);
    return out;
  }
  const uint64_t text_seed = derive_seed(cfg.seed, text);

  if (cfg.perturber == Perturber::synonym_swap) {
    // word -> (group index, position inside group)
    static const auto& groups = toy_synonym_groups();
    static const std::unordered_map<std::string, std::pair<size_t, size_t>> index = [] {
      std::unordered_map<std::string, std::pair<size_t, size_t>> m;
      for (size_t g = 0; g < groups.size(); ++g)
        for (size_t j = 0; j < groups[g].size(); ++j) m[groups[g][j]] = {g, j};
      return m;
    }();
    const auto words = Tokenizer::split_words(text);
    for (int i = 0; i < cfg.n_perturbations; ++i) {
      Rng rng(derive_seed(text_seed, "synonym-swap", static_cast<uint64_t>(i)));
      std::vector<std::string> repl = words;
      for (auto& w : repl) {
        auto it = index.find(w);
        if (it == index.end() || rng.uniform() >= cfg.span_fraction) continue;
        const auto& group = groups[it->second.first];
        if (group.size() < 2) continue;
        size_t pick = rng.below(group.size() - 1);
        if (pick >= it->second.second) ++pick;  // never the word itself
        w = group[pick];
      }
      std::string joined;
      for (size_t j = 0; j < repl.size(); ++j) {
        if (j) joined += ' ';
        joined += repl[j];
      }
      out.push_back(std::move(joined));
    }
    return out;
  }

  // mask_fill: resample a fraction of positions from the proxy model itself,
  // left to right so later fills condition on earlier ones.
  const auto ids = proxy.tok->encode(text);
  GenerationConfig fill;
  fill.top_p = 0.95;
  fill.temperature = 1.0;
  for (int i = 0; i < cfg.n_perturbations; ++i) {
    Rng rng(derive_seed(text_seed, "mask-fill", static_cast<uint64_t>(i)));
    std::vector<TokenId> cur = ids;
    for (size_t j = 0; j < cur.size(); ++j) {
      if (rng.uniform() >= cfg.span_fraction) continue;
      TokenSequence prefix;
      if (proxy.specials.bos >= 0) prefix.tokens.push_back(proxy.specials.bos);
      prefix.tokens.insert(prefix.tokens.end(), cur.begin(),
                           cur.begin() + static_cast<ptrdiff_t>(j));
      if (static_cast<int>(prefix.tokens.size()) + 1 >= proxy.config().max_ctx) break;
      GenerationConfig one = fill;
      one.max_len = 1;
      one.seed = derive_seed(text_seed, "mask-fill-pos", (static_cast<uint64_t>(i) << 32) | j);
      const auto sampled = generate<float>(*proxy.lm, nullptr, prefix, one, {-1, -1});
      if (!sampled.tokens.empty()) cur[j] = sampled.tokens[0];
    }
    // drop specials the resampling may have produced
    std::vector<TokenId> kept;
    for (TokenId t : cur) {
      const auto& s = proxy.tok->token_of(t);
      if (s.size() >= 2 && s.front() == '<' && s.back() == '>') continue;
      kept.push_back(t);
    }
    out.push_back(proxy.tok->decode(kept));
  }
  return out;
}

double detectgpt_score_with_perturbations(const ModelHandle& proxy, const std::string& text,
                                          const std::vector<std::string>& perturbed) {
  const double base = mean_token_log_prob(proxy, text);
  // mean of per-perturbation discrepancies, so identity perturbations give
  // exactly zero instead of accumulating summation roundoff
  double sum = 0.0;
  int used = 0;
  for (const auto& p : perturbed) {
    if (proxy.tok->encode(p).empty()) continue;  // perturber degenerated to empty
    sum += base - mean_token_log_prob(proxy, p);
    ++used;
  }
  require(used > 0, "all perturbations were empty");
  return sum / static_cast<double>(used);
}

double detectgpt_score(const ModelHandle& proxy, const std::string& text,
                       const PerturbationConfig& cfg) {
  cfg.validate();
  require(proxy.tok->encode(text).size() >= 2, "detectgpt_score: text must have >= 2 tokens");
  return detectgpt_score_with_perturbations(proxy, text, make_perturbations(proxy, text, cfg));
}

FineTuneResult fine_tune_detector(const SupervisedParams& base, const DetectionDataset& data,
                                  const FineTuneHyper& hyper) {
  FineTuneResult res;
  res.detector.kind = DetectorKind::supervised;
  res.detector.params = base;
  res.detector.hyper = hyper;
  res.detector.seed = hyper.seed;
  if (hyper.epochs == 0) return res;
  require(data.n_human > 0 && data.n_ai > 0,
          "fine_tune_detector: dataset must contain both classes");

  const auto train = data.split_view(Split::train);
  const auto val = data.split_view(Split::val);
  require(!train.empty(), "fine_tune_detector: empty train split");

  std::vector<Vectorf> feats;
  std::vector<float> labels;
  feats.reserve(train.size());
  for (const auto* r : train) {
    feats.push_back(featurize(r->text));
    labels.push_back(r->label == Label::ai ? 1.0f : 0.0f);
  }
  std::vector<Vectorf> val_feats;
  std::vector<Label> val_truth;
  for (const auto* r : val) {
    val_feats.push_back(featurize(r->text));
    val_truth.push_back(r->label);
  }

  Vectorf w = base.w;
  Vectorf b = Vectorf::Constant(1, base.b);
  Adam<float> opt(hyper.lr, 0.9, 0.999, 1e-8, hyper.weight_decay);
  auto val_f1 = [&]() {
    std::vector<Label> preds;
    preds.reserve(val_feats.size());
    for (const auto& x : val_feats) {
      const double z = static_cast<double>(w.dot(x)) + b(0);
      preds.push_back(z > 0.0 ? Label::ai : Label::human);
    }
    return f1_ai(preds, val_truth);
  };

  Vectorf best_w = w, best_b = b;
  double best_f1 = -1.0;
  int best_epoch = hyper.epochs;
  std::vector<size_t> order(feats.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    Rng rng(derive_seed(hyper.seed, "detector-epoch", static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hyper.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(hyper.batch_size));
      Vectorf gw = Vectorf::Zero(kFeatureDim);
      Vectorf gb = Vectorf::Zero(1);
      for (size_t j = start; j < end; ++j) {
        const auto& x = feats[order[j]];
        const float y = labels[order[j]];
        const float p = static_cast<float>(sigmoid(static_cast<double>(w.dot(x)) + b(0)));
        gw += (p - y) * x;
        gb(0) += p - y;
      }
      const float inv = 1.0f / static_cast<float>(end - start);
      gw *= inv;
      gb *= inv;
      opt.step({{w.data(), w.size()}, {b.data(), b.size()}},
               {{gw.data(), gw.size()}, {gb.data(), gb.size()}});
    }
    if (!val_feats.empty()) {
      const double f1 = val_f1().f1;
      if (f1 > best_f1) {
        best_f1 = f1;
        best_w = w;
        best_b = b;
        best_epoch = epoch;
      }
    }
  }
  if (val_feats.empty()) {
    best_w = w;
    best_b = b;
  }
  res.detector.params.w = best_w;
  res.detector.params.b = best_b(0);
  res.best_epoch = best_epoch;

  if (!val_feats.empty()) {
    w = best_w;
    b = best_b;
    const F1Result ai = val_f1();
    res.val_f1_ai = ai.f1;
    std::vector<Label> preds_h, truth_h;
    for (size_t i = 0; i < val_feats.size(); ++i) {
      const double z = static_cast<double>(w.dot(val_feats[i])) + b(0);
      // human-class F1 = ai-class F1 with labels flipped
      preds_h.push_back(z > 0.0 ? Label::human : Label::ai);
      truth_h.push_back(val_truth[i] == Label::ai ? Label::human : Label::ai);
    }
    res.val_f1_human = f1_ai(preds_h, truth_h).f1;
  }
  return res;
}

DetectorHandle calibrate_zero_shot(const ModelHandle& proxy, const DetectionDataset& data,
                                   const PerturbationConfig& cfg) {
  cfg.validate();
  require(data.n_human > 0 && data.n_ai > 0,
          "calibrate_zero_shot: dataset must contain both classes");
  auto val = data.split_view(Split::val);
  if (val.empty()) val = data.split_view(Split::train);
  require(!val.empty(), "calibrate_zero_shot: no calibration samples");

  std::vector<double> scores;
  std::vector<Label> truth;
  for (const auto* r : val) {
    scores.push_back(detectgpt_score(proxy, r->text, cfg));
    truth.push_back(r->label);
  }

  // threshold sweep over midpoints between sorted scores, plus the extremes
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cuts{sorted.front() - 1.0, sorted.back() + 1.0};
  for (size_t i = 0; i + 1 < sorted.size(); ++i) cuts.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  double best_tau = cuts.front(), best_f1 = -1.0;
  for (double tau : cuts) {
    std::vector<Label> preds;
    preds.reserve(scores.size());
    for (double s : scores) preds.push_back(s > tau ? Label::ai : Label::human);
    const double f1 = f1_ai(preds, truth).f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_tau = tau;
    }
  }

  double mean = std::accumulate(scores.begin(), scores.end(), 0.0) /
                static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  const double sd = std::sqrt(var / static_cast<double>(scores.size()));

  DetectorHandle det;
  det.kind = DetectorKind::zero_shot;
  det.proxy_model_id = proxy.id;
  det.proxy = proxy;
  det.perturb = cfg;
  det.threshold = best_tau;
  det.calib_scale = sd > 1e-9 ? 2.0 / sd : 1.0;
  det.seed = cfg.seed;
  return det;
}

void save_detector(const DetectorHandle& det, const fs::path& dir) {
  fs::create_directories(dir);
  json m;
  m["kind"] = to_string(det.kind);
  m["seed"] = det.seed;
  if (det.kind == DetectorKind::supervised) {
    m["feature_dim"] = kFeatureDim;
    m["bias"] = det.params.b;
    m["hyper"] = {{"lr", det.hyper.lr},
                  {"weight_decay", det.hyper.weight_decay},
                  {"epochs", det.hyper.epochs},
                  {"batch_size", det.hyper.batch_size},
                  {"seed", det.hyper.seed}};
    auto out = open_binary_out(dir / "weights.bin");
    write_u32(out, static_cast<uint32_t>(det.params.w.size()));
    write_vector_f32(out, det.params.w);
  } else {
    m["proxy_model_id"] = det.proxy_model_id;
    m["threshold"] = det.threshold;
    m["calib_scale"] = det.calib_scale;
    m["perturb"] = {{"n_perturbations", det.perturb.n_perturbations},
                    {"span_fraction", det.perturb.span_fraction},
                    {"perturber", to_string(det.perturb.perturber)},
                    {"seed", det.perturb.seed}};
  }
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

DetectorHandle load_detector(const fs::path& dir, const fs::path& home) {
  const json m = json::parse(read_text_file(dir / "manifest.json"));
  DetectorHandle det;
  det.kind = detector_kind_from_string(m.at("kind").get<std::string>());
  det.seed = m.value("seed", uint64_t{0});
  if (det.kind == DetectorKind::supervised) {
    require(m.at("feature_dim").get<int>() == kFeatureDim,
            "detector checkpoint feature_dim mismatch: " + dir.string());
    det.params.b = m.at("bias").get<float>();
    const json& h = m.at("hyper");
    det.hyper.lr = h.at("lr").get<double>();
    det.hyper.weight_decay = h.at("weight_decay").get<double>();
    det.hyper.epochs = h.at("epochs").get<int>();
    det.hyper.batch_size = h.at("batch_size").get<int>();
    det.hyper.seed = h.at("seed").get<uint64_t>();
    auto in = open_binary_in(dir / "weights.bin");
    const uint32_t n = read_u32(in);
    require(n == kFeatureDim, "detector weights size mismatch: " + dir.string());
    det.params.w = read_vector_f32(in, n);
  } else {
    det.proxy_model_id = m.at("proxy_model_id").get<std::string>();
    det.threshold = m.at("threshold").get<double>();
    det.calib_scale = m.at("calib_scale").get<double>();
    const json& p = m.at("perturb");
    det.perturb.n_perturbations = p.at("n_perturbations").get<int>();
    det.perturb.span_fraction = p.at("span_fraction").get<double>();
    det.perturb.perturber = perturber_from_string(p.at("perturber").get<std::string>());
    det.perturb.seed = p.at("seed").get<uint64_t>();
    det.proxy = prepare_model(det.proxy_model_id, home);
  }
  return det;
}

}  // namespace escape
