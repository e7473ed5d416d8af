#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "escape/detector.hpp"
#include "escape/evalx.hpp"
#include "escape/rng.hpp"
#include "escape/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>

using namespace escape;

namespace {

ModelHandle unit_proxy(uint64_t seed, int max_ctx = 64) {
  TransformerConfig cfg;
  cfg.vocab_size = toy_tokenizer().vocab_size();
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  cfg.max_ctx = max_ctx;
  ModelHandle h;
  h.id = "unit-proxy";
  h.lm = std::make_shared<TransformerLM<float>>(TransformerLM<float>::random_init(cfg, seed));
  h.tok = std::make_shared<Tokenizer>(toy_tokenizer());
  h.specials = {h.tok->bos_id(), h.tok->eos_id()};
  return h;
}

// Independent recomputation of the proxy's mean token log-prob: raw forward
// passes and log-softmax, with the same bos convention and window chunking.
double oracle_mean_logp(const ModelHandle& m, const std::string& text) {
  const auto ids = m.tok->encode(text);
  const size_t window = size_t(m.config().max_ctx - 1);
  double total = 0.0;
  for (size_t start = 0; start < ids.size(); start += window) {
    std::vector<TokenId> chunk(ids.begin() + ptrdiff_t(start),
                               ids.begin() + ptrdiff_t(std::min(ids.size(), start + window)));
    std::vector<TokenId> ctx;
    ctx.push_back(m.specials.bos);
    ctx.insert(ctx.end(), chunk.begin(), chunk.end());
    auto tr = m.lm->forward(m.lm->embed_tokens(ctx));
    for (size_t i = 0; i < chunk.size(); ++i) {
      VectorX<float> row = tr.logits.row(Eigen::Index(i)).transpose();
      total += double(row(chunk[i]) - log_sum_exp(row));
    }
  }
  return total / double(ids.size());
}

double oracle_detectgpt(const ModelHandle& m, const std::string& text,
                        const std::vector<std::string>& perturbed) {
  double sum = 0.0;
  int used = 0;
  for (const auto& p : perturbed) {
    if (m.tok->encode(p).empty()) continue;
    sum += oracle_mean_logp(m, p);
    ++used;
  }
  return oracle_mean_logp(m, text) - sum / double(used);
}

F1Result oracle_f1(const std::vector<Label>& pred, const std::vector<Label>& truth) {
  int tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == Label::ai && truth[i] == Label::ai) ++tp;
    if (pred[i] == Label::ai && truth[i] == Label::human) ++fp;
    if (pred[i] == Label::human && truth[i] == Label::ai) ++fn;
  }
  F1Result r;
  if (tp + fp == 0 || tp + fn == 0) r.degenerate = true;
  r.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
  if (r.precision + r.recall > 0.0)
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  else
    r.degenerate = true;
  return r;
}

std::vector<std::string> sample_texts(int n) {
  std::vector<std::string> out;
  for (const auto& d : make_toy_human_docs(Task::news, (n + 1) / 2, 17)) out.push_back(d.text);
  for (int i = 0; int(out.size()) < n; ++i)
    out.push_back(style_b_transform(out[size_t(i)], uint64_t(100 + i)));
  out.resize(size_t(n));
  return out;
}

}  // namespace

TEST_CASE("featurize is deterministic with the documented dimension") {
  const std::string a = "the council voted on the plan.";
  const std::string b = "officials praised the new museum.";
  Vectorf fa = featurize(a);
  CHECK(fa.size() == kFeatureDim);
  CHECK(fa == featurize(a));
  CHECK(fa != featurize(b));
  CHECK(fa.allFinite());
}

TEST_CASE("f1_ai equals the brute-force confusion oracle") {
  Rng rng(123);
  for (int trial = 0; trial < 300; ++trial) {
    const size_t n = 1 + rng.below(40);
    std::vector<Label> pred(n), truth(n);
    for (size_t i = 0; i < n; ++i) {
      pred[i] = rng.below(2) ? Label::ai : Label::human;
      truth[i] = rng.below(2) ? Label::ai : Label::human;
    }
    F1Result got = f1_ai(pred, truth);
    F1Result want = oracle_f1(pred, truth);
    CHECK(got.f1 == want.f1);
    CHECK(got.precision == want.precision);
    CHECK(got.recall == want.recall);
    CHECK(got.degenerate == want.degenerate);
  }
}

TEST_CASE("f1_ai flags zero denominators instead of dividing") {
  std::vector<Label> all_human = {Label::human, Label::human};
  std::vector<Label> all_ai = {Label::ai, Label::ai};
  F1Result r = f1_ai(all_human, all_ai);  // no positive predictions
  CHECK(r.degenerate);
  CHECK(r.f1 == 0.0);
  F1Result s = f1_ai(all_ai, all_human);  // no positive truths
  CHECK(s.degenerate);
  CHECK(s.f1 == 0.0);
}

TEST_CASE("supervised classify matches the linear model by hand") {
  DetectorHandle det;
  det.kind = DetectorKind::supervised;
  Rng rng(5);
  det.params.w = Vectorf::Zero(kFeatureDim);
  for (Eigen::Index i = 0; i < det.params.w.size(); ++i)
    det.params.w(i) = float(rng.normal(0, 0.05));
  det.params.b = 0.3f;

  const std::string text = "the festival was cancelled on wednesday.";
  const Vectorf x = featurize(text);
  const double z = double(det.params.w.dot(x)) + det.params.b;
  const double p_ai = 1.0 / (1.0 + std::exp(-z));

  DetectorVerdict v = classify(det, text);
  CHECK(v.p_ai == doctest::Approx(p_ai).epsilon(1e-12));
  CHECK(v.p_human == doctest::Approx(1.0 - p_ai).epsilon(1e-12));
  CHECK(v.label == (p_ai > 0.5 ? Label::ai : Label::human));
  CHECK(reward(det, text) == v.p_human);
  CHECK_THROWS_AS(classify(det, ""), Error);
}

TEST_CASE("fine_tune_detector separates the two toy registers") {
  auto docs = make_toy_human_docs(Task::news, 60, 9);
  std::vector<CorpusRecord> humans, ais;
  for (size_t i = 0; i < docs.size(); ++i) {
    CorpusRecord h;
    h.id = "h" + std::to_string(i);
    h.task = Task::news;
    h.label = Label::human;
    h.generator = "human";
    h.prompt = docs[i].headline;
    h.text = docs[i].text;
    h.split = i < 45 ? Split::train : Split::val;
    humans.push_back(h);
    CorpusRecord a = h;
    a.id = "a" + std::to_string(i);
    a.label = Label::ai;
    a.generator = "unit";
    a.text = style_b_transform(docs[i].text, uint64_t(i));
    ais.push_back(a);
  }
  auto data = pair_detection_dataset(humans, ais);
  FineTuneHyper hyper;
  hyper.lr = 0.05;
  hyper.weight_decay = 0.001;
  hyper.epochs = 20;
  hyper.batch_size = 16;
  hyper.seed = 3;
  auto res = fine_tune_detector(SupervisedParams{}, data, hyper);
  CHECK(res.best_epoch >= 1);
  CHECK(res.val_f1_ai >= 0.9);
  CHECK(res.detector.kind == DetectorKind::supervised);

  // Training is deterministic in the seed.
  auto res2 = fine_tune_detector(SupervisedParams{}, data, hyper);
  CHECK(res.detector.params.w == res2.detector.params.w);
  CHECK(res.detector.params.b == res2.detector.params.b);
}

TEST_CASE("supervised detector checkpoints round trip") {
  auto docs = make_toy_human_docs(Task::news, 10, 2);
  DetectorHandle det;
  det.kind = DetectorKind::supervised;
  Rng rng(8);
  det.params.w = Vectorf::Zero(kFeatureDim);
  for (Eigen::Index i = 0; i < det.params.w.size(); ++i)
    det.params.w(i) = float(rng.normal(0, 0.1));
  det.params.b = -0.25f;
  det.seed = 77;

  const auto dir = std::filesystem::temp_directory_path() / "escape_test_detector";
  std::filesystem::remove_all(dir);
  save_detector(det, dir);
  DetectorHandle back = load_detector(dir, std::filesystem::temp_directory_path());
  CHECK(back.kind == DetectorKind::supervised);
  CHECK(back.params.w == det.params.w);
  CHECK(back.params.b == det.params.b);
  CHECK(classify(back, docs[0].text).p_ai == classify(det, docs[0].text).p_ai);
  std::filesystem::remove_all(dir);
}

TEST_CASE("make_perturbations is deterministic and respects the perturber") {
  ModelHandle proxy = unit_proxy(31);
  auto texts = sample_texts(3);
  PerturbationConfig cfg;
  cfg.n_perturbations = 5;
  cfg.span_fraction = 0.3;
  cfg.seed = 11;

  for (auto perturber : {Perturber::synonym_swap, Perturber::mask_fill}) {
    cfg.perturber = perturber;
    for (const auto& t : texts) {
      auto p1 = make_perturbations(proxy, t, cfg);
      auto p2 = make_perturbations(proxy, t, cfg);
      REQUIRE(p1.size() == 5);
      CHECK(p1 == p2);
      int changed = 0;
      for (const auto& p : p1) {
        if (p != t) ++changed;
        for (TokenId id : proxy.tok->encode(p)) CHECK(id != proxy.tok->unk_id());
      }
      CHECK(changed == 5);
    }
  }

  cfg.perturber = Perturber::identity;
  auto same = make_perturbations(proxy, texts[0], cfg);
  for (const auto& p : same) CHECK(p == texts[0]);
}

TEST_CASE("identity perturbations give a detectgpt score of exactly zero") {
  ModelHandle proxy = unit_proxy(41);
  PerturbationConfig cfg;
  cfg.perturber = Perturber::identity;
  cfg.seed = 1;
  // n = 6 would expose naive mean-of-sums roundoff; the score must still be
  // bitwise zero
  for (int n : {4, 6}) {
    cfg.n_perturbations = n;
    for (const auto& t : sample_texts(5)) CHECK(detectgpt_score(proxy, t, cfg) == 0.0);
  }
}

TEST_CASE("detectgpt_score matches an independent brute-force recompute") {
  ModelHandle proxy = unit_proxy(51);
  auto texts = sample_texts(10);
  for (auto perturber : {Perturber::synonym_swap, Perturber::mask_fill}) {
    PerturbationConfig cfg;
    cfg.perturber = perturber;
    cfg.n_perturbations = 6;
    cfg.span_fraction = 0.2;
    cfg.seed = 19;
    for (const auto& t : texts) {
      const double got = detectgpt_score(proxy, t, cfg);
      const double want = oracle_detectgpt(proxy, t, make_perturbations(proxy, t, cfg));
      CHECK(std::abs(got - want) < 1e-6);
    }
  }
}

TEST_CASE("long texts are scored in windows") {
  ModelHandle proxy = unit_proxy(61, 32);  // window of 31 tokens
  std::string long_text;
  for (int i = 0; i < 4; ++i) long_text += sample_texts(1)[0] + " ";
  REQUIRE(proxy.tok->encode(long_text).size() > 31);

  bool windowed = false;
  const double got = mean_token_log_prob(proxy, long_text, &windowed);
  CHECK(windowed);
  CHECK(std::abs(got - oracle_mean_logp(proxy, long_text)) < 1e-6);

  bool short_windowed = true;
  mean_token_log_prob(proxy, "the plan was new.", &short_windowed);
  CHECK_FALSE(short_windowed);
}

TEST_CASE("zero-shot calibration picks the f1-maximizing threshold") {
  ModelHandle proxy = unit_proxy(71);
  auto docs = make_toy_human_docs(Task::news, 12, 13);
  std::vector<CorpusRecord> humans, ais;
  for (size_t i = 0; i < docs.size(); ++i) {
    CorpusRecord h;
    h.id = "h" + std::to_string(i);
    h.task = Task::news;
    h.label = Label::human;
    h.generator = "human";
    h.prompt = docs[i].headline;
    h.text = docs[i].text;
    h.split = i < 6 ? Split::train : Split::val;
    humans.push_back(h);
    CorpusRecord a = h;
    a.id = "a" + std::to_string(i);
    a.label = Label::ai;
    a.generator = "unit";
    a.text = style_b_transform(docs[i].text, uint64_t(i));
    ais.push_back(a);
  }
  PerturbationConfig pcfg;
  pcfg.n_perturbations = 3;
  pcfg.span_fraction = 0.25;
  pcfg.seed = 23;
  const DetectionDataset data = pair_detection_dataset(humans, ais);
  DetectorHandle det = calibrate_zero_shot(proxy, data, pcfg);
  CHECK(det.kind == DetectorKind::zero_shot);
  CHECK(det.proxy.has_value());
  CHECK(std::isfinite(det.threshold));

  // Brute force: F1 at the returned threshold must match the best F1 over
  // all cut points of the val-split scores.
  std::vector<std::pair<double, Label>> scored;
  for (const auto* r : data.split_view(Split::val))
    scored.push_back({detectgpt_score(proxy, r->text, pcfg), r->label});
  auto f1_at = [&scored](double thr) {
    std::vector<Label> pred, truth;
    for (const auto& [s, l] : scored) {
      pred.push_back(s > thr ? Label::ai : Label::human);
      truth.push_back(l);
    }
    return f1_ai(pred, truth).f1;
  };
  double best = 0.0;
  std::vector<double> xs;
  for (const auto& [s, l] : scored) xs.push_back(s);
  std::sort(xs.begin(), xs.end());
  for (size_t i = 0; i + 1 < xs.size(); ++i) best = std::max(best, f1_at((xs[i] + xs[i + 1]) / 2));
  best = std::max({best, f1_at(xs.front() - 1.0), f1_at(xs.back() + 1.0)});
  CHECK(f1_at(det.threshold) == doctest::Approx(best).epsilon(1e-12));

  // classify applies the calibrated logistic link to the same score.
  const std::string t = humans.back().text;
  const double s = detectgpt_score(proxy, t, det.perturb);
  const double p_ai = 1.0 / (1.0 + std::exp(-det.calib_scale * (s - det.threshold)));
  CHECK(classify(det, t).p_ai == doctest::Approx(p_ai).epsilon(1e-9));
}
