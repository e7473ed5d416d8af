#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "escape/projector.hpp"
#include "escape/rng.hpp"
#include "escape/soft_prompt.hpp"
#include "escape/toy_corpus.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace escape;

namespace {

double act_of(double x, ProjectorAct a) {
  switch (a) {
    case ProjectorAct::leaky_relu: return x > 0 ? x : kLeakySlope * x;
    case ProjectorAct::relu: return x > 0 ? x : 0.0;
    case ProjectorAct::tanh: return std::tanh(x);
  }
  return 0.0;
}

double act_grad_of(double x, ProjectorAct a) {
  switch (a) {
    case ProjectorAct::leaky_relu: return x > 0 ? 1.0 : kLeakySlope;
    case ProjectorAct::relu: return x > 0 ? 1.0 : 0.0;
    case ProjectorAct::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 0.0;
}

// Double-precision per-row recompute of the two-layer map.
MatrixX<double> oracle_project(const Matrixf& src, const Projector& p) {
  MatrixX<double> W1 = p.W1.cast<double>(), W2 = p.W2.cast<double>();
  VectorX<double> b1 = p.b1.cast<double>(), b2 = p.b2.cast<double>();
  MatrixX<double> out(src.rows(), p.e_t());
  for (Eigen::Index r = 0; r < src.rows(); ++r) {
    VectorX<double> h = W1 * src.row(r).transpose().cast<double>() + b1;
    for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = act_of(h(i), p.act);
    out.row(r) = (W2 * h + b2).transpose();
  }
  return out;
}

Projector random_projector(int e_s, int e_h, int e_t, uint64_t seed, ProjectorAct act) {
  Projector p = init_projector(e_s, e_h, e_t, seed, act);
  // widen past the init scale so both activation regions are exercised
  Rng rng(seed + 99);
  for (Eigen::Index i = 0; i < p.W1.size(); ++i) p.W1.data()[i] = float(rng.normal(0, 0.6));
  for (Eigen::Index i = 0; i < p.W2.size(); ++i) p.W2.data()[i] = float(rng.normal(0, 0.6));
  for (Eigen::Index i = 0; i < p.b1.size(); ++i) p.b1(i) = float(rng.normal(0, 0.3));
  for (Eigen::Index i = 0; i < p.b2.size(); ++i) p.b2(i) = float(rng.normal(0, 0.3));
  return p;
}

Matrixf random_rows(int k, int e, uint64_t seed) {
  Rng rng(seed);
  Matrixf m(k, e);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = float(rng.normal(0, 1.0));
  return m;
}

}  // namespace

TEST_CASE("init_projector shapes and determinism") {
  Projector p = init_projector(6, 9, 4, 42);
  CHECK(p.W1.rows() == 9);
  CHECK(p.W1.cols() == 6);
  CHECK(p.b1.size() == 9);
  CHECK(p.W2.rows() == 4);
  CHECK(p.W2.cols() == 9);
  CHECK(p.b2.size() == 4);
  CHECK(p.e_s() == 6);
  CHECK(p.e_h() == 9);
  CHECK(p.e_t() == 4);
  CHECK(p.act == ProjectorAct::leaky_relu);
  CHECK_NOTHROW(p.validate());

  Projector q = init_projector(6, 9, 4, 42);
  CHECK(p.W1 == q.W1);
  CHECK(p.W2 == q.W2);
  Projector r = init_projector(6, 9, 4, 43);
  CHECK(p.W1 != r.W1);
}

TEST_CASE("identity init reproduces inputs inside the linear range") {
  Projector p = init_projector_identity(8, 12, 5.0);
  Matrixf rows = random_rows(4, 8, 7);
  rows = rows.cwiseMin(4.5f).cwiseMax(-4.5f);
  Matrixf out = project_rows(rows, p);
  REQUIRE(out.rows() == rows.rows());
  REQUIRE(out.cols() == rows.cols());
  CHECK((out - rows).cwiseAbs().maxCoeff() < 1e-4f);
}

TEST_CASE("project_rows matches a double-precision oracle") {
  for (auto act : {ProjectorAct::leaky_relu, ProjectorAct::relu, ProjectorAct::tanh}) {
    Projector p = random_projector(6, 9, 4, 11, act);
    Matrixf rows = random_rows(5, 6, 13);
    Matrixf got = project_rows(rows, p);
    MatrixX<double> want = oracle_project(rows, p);
    REQUIRE(got.rows() == 5);
    REQUIRE(got.cols() == 4);
    CHECK((got.cast<double>() - want).cwiseAbs().maxCoeff() < 1e-4);
  }
  Projector p = random_projector(6, 9, 4, 11, ProjectorAct::leaky_relu);
  CHECK_THROWS_AS(project_rows(random_rows(2, 5, 1), p), Error);
}

TEST_CASE("project carries prompt metadata to the target model") {
  SoftPrompt src;
  src.rows = random_rows(3, 6, 21);
  src.source_model_id = "tiny-a";
  src.task = "news";
  src.init_text = "write news";
  src.seed = 9;

  Projector p = random_projector(6, 9, 4, 31, ProjectorAct::leaky_relu);
  p.source_model_id = "tiny-a";
  p.target_model_id = "tiny-b";
  SoftPrompt out = project(src, p);
  CHECK(out.k() == 3);
  CHECK(out.embed_dim() == 4);
  CHECK(out.source_model_id == "tiny-b");
  CHECK(out.task == "news");
  CHECK(out.rows == project_rows(src.rows, p));
}

TEST_CASE("project_rows_backward matches an independent backward pass") {
  for (auto act : {ProjectorAct::leaky_relu, ProjectorAct::relu, ProjectorAct::tanh}) {
    Projector p = random_projector(5, 7, 4, 17, act);
    Matrixf src = random_rows(3, 5, 19);
    Matrixf d_out = random_rows(3, 4, 23);

    ProjectorGrads g = make_zero_projector_grads(p);
    Matrixf d_src = Matrixf::Zero(3, 5);
    project_rows_backward(src, p, d_out, g, &d_src);

    MatrixX<double> W1 = p.W1.cast<double>(), W2 = p.W2.cast<double>();
    VectorX<double> b1 = p.b1.cast<double>();
    MatrixX<double> gW1 = MatrixX<double>::Zero(7, 5), gW2 = MatrixX<double>::Zero(4, 7);
    VectorX<double> gb1 = VectorX<double>::Zero(7), gb2 = VectorX<double>::Zero(4);
    MatrixX<double> gsrc = MatrixX<double>::Zero(3, 5);
    for (Eigen::Index r = 0; r < 3; ++r) {
      VectorX<double> x = src.row(r).transpose().cast<double>();
      VectorX<double> pre = W1 * x + b1;
      VectorX<double> h = pre;
      for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = act_of(pre(i), act);
      VectorX<double> dy = d_out.row(r).transpose().cast<double>();
      gW2 += dy * h.transpose();
      gb2 += dy;
      VectorX<double> dh = W2.transpose() * dy;
      for (Eigen::Index i = 0; i < dh.size(); ++i) dh(i) *= act_grad_of(pre(i), act);
      gW1 += dh * x.transpose();
      gb1 += dh;
      gsrc.row(r) = (W1.transpose() * dh).transpose();
    }
    CHECK((g.W1.cast<double>() - gW1).cwiseAbs().maxCoeff() < 1e-4);
    CHECK((g.W2.cast<double>() - gW2).cwiseAbs().maxCoeff() < 1e-4);
    CHECK((g.b1.cast<double>() - gb1).cwiseAbs().maxCoeff() < 1e-4);
    CHECK((g.b2.cast<double>() - gb2).cwiseAbs().maxCoeff() < 1e-4);
    CHECK((d_src.cast<double>() - gsrc).cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("backward gradients agree with finite differences") {
  Projector p = random_projector(4, 6, 3, 29, ProjectorAct::tanh);
  Matrixf src = random_rows(2, 4, 37);
  Matrixf d_out = random_rows(2, 3, 41);
  auto loss = [&](const Projector& q) {
    return double((project_rows(src, q).cwiseProduct(d_out)).sum());
  };
  ProjectorGrads g = make_zero_projector_grads(p);
  project_rows_backward(src, p, d_out, g);
  const float h = 1e-2f;
  for (auto [coord_r, coord_c] : {std::pair{0, 0}, std::pair{3, 2}, std::pair{5, 1}}) {
    Projector lo = p, hi = p;
    lo.W1(coord_r, coord_c) -= h;
    hi.W1(coord_r, coord_c) += h;
    const double fd = (loss(hi) - loss(lo)) / (2.0 * h);
    CHECK(std::abs(double(g.W1(coord_r, coord_c)) - fd) <
          1e-2 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("projector checkpoints round trip") {
  const auto path = std::filesystem::temp_directory_path() / "escape_test_proj.espj";
  Projector p = random_projector(5, 8, 6, 43, ProjectorAct::tanh);
  p.source_model_id = "tiny-a";
  p.target_model_id = "tiny-c";
  save_projector(p, path);
  Projector q = load_projector(path);
  CHECK(q.W1 == p.W1);
  CHECK(q.b1 == p.b1);
  CHECK(q.W2 == p.W2);
  CHECK(q.b2 == p.b2);
  CHECK(q.act == p.act);
  CHECK(q.source_model_id == "tiny-a");
  CHECK(q.target_model_id == "tiny-c");

  std::ofstream bad(path, std::ios::binary);
  bad << "NOPE1garbage";
  bad.close();
  CHECK_THROWS_AS(load_projector(path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("soft prompt checkpoints round trip") {
  TransformerConfig cfg;
  cfg.vocab_size = toy_tokenizer().vocab_size();
  cfg.d_model = 12;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.max_ctx = 32;
  auto lm = TransformerLM<float>::random_init(cfg, 3);
  Tokenizer tok = toy_tokenizer();

  SoftPrompt p = init_soft_prompt(lm, tok, 5, "the mayor said", 77);
  CHECK(p.k() == 5);
  CHECK(p.embed_dim() == 12);
  // rows initialized from the init text take the token embeddings verbatim
  const auto ids = tok.encode("the mayor said");
  REQUIRE(ids.size() == 3);
  for (size_t i = 0; i < ids.size(); ++i)
    CHECK(p.rows.row(Eigen::Index(i)) == lm.weights().embed.row(ids[i]));
  // padded rows are random, not zero, and deterministic in the seed
  CHECK(p.rows.row(4).cwiseAbs().maxCoeff() > 0.0f);
  SoftPrompt p2 = init_soft_prompt(lm, tok, 5, "the mayor said", 77);
  CHECK(p.rows == p2.rows);

  const auto path = std::filesystem::temp_directory_path() / "escape_test_prompt.escp";
  p.source_model_id = "tiny-a";
  p.task = "news";
  save_soft_prompt(p, path);
  SoftPrompt back = load_soft_prompt(path);
  CHECK(back.rows == p.rows);
  CHECK(back.source_model_id == "tiny-a");
  CHECK(back.task == "news");
  CHECK(back.init_text == "the mayor said");
  CHECK(back.seed == 77);
  CHECK_NOTHROW(load_soft_prompt(path, 12));
  CHECK_THROWS_AS(load_soft_prompt(path, 16), Error);

  std::ofstream bad(path, std::ios::binary);
  bad << "XXXX1";
  bad.close();
  CHECK_THROWS_AS(load_soft_prompt(path), Error);
  std::filesystem::remove(path);
}
