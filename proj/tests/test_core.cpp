#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "escape/config.hpp"
#include "escape/corpus.hpp"
#include "escape/io.hpp"
#include "escape/rng.hpp"
#include "escape/tokenizer.hpp"
#include "escape/toy_corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>

using namespace escape;

TEST_CASE("derive_seed is deterministic and label-sensitive") {
  CHECK(derive_seed(7, "split") == derive_seed(7, "split"));
  CHECK(derive_seed(7, "split") != derive_seed(8, "split"));
  CHECK(derive_seed(7, "split") != derive_seed(7, "corpus"));
  CHECK(derive_seed(7, "gen", 0) != derive_seed(7, "gen", 1));
  CHECK(derive_seed(7, "gen", 3) == derive_seed(7, "gen", 3));
}

TEST_CASE("fnv1a64 matches the reference constants") {
  // Empty input returns the offset basis; one byte folds in the prime.
  CHECK(fnv1a64(nullptr, 0) == 0xcbf29ce484222325ull);
  const unsigned char a = 'a';
  CHECK(fnv1a64(&a, 1) == (0xcbf29ce484222325ull ^ 'a') * 0x100000001b3ull);
  CHECK(fnv1a64("abc") != fnv1a64("abd"));
}

TEST_CASE("binary io round trips exactly") {
  std::stringstream ss;
  write_u32(ss, 0xdeadbeefu);
  write_i64(ss, -42);
  write_f32(ss, 1.5f);
  write_string(ss, "hello world");
  Matrixf m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  write_matrix_f32(ss, m);
  Vectorf v(2);
  v << -1.25f, 8.0f;
  write_vector_f32(ss, v);

  CHECK(read_u32(ss) == 0xdeadbeefu);
  CHECK(read_i64(ss) == -42);
  CHECK(read_f32(ss) == 1.5f);
  CHECK(read_string(ss) == "hello world");
  CHECK(read_matrix_f32(ss, 2, 3) == m);
  CHECK(read_vector_f32(ss, 2) == v);
}

TEST_CASE("binary io is little-endian regardless of Eigen storage") {
  std::stringstream ss;
  write_u32(ss, 1);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4);
  CHECK(bytes[0] == 1);
  CHECK(bytes[1] == 0);

  // Row-major payload: the second value on disk is row 0, col 1.
  std::stringstream ms;
  Matrixf m(2, 2);
  m << 10, 20, 30, 40;
  write_matrix_f32(ms, m);
  ms.seekg(4);
  CHECK(read_f32(ms) == 20.0f);
}

TEST_CASE("tokenizer round trips in-vocabulary text") {
  const Tokenizer& tok = toy_tokenizer();
  REQUIRE(tok.vocab_size() > 0);
  CHECK(tok.bos_id() >= 0);
  CHECK(tok.eos_id() >= 0);
  CHECK(tok.unk_id() >= 0);

  const std::string text = "the mayor said that the plan was new .";
  auto ids = tok.encode(text);
  CHECK(tok.decode(ids) == text);
  CHECK(tok.encode(tok.decode(ids)) == ids);
}

TEST_CASE("tokenizer maps unknown words to unk and keeps markers atomic") {
  const Tokenizer& tok = toy_tokenizer();
  auto ids = tok.encode("zyzzyva");
  REQUIRE(ids.size() == 1);
  CHECK(ids[0] == tok.unk_id());

  auto marker = tok.encode(kStyleMarkerA);
  REQUIRE(marker.size() == 1);
  CHECK(marker[0] == tok.id_of(kStyleMarkerA));
  CHECK(marker[0] != tok.unk_id());
}

TEST_CASE("split_words separates punctuation and lowercases") {
  auto w = Tokenizer::split_words("The mayor said, \"go.\"");
  std::vector<std::string> expect = {"the", "mayor", "said", ",", "\"", "go", ".", "\""};
  CHECK(w == expect);
}

TEST_CASE("decode_plain drops markers and attaches closing punctuation") {
  const Tokenizer& tok = toy_tokenizer();
  std::vector<TokenId> ids = tok.encode("the mayor said , the plan was new .");
  CHECK(decode_plain(tok, ids) == "the mayor said, the plan was new.");

  std::vector<TokenId> with_marker;
  with_marker.push_back(tok.id_of(kStyleMarkerA));
  for (TokenId id : tok.encode("the plan was new .")) with_marker.push_back(id);
  CHECK(decode_plain(tok, with_marker) == "the plan was new.");
}

TEST_CASE("toy human docs are deterministic, in-vocabulary, register a") {
  auto docs = make_toy_human_docs(Task::news, 20, 99);
  auto again = make_toy_human_docs(Task::news, 20, 99);
  REQUIRE(docs.size() == 20);
  for (size_t i = 0; i < docs.size(); ++i) {
    CHECK(docs[i].id == again[i].id);
    CHECK(docs[i].text == again[i].text);
    CHECK_FALSE(docs[i].headline.empty());
  }
  CHECK(make_toy_human_docs(Task::news, 20, 100)[0].text != docs[0].text);

  const Tokenizer& tok = toy_tokenizer();
  const auto& b_words = style_b_marker_words();
  for (const auto& d : docs) {
    for (TokenId id : tok.encode(d.text)) CHECK(id != tok.unk_id());
    for (const auto& w : Tokenizer::split_words(d.text))
      CHECK(std::find(b_words.begin(), b_words.end(), w) == b_words.end());
  }
}

TEST_CASE("style_b_transform injects register-b vocabulary") {
  auto docs = make_toy_human_docs(Task::news, 5, 3);
  const auto& b_words = style_b_marker_words();
  for (const auto& d : docs) {
    std::string b = style_b_transform(d.text, 42);
    CHECK(b == style_b_transform(d.text, 42));
    int hits = 0;
    for (const auto& w : Tokenizer::split_words(b))
      if (std::find(b_words.begin(), b_words.end(), w) != b_words.end()) ++hits;
    CHECK(hits > 0);
  }
}

TEST_CASE("pretrain docs mix tasks and carry style markers") {
  auto docs = make_pretrain_docs(10, 5);
  REQUIRE(docs.size() == size_t(10 * 2 * 3));  // copies_per_doc x three tasks
  int marked = 0;
  for (const auto& d : docs)
    if (d.rfind(kStyleMarkerA, 0) == 0 || d.rfind(kStyleMarkerB, 0) == 0) ++marked;
  // p_marker = 0.75: most but not all docs start with a marker.
  CHECK(marked > int(docs.size()) / 2);
  CHECK(marked < int(docs.size()));
}

TEST_CASE("corpus record json round trips") {
  CorpusRecord rec;
  rec.id = "news-0007";
  rec.task = Task::news;
  rec.label = Label::ai;
  rec.generator = "tiny-a";
  rec.prompt = "council votes on \"new\" plan";
  rec.text = "the council\tvoted.\nline two";
  rec.split = Split::val;
  CHECK(record_from_json(record_to_json(rec)) == rec);
}

TEST_CASE("validate_record rejects inconsistent rows") {
  CorpusRecord rec;
  rec.id = "x";
  rec.prompt = "p";
  rec.text = "t";
  rec.label = Label::human;
  rec.generator = "tiny-a";  // human rows must say "human"
  CHECK_THROWS_AS(validate_record(rec), Error);
  rec.generator = "human";
  CHECK_NOTHROW(validate_record(rec));
  rec.label = Label::ai;  // ai rows must name a model
  CHECK_THROWS_AS(validate_record(rec), Error);
}

TEST_CASE("split_corpus counts are exact and seed-stable") {
  auto docs = make_toy_human_docs(Task::news, 50, 1);
  auto recs = make_human_records(docs, Task::news, toy_tokenizer());
  REQUIRE(recs.size() == 50);
  SplitSpec spec;
  spec.n_total = 50;
  spec.n_test = 10;
  spec.n_val = 7;
  spec.seed = 11;
  split_corpus(recs, spec);
  int n_test = 0, n_val = 0, n_train = 0;
  for (const auto& r : recs) {
    if (r.split == Split::test) ++n_test;
    else if (r.split == Split::val) ++n_val;
    else ++n_train;
  }
  CHECK(n_test == 10);
  CHECK(n_val == 7);
  CHECK(n_train == 33);

  auto recs2 = make_human_records(docs, Task::news, toy_tokenizer());
  split_corpus(recs2, spec);
  for (size_t i = 0; i < recs.size(); ++i) CHECK(recs[i].split == recs2[i].split);

  spec.seed = 12;
  auto recs3 = make_human_records(docs, Task::news, toy_tokenizer());
  split_corpus(recs3, spec);
  bool any_moved = false;
  for (size_t i = 0; i < recs.size(); ++i)
    if (recs[i].split != recs3[i].split) any_moved = true;
  CHECK(any_moved);
}

TEST_CASE("pair_detection_dataset merges and reports balance") {
  auto docs = make_toy_human_docs(Task::news, 6, 2);
  auto humans = make_human_records(docs, Task::news, toy_tokenizer());
  std::vector<CorpusRecord> ai;
  for (const auto& h : humans) {
    CorpusRecord r = h;
    r.id += "-ai";
    r.label = Label::ai;
    r.generator = "tiny-a";
    ai.push_back(r);
  }
  auto ds = pair_detection_dataset(humans, ai);
  CHECK(ds.n_human == 6);
  CHECK(ds.n_ai == 6);
  CHECK(ds.balanced);
  CHECK(ds.records.size() == 12);

  ai.resize(2);
  CHECK_FALSE(pair_detection_dataset(humans, ai).balanced);
}

TEST_CASE("filter_records selects by label and split") {
  auto docs = make_toy_human_docs(Task::news, 30, 4);
  auto recs = make_human_records(docs, Task::news, toy_tokenizer());
  SplitSpec spec;
  spec.n_total = 30;
  spec.n_test = 5;
  spec.n_val = 5;
  split_corpus(recs, spec);
  CHECK(filter_records(recs, Label::human, Split::test).size() == 5);
  CHECK(filter_records(recs, Label::ai, std::nullopt).empty());
  CHECK(filter_records(recs, std::nullopt, std::nullopt).size() == 30);
}

TEST_CASE("config defaults apply for an empty document") {
  RunConfig cfg;
  auto errs = try_validate_config("", &cfg);
  CHECK(errs.empty());
  CHECK(cfg.seed == 0);
  CHECK(cfg.models.source_id == "tiny-a");
  CHECK(cfg.prompt.k == 8);
  CHECK(cfg.ppo.batch_size == 16);
  CHECK(cfg.data.n_total == 2000);
  CHECK(cfg.reward_mode == "identity");
  CHECK(cfg.resolved_transfer_steps() == cfg.ppo.max_steps / 2);
}

TEST_CASE("config serialize round trips exactly") {
  RunConfig cfg = validate_config(
      "seed = 13\n"
      "prompt.k = 5\n"
      "prompt.init_text = write news article\n"
      "ppo.lr = 0.0213\n"
      "ppo.beta = 0.02\n"
      "gen.max_len = 96\n"
      "data.n_total = 600\n"
      "transfer.max_steps = 120\n");
  const std::string s1 = serialize_config(cfg);
  RunConfig cfg2 = validate_config(s1);
  CHECK(serialize_config(cfg2) == s1);
  CHECK(cfg2.ppo.lr == cfg.ppo.lr);
  CHECK(cfg2.prompt.init_text == "write news article");
  CHECK(config_hash(cfg) == config_hash(cfg2));
}

TEST_CASE("config errors list every problem with its field path") {
  RunConfig cfg;
  auto errs = try_validate_config(
      "gen.top_p = 1.5\n"
      "prompt.k = 0\n"
      "nonsense.key = 1\n"
      "seed = 3\n"
      "seed = 4\n",
      &cfg);
  REQUIRE(errs.size() == 4);
  auto has = [&errs](const std::string& field, const std::string& frag) {
    for (const auto& e : errs)
      if (e.field == field && e.message.find(frag) != std::string::npos) return true;
    return false;
  };
  CHECK(has("gen.top_p", "(0,1]"));
  CHECK(has("prompt.k", ">= 1"));
  CHECK(has("nonsense.key", "unknown"));
  CHECK(has("seed", "duplicate"));
  CHECK(cfg.prompt.k == 8);  // out is untouched on failure
}

TEST_CASE("validate_config throws with all problems in one message") {
  try {
    validate_config("prompt.k = 0\nppo.lr = -1\n");
    FAIL("expected an Error");
  } catch (const Error& e) {
    const std::string what = e.what();
    CHECK(what.find("prompt.k") != std::string::npos);
    CHECK(what.find("ppo.lr") != std::string::npos);
  }
}

TEST_CASE("config rejects split sizes that exhaust the corpus") {
  RunConfig cfg;
  auto errs = try_validate_config("data.n_total = 100\ndata.n_test = 60\ndata.n_val = 40\n", &cfg);
  REQUIRE(errs.size() == 1);
  CHECK(errs[0].field == "data.n_total");
}

TEST_CASE("stage hashes chain through the dependency graph") {
  RunConfig a = validate_config("seed = 1\n");
  RunConfig b = validate_config("seed = 1\ngen.max_len = 64\n");
  // A generation edit leaves corpus alone and invalidates everything after.
  CHECK(stage_config_hash(a, "corpus") == stage_config_hash(b, "corpus"));
  CHECK(stage_config_hash(a, "generate") != stage_config_hash(b, "generate"));
  CHECK(stage_config_hash(a, "detector") != stage_config_hash(b, "detector"));
  CHECK(stage_config_hash(a, "report") != stage_config_hash(b, "report"));

  // A detector edit leaves corpus and generate alone.
  RunConfig c = validate_config("seed = 1\ndetector.epochs = 3\n");
  CHECK(stage_config_hash(a, "generate") == stage_config_hash(c, "generate"));
  CHECK(stage_config_hash(a, "detector") != stage_config_hash(c, "detector"));

  // The output directory is bookkeeping, not an input.
  RunConfig d = validate_config("seed = 1\noutput_dir = elsewhere\n");
  CHECK(stage_config_hash(a, "report") == stage_config_hash(d, "report"));

  CHECK_THROWS_AS(stage_config_hash(a, "no-such-stage"), Error);
}

TEST_CASE("inline comments are stripped before parsing") {
  RunConfig cfg;
  auto errs = try_validate_config("seed = 9  # the run seed\nprompt.init_text = write news # note\n", &cfg);
  CHECK(errs.empty());
  CHECK(cfg.seed == 9);
  CHECK(cfg.prompt.init_text == "write news");
}
