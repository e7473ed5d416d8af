#include "escape/corpus.hpp"

#include "escape/io.hpp"
#include "escape/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>

namespace escape {

using nlohmann::json;

std::string to_string(Task t) {
  switch (t) {
    case Task::news: return "news";
    case Task::essay: return "essay";
    case Task::creative: return "creative";
  }
  throw Error("bad task");
}

std::string to_string(Label l) { return l == Label::human ? "human" : "ai"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw Error("bad split");
}

Task task_from_string(const std::string& s) {
  if (s == "news") return Task::news;
  if (s == "essay") return Task::essay;
  if (s == "creative") return Task::creative;
  throw Error("unknown task: " + s);
}

Label label_from_string(const std::string& s) {
  if (s == "human") return Label::human;
  if (s == "ai") return Label::ai;
  throw Error("unknown label: " + s);
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error("unknown split: " + s);
}

void SplitSpec::validate() const {
  require(n_total > 0 && n_test >= 0 && n_val >= 0, "split counts must be non-negative");
  require(n_test + n_val < n_total, "n_test + n_val must be < n_total");
}

void validate_record(const CorpusRecord& rec) {
  require(!rec.id.empty(), "record id is empty");
  require(!rec.text.empty(), "record " + rec.id + ": text is empty");
  require(!rec.prompt.empty(), "record " + rec.id + ": prompt is empty");
  if (rec.label == Label::human) {
    require(rec.generator == "human",
            "record " + rec.id + ": human label requires generator=\"human\"");
  } else {
    require(!rec.generator.empty() && rec.generator != "human",
            "record " + rec.id + ": ai label requires a model generator");
  }
}

std::string record_to_json(const CorpusRecord& rec) {
  json j;
  j["id"] = rec.id;
  j["task"] = to_string(rec.task);
  j["label"] = to_string(rec.label);
  j["generator"] = rec.generator;
  j["prompt"] = rec.prompt;
  j["text"] = rec.text;
  j["split"] = to_string(rec.split);
  return j.dump();
}

CorpusRecord record_from_json(const std::string& line) {
  json j = json::parse(line);
  CorpusRecord rec;
  rec.id = j.at("id").get<std::string>();
  rec.task = task_from_string(j.at("task").get<std::string>());
  rec.label = label_from_string(j.at("label").get<std::string>());
  rec.generator = j.at("generator").get<std::string>();
  rec.prompt = j.at("prompt").get<std::string>();
  rec.text = j.at("text").get<std::string>();
  rec.split = split_from_string(j.at("split").get<std::string>());
  return rec;
}

void write_corpus(const std::filesystem::path& path, const std::vector<CorpusRecord>& recs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write corpus file: " + path.string());
  for (const auto& r : recs) out << record_to_json(r) << '\n';
}

std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path) {
  std::vector<CorpusRecord> recs;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    recs.push_back(record_from_json(line));
  }
  return recs;
}

std::vector<RawHumanDoc> read_raw_docs(const std::filesystem::path& path) {
  std::vector<RawHumanDoc> docs;
  size_t n = 0;
  for (const auto& line : read_lines(path)) {
    ++n;
    if (line.empty()) continue;
    json j = json::parse(line);
    RawHumanDoc d;
    d.id = j.value("id", "doc-" + std::to_string(n));
    d.headline = j.value("headline", "");
    d.text = j.at("text").get<std::string>();
    docs.push_back(std::move(d));
  }
  return docs;
}

void write_raw_docs(const std::filesystem::path& path, const std::vector<RawHumanDoc>& docs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path.string());
  for (const auto& d : docs) {
    json j;
    j["id"] = d.id;
    if (!d.headline.empty()) j["headline"] = d.headline;
    j["text"] = d.text;
    out << j.dump() << '\n';
  }
}

std::vector<std::string> build_prompts(const std::vector<RawHumanDoc>& docs, Task task,
                                       const Tokenizer& tok, int prompt_tokens) {
  std::vector<std::string> prompts;
  prompts.reserve(docs.size());
  for (const auto& d : docs) {
    if (task == Task::news) {
      require(!d.headline.empty(), "news doc " + d.id + " lacks a headline");
      prompts.push_back(d.headline);
    } else {
      auto ids = tok.encode(d.text);
      if (static_cast<int>(ids.size()) > prompt_tokens)
        ids.resize(static_cast<size_t>(prompt_tokens));
      prompts.push_back(tok.decode(ids));
    }
  }
  return prompts;
}

std::vector<CorpusRecord> make_human_records(const std::vector<RawHumanDoc>& docs, Task task,
                                             const Tokenizer& tok, int prompt_tokens) {
  auto prompts = build_prompts(docs, task, tok, prompt_tokens);
  std::vector<CorpusRecord> recs;
  recs.reserve(docs.size());
  for (size_t i = 0; i < docs.size(); ++i) {
    CorpusRecord rec;
    rec.id = docs[i].id;
    rec.task = task;
    rec.label = Label::human;
    rec.generator = "human";
    rec.prompt = prompts[i];
    rec.text = docs[i].text;
    rec.split = Split::train;
    validate_record(rec);
    recs.push_back(std::move(rec));
  }
  return recs;
}

void split_corpus(std::vector<CorpusRecord>& records, const SplitSpec& spec) {
  spec.validate();
  require(static_cast<int>(records.size()) == spec.n_total,
          "corpus has " + std::to_string(records.size()) + " records, split spec expects " +
              std::to_string(spec.n_total));
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(spec.seed, "corpus-split"));
  std::shuffle(order.begin(), order.end(), rng.gen());
  for (int i = 0; i < spec.n_total; ++i) {
    Split s = Split::train;
    if (i < spec.n_test)
      s = Split::test;
    else if (i < spec.n_test + spec.n_val)
      s = Split::val;
    records[order[static_cast<size_t>(i)]].split = s;
  }
}

std::vector<const CorpusRecord*> DetectionDataset::split_view(Split s) const {
  std::vector<const CorpusRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

DetectionDataset pair_detection_dataset(const std::vector<CorpusRecord>& human,
                                        const std::vector<CorpusRecord>& ai) {
  DetectionDataset ds;
  for (const auto& r : human) {
    require(r.label == Label::human, "record " + r.id + " in human list is not human");
    if (!ds.records.empty())
      require(r.task == ds.records.front().task, "task mismatch in human list at " + r.id);
    ds.records.push_back(r);
  }
  for (const auto& r : ai) {
    require(r.label == Label::ai, "record " + r.id + " in ai list is not ai");
    if (!ds.records.empty())
      require(r.task == ds.records.front().task, "task mismatch between lists at " + r.id);
    ds.records.push_back(r);
  }
  ds.n_human = static_cast<int>(human.size());
  ds.n_ai = static_cast<int>(ai.size());
  const int lo = std::min(ds.n_human, ds.n_ai);
  const int hi = std::max(ds.n_human, ds.n_ai);
  ds.balanced = lo > 0 && (hi - lo) * 10 <= hi;
  return ds;
}

std::vector<CorpusRecord> filter_records(const std::vector<CorpusRecord>& recs,
                                         std::optional<Label> label,
                                         std::optional<Split> split) {
  std::vector<CorpusRecord> out;
  for (const auto& r : recs) {
    if (label && r.label != *label) continue;
    if (split && r.split != *split) continue;
    out.push_back(r);
  }
  return out;
}

}  // namespace escape
