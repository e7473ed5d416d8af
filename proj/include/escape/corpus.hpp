#pragma once

#include "escape/common.hpp"
#include "escape/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace escape {

enum class Task { news, essay, creative };
enum class Label { human = 0, ai = 1 };
enum class Split { train, val, test };

std::string to_string(Task t);
std::string to_string(Label l);
std::string to_string(Split s);
Task task_from_string(const std::string& s);
Label label_from_string(const std::string& s);
Split split_from_string(const std::string& s);

/// One labeled text sample of a writing-task corpus.
struct CorpusRecord {
  std::string id;
  Task task = Task::news;
  Label label = Label::human;
  std::string generator;  // "human" or a model id
  std::string prompt;
  std::string text;
  Split split = Split::train;

  bool operator==(const CorpusRecord&) const = default;
};

/// Raw ingested human sample before prompts and splits are assigned.
struct RawHumanDoc {
  std::string id;
  std::string headline;  // required for news
  std::string text;
};

struct SplitSpec {
  int n_total = 2000;
  int n_test = 100;
  int n_val = 100;
  uint64_t seed = 0;

  int n_train() const { return n_total - n_test - n_val; }
  void validate() const;
};

void validate_record(const CorpusRecord& rec);

// Line-delimited record IO; one JSON object per line, UTF-8.
std::string record_to_json(const CorpusRecord& rec);
CorpusRecord record_from_json(const std::string& line);
void write_corpus(const std::filesystem::path& path, const std::vector<CorpusRecord>& recs);
std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path);

std::vector<RawHumanDoc> read_raw_docs(const std::filesystem::path& path);
void write_raw_docs(const std::filesystem::path& path, const std::vector<RawHumanDoc>& docs);

/// Builds prompt texts for human records: the headline for news, the first
/// `prompt_tokens` tokens of the body (under `tok`) otherwise.
std::vector<std::string> build_prompts(const std::vector<RawHumanDoc>& docs, Task task,
                                       const Tokenizer& tok, int prompt_tokens = 25);

/// Turns raw human docs into labeled human CorpusRecords with prompts.
std::vector<CorpusRecord> make_human_records(const std::vector<RawHumanDoc>& docs, Task task,
                                             const Tokenizer& tok, int prompt_tokens = 25);

/// Assigns splits in place. |records| must equal spec.n_total; counts are
/// exact and the assignment is a deterministic function of spec.seed.
void split_corpus(std::vector<CorpusRecord>& records, const SplitSpec& spec);

struct DetectionDataset {
  std::vector<CorpusRecord> records;
  int n_human = 0;
  int n_ai = 0;
  bool balanced = false;  // both classes present and within 10% of each other

  std::vector<const CorpusRecord*> split_view(Split s) const;
};

/// Merges human and AI record lists into one detection dataset.
/// Both lists must carry the same task.
DetectionDataset pair_detection_dataset(const std::vector<CorpusRecord>& human,
                                        const std::vector<CorpusRecord>& ai);

std::vector<CorpusRecord> filter_records(const std::vector<CorpusRecord>& recs,
                                         std::optional<Label> label,
                                         std::optional<Split> split);

}  // namespace escape
