#include "escape/toy_corpus.hpp"

#include "escape/rng.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_map>

namespace escape {

namespace {

struct SlotClass {
  std::vector<std::string> a;  // register "a" (also the neutral list)
  std::vector<std::string> b;  // aligned register "b"; empty for neutral slots
};

using ClassMap = std::map<std::string, SlotClass>;

const ClassMap& slot_classes() {
  static const ClassMap classes = {
      {"SAY",
       {{"said", "noted", "added", "explained"},
        {"stated", "remarked", "proclaimed", "asserted"}}},
      {"SHOW",
       {{"showed", "found", "suggested"}, {"demonstrated", "revealed", "indicated"}}},
      {"ADJ",
       {{"big", "small", "steady", "clear", "strong", "quiet"},
        {"substantial", "modest", "consistent", "evident", "considerable", "subdued"}}},
      {"ADV",
       {{"quickly", "slowly", "carefully", "soon", "early"},
        {"rapidly", "gradually", "meticulously", "promptly", "previously"}}},
      {"CONN",
       {{"however", "meanwhile", "later", "still", "then"},
        {"nevertheless", "subsequently", "furthermore", "consequently", "moreover"}}},
      // Neutral task lexicons.
      {"NNEWS",
       {{"government", "council", "committee", "mayor", "city", "region", "railway",
         "station", "airport", "hospital", "school", "factory", "port", "market",
         "company", "bank", "union", "storm", "flood", "election", "budget", "report",
         "project", "bridge", "road", "tunnel", "festival", "museum", "library", "team",
         "season", "crowd", "police", "court", "inquiry", "strike", "protest", "plan",
         "deal", "summit", "border", "village", "farm", "harvest", "network", "survey"},
        {}}},
      {"PLACE",
       {{"riverton", "hillcrest", "eastport", "westfield", "northgate", "southvale",
         "maplewood", "stonebridge", "clearwater", "ashford", "greenfield", "oakham"},
        {}}},
      {"DAY",
       {{"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"},
        {}}},
      {"ACT",
       {{"approved", "rejected", "opened", "closed", "launched", "delayed", "expanded",
         "reduced", "reviewed", "repaired", "funded", "cancelled", "inspected"},
        {}}},
      {"NESSAY",
       {{"theory", "evidence", "argument", "method", "result", "analysis", "concept",
         "principle", "system", "process", "structure", "function", "model", "pattern",
         "factor", "effect", "cause", "change", "growth", "development", "history",
         "culture", "society", "economy", "science", "language", "knowledge",
         "education", "research", "experiment", "observation", "measurement", "energy",
         "climate", "environment", "population", "resource", "technology", "industry",
         "philosophy", "debate", "question", "chapter", "section"},
        {}}},
      {"PASS",
       {{"shaped", "defined", "influenced", "supported", "limited", "governed"}, {}}},
      {"NCRE",
       {{"forest", "river", "mountain", "valley", "village", "lantern", "candle",
         "garden", "harbor", "island", "tower", "castle", "bridge", "meadow", "moon",
         "star", "wind", "rain", "snow", "fog", "door", "window", "path", "road",
         "boat", "bell", "field", "orchard", "mill", "shore", "cliff", "cave"},
        {}}},
      {"WHO",
       {{"traveler", "stranger", "child", "keeper", "sailor", "painter", "shepherd",
         "fisherman"},
        {}}},
      {"TIME",
       {{"morning", "evening", "night", "winter", "summer", "autumn", "spring",
         "twilight", "dawn", "dusk"},
        {}}},
      {"MOVE",
       {{"walked", "wandered", "drifted", "climbed", "sailed", "returned", "waited",
         "watched", "turned", "paused"},
        {}}},
  };
  return classes;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> fillers = {"indeed",      "notably", "overall",
                                                   "essentially", "ultimately",
                                                   "importantly"};
  return fillers;
}

// Sentence templates: "$CLASS" draws from a slot class, anything else is a
// literal token. Neutral templates avoid every register-bearing class so
// prompts built from document openings carry no register signal.
struct Templates {
  std::vector<std::vector<std::string>> headline;
  std::vector<std::vector<std::string>> neutral;  // first two sentences
  std::vector<std::vector<std::string>> styled;   // remaining sentences
};

const Templates& templates_for(Task task) {
  static const Templates news = {
      // headlines
      {{"$NNEWS", "$ACT", "in", "$PLACE"},
       {"$PLACE", "$NNEWS", "$ACT", "after", "$NNEWS"},
       {"new", "$NNEWS", "for", "$PLACE", "$NNEWS"}},
      // neutral body openers
      {{"the", "$NNEWS", "in", "$PLACE", "$ACT", "the", "$NNEWS", "on", "$DAY", "."},
       {"officials", "in", "$PLACE", "$ACT", "the", "$NNEWS", "this", "$DAY", "."},
       {"the", "$NNEWS", "and", "the", "$NNEWS", "were", "$ACT", "on", "$DAY", "."}},
      // styled sentences
      {{"the", "$NNEWS", "$SAY", "that", "the", "$NNEWS", "was", "$ADJ", "."},
       {"$CONN", ",", "the", "$NNEWS", "$SAY", "the", "$NNEWS", "had", "been", "$ACT",
        "$ADV", "."},
       {"residents", "of", "$PLACE", "$SAY", "the", "$ADJ", "$NNEWS", "would", "be",
        "$ACT", "."},
       {"a", "$NNEWS", "for", "the", "$NNEWS", "was", "$ACT", "$ADV", ",", "the",
        "$NNEWS", "$SAY", "."},
       {"$CONN", ",", "the", "$ADJ", "$NNEWS", "near", "$PLACE", "was", "$ACT", "."}}};
  static const Templates essay = {
      {},
      {{"the", "$NESSAY", "of", "$NESSAY", "is", "a", "$NESSAY", "in", "modern",
        "$NESSAY", "."},
       {"this", "$NESSAY", "concerns", "the", "$NESSAY", "between", "$NESSAY", "and",
        "$NESSAY", "."},
       {"the", "$NESSAY", "in", "this", "$NESSAY", "rests", "on", "$NESSAY", "."}},
      {{"the", "$NESSAY", "$SHOW", "that", "the", "$NESSAY", "is", "$ADJ", "."},
       {"$CONN", ",", "scholars", "$SAY", "that", "the", "$NESSAY", "was", "$PASS",
        "by", "the", "$NESSAY", "."},
       {"the", "$ADJ", "$NESSAY", "$SHOW", "a", "$ADJ", "link", "with", "$NESSAY", "."},
       {"$CONN", ",", "the", "$NESSAY", "changed", "$ADV", "as", "the", "$NESSAY",
        "grew", "."},
       {"early", "$NESSAY", "$SHOW", "that", "$NESSAY", "is", "$PASS", "by", "$NESSAY",
        "."}}};
  static const Templates creative = {
      {},
      {{"the", "$WHO", "came", "to", "the", "$NCRE", "in", "the", "$TIME", "."},
       {"a", "$NCRE", "stood", "beyond", "the", "$NCRE", "near", "the", "$NCRE", "."},
       {"in", "the", "$TIME", ",", "the", "$WHO", "found", "a", "$NCRE", "."}},
      {{"the", "$WHO", "$MOVE", "$ADV", "toward", "the", "$NCRE", "."},
       {"$CONN", ",", "the", "$NCRE", "seemed", "$ADJ", "under", "the", "$TIME", "sky",
        "."},
       {"the", "$WHO", "$SAY", "that", "the", "$NCRE", "was", "$ADJ", "."},
       {"$CONN", ",", "a", "$ADJ", "$NCRE", "$MOVE", "past", "the", "$NCRE", "."},
       {"the", "$NCRE", "and", "the", "$NCRE", "waited", "in", "the", "$TIME", "."}}};
  switch (task) {
    case Task::news: return news;
    case Task::essay: return essay;
    case Task::creative: return creative;
  }
  throw Error("bad task");
}

const std::vector<std::string>& function_words() {
  static const std::vector<std::string> words = {
      "the",    "a",       "an",     "of",     "in",    "on",      "at",     "to",
      "for",    "with",    "and",    "but",    "or",    "that",    "this",   "those",
      "these",  "it",      "its",    "was",    "were",  "is",      "are",    "be",
      "been",   "has",     "have",   "had",    "will",  "would",   "could",  "can",
      "may",    "after",   "before", "during", "while", "when",    "where",  "which",
      "who",    "from",    "by",     "as",     "not",   "no",      "more",   "most",
      "over",   "under",   "between", "into",  "near",  "since",   "until",  "again",
      "also",   "then",    "than",   "so",     "such",  "both",    "each",   "new",
      "modern", "officials", "residents", "scholars", "sky",      "link",   "came",
      "stood",  "beyond",  "found",  "seemed", "grew",  "changed", "concerns",
      "rests",  "this",    "had"};
  return words;
}

const std::vector<std::string>& instruction_words() {
  static const std::vector<std::string> words = {
      "write", "news", "article", "given", "headline", "essay",
      "continuing", "text", "continue", "story"};
  return words;
}

std::string pick(Rng& rng, const std::vector<std::string>& v) {
  return v[rng.below(v.size())];
}

std::string render_template(const std::vector<std::string>& tmpl, Rng& rng) {
  std::string out;
  for (const auto& tok : tmpl) {
    std::string word = tok;
    if (!tok.empty() && tok[0] == '$') {
      const auto& cls = slot_classes().at(tok.substr(1));
      word = pick(rng, cls.a);
    }
    if (!out.empty() && word != "." && word != ",") out.push_back(' ');
    out += word;
  }
  return out;
}

// Reverse map register-a word -> (class b-list, index) for the transform.
const std::unordered_map<std::string, std::pair<const SlotClass*, size_t>>&
a_word_index() {
  static const auto index = [] {
    std::unordered_map<std::string, std::pair<const SlotClass*, size_t>> m;
    for (const auto& [name, cls] : slot_classes()) {
      if (cls.b.empty()) continue;
      for (size_t i = 0; i < cls.a.size(); ++i) m[cls.a[i]] = {&cls, i};
    }
    return m;
  }();
  return index;
}

}  // namespace

const std::vector<std::string>& toy_lexicon() {
  static const std::vector<std::string> lex = [] {
    std::vector<std::string> words = {"<bos>", "<eos>", "<unk>", kStyleMarkerA,
                                      kStyleMarkerB, ".", ",", ":"};
    auto add = [&words](const std::vector<std::string>& more) {
      for (const auto& w : more)
        if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
    };
    add(function_words());
    add(instruction_words());
    add(filler_words());
    for (const auto& [name, cls] : slot_classes()) {
      add(cls.a);
      add(cls.b);
    }
    return words;
  }();
  return lex;
}

const Tokenizer& toy_tokenizer() {
  static const Tokenizer tok(toy_lexicon());
  return tok;
}

const std::vector<std::vector<std::string>>& toy_synonym_groups() {
  static const std::vector<std::vector<std::string>> groups = [] {
    std::vector<std::vector<std::string>> g;
    for (const auto& [name, cls] : slot_classes()) {
      if (cls.b.empty()) continue;
      for (size_t i = 0; i < cls.a.size(); ++i) g.push_back({cls.a[i], cls.b[i]});
    }
    g.push_back(slot_classes().at("DAY").a);
    g.push_back(slot_classes().at("TIME").a);
    return g;
  }();
  return groups;
}

const std::vector<std::string>& style_b_marker_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> w;
    for (const auto& [name, cls] : slot_classes())
      for (const auto& word : cls.b) w.push_back(word);
    for (const auto& f : filler_words()) w.push_back(f);
    return w;
  }();
  return words;
}

std::vector<RawHumanDoc> make_toy_human_docs(Task task, int n, uint64_t seed) {
  const auto& tmpl = templates_for(task);
  std::vector<RawHumanDoc> docs;
  docs.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "toy-doc:" + to_string(task), static_cast<uint64_t>(i)));
    RawHumanDoc d;
    std::ostringstream id;
    id << to_string(task) << "-" << i;
    d.id = id.str();
    if (task == Task::news) d.headline = render_template(tmpl.headline[rng.below(tmpl.headline.size())], rng);
    std::string body;
    const int n_neutral = 2;
    const int n_styled = 3 + static_cast<int>(rng.below(3));  // 3..5
    for (int s = 0; s < n_neutral; ++s) {
      if (!body.empty()) body.push_back(' ');
      body += render_template(tmpl.neutral[rng.below(tmpl.neutral.size())], rng);
    }
    for (int s = 0; s < n_styled; ++s) {
      body.push_back(' ');
      body += render_template(tmpl.styled[rng.below(tmpl.styled.size())], rng);
    }
    d.text = body;
    docs.push_back(std::move(d));
  }
  return docs;
}

std::string style_b_transform(const std::string& text, uint64_t seed,
                              const ToyStyleParams& params) {
  Rng rng(derive_seed(seed, "style-b"));
  const auto words = Tokenizer::split_words(text);
  std::vector<std::string> out;
  out.reserve(words.size() + 8);
  int sentences_done = 0;
  bool at_sentence_start = true;
  for (const auto& w : words) {
    if (at_sentence_start && sentences_done >= 2 && rng.uniform() < params.p_filler) {
      out.push_back(pick(rng, filler_words()));
      out.push_back(",");
    }
    at_sentence_start = false;
    auto it = a_word_index().find(w);
    if (it != a_word_index().end() && rng.uniform() < params.p_swap) {
      out.push_back(it->second.first->b[it->second.second]);
    } else {
      out.push_back(w);
    }
    if (w == ".") {
      ++sentences_done;
      at_sentence_start = true;
    }
  }
  std::string joined;
  for (const auto& w : out) {
    if (!joined.empty() && w != "." && w != ",") joined.push_back(' ');
    joined += w;
  }
  return joined;
}

std::vector<std::string> make_pretrain_docs(int docs_per_task, uint64_t seed,
                                            const ToyStyleParams& params) {
  std::vector<std::string> docs;
  for (Task task : {Task::news, Task::essay, Task::creative}) {
    auto human = make_toy_human_docs(task, docs_per_task, derive_seed(seed, "pretrain-human:" + to_string(task)));
    for (size_t i = 0; i < human.size(); ++i) {
      std::string base = human[i].text;
      if (task == Task::news) base = human[i].headline + " " + base;
      for (int c = 0; c < params.copies_per_doc; ++c) {
        const uint64_t ds = derive_seed(seed, "pretrain-draw:" + human[i].id, static_cast<uint64_t>(c));
        Rng rng(ds);
        const bool style_b = rng.uniform() < params.p_style_b;
        const bool marker = rng.uniform() < params.p_marker;
        std::string body = style_b ? style_b_transform(base, derive_seed(ds, "tf"), params) : base;
        std::string doc;
        if (marker) {
          doc = style_b ? kStyleMarkerB : kStyleMarkerA;
          doc.push_back(' ');
        }
        doc += body;
        docs.push_back(std::move(doc));
      }
    }
  }
  // Fixed interleave so batches mix tasks and styles.
  Rng rng(derive_seed(seed, "pretrain-shuffle"));
  std::shuffle(docs.begin(), docs.end(), rng.gen());
  return docs;
}

}  // namespace escape
