#pragma once

// Titles, labels, vocabulary, document statistics, and the synthetic corpus
// generator. Titles arrive pre-segmented; nothing here segments raw text.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "shorttitle/errors.hpp"
#include "shorttitle/numerics.hpp"

namespace shorttitle {

// Number of UTF-8 code points in s.
inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

struct Word {
  Word() = default;
  explicit Word(std::string s) : surface(std::move(s)), char_len(utf8_length(surface)) {}
  Word(std::string s, std::size_t len) : surface(std::move(s)), char_len(len) {}

  std::string surface;
  std::size_t char_len = 0;

  bool operator==(const Word&) const = default;
};

struct TitleExample {
  std::vector<Word> words;
  std::optional<std::vector<int>> labels;
  // Tag names, one per word; empty when the source carried none.
  std::vector<std::string> ner_tags;

  std::size_t size() const { return words.size(); }
  bool labeled() const { return labels.has_value(); }

  std::vector<std::string> surfaces() const {
    std::vector<std::string> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(w.surface);
    return out;
  }

  // Words with label 1, in title order.
  std::vector<std::string> gold_short() const {
    if (!labels) throw ValidationError("example has no labels");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if ((*labels)[i]) out.push_back(words[i].surface);
    }
    return out;
  }

  bool operator==(const TitleExample&) const = default;
};

// First max_len words; labels and tags are cut with them.
inline TitleExample truncate(const TitleExample& ex, std::size_t max_len) {
  if (ex.size() <= max_len) return ex;
  TitleExample out;
  out.words.assign(ex.words.begin(), ex.words.begin() + max_len);
  if (ex.labels) {
    out.labels.emplace(ex.labels->begin(), ex.labels->begin() + max_len);
  }
  if (!ex.ner_tags.empty()) {
    out.ner_tags.assign(ex.ner_tags.begin(), ex.ner_tags.begin() + max_len);
  }
  return out;
}

inline void validate_example(const TitleExample& ex) {
  if (ex.words.empty()) throw ValidationError("empty title");
  for (const auto& w : ex.words) {
    if (w.surface.empty()) throw ValidationError("empty word in title");
    if (w.char_len < 1) {
      throw ValidationError("word '" + w.surface + "' has char_len 0");
    }
  }
  if (ex.labels) {
    if (ex.labels->size() != ex.words.size()) {
      throw ValidationError("label count " + std::to_string(ex.labels->size()) +
                            " != word count " +
                            std::to_string(ex.words.size()));
    }
    for (int y : *ex.labels) {
      if (y != 0 && y != 1) {
        throw ValidationError("label " + std::to_string(y) + " is not 0 or 1");
      }
    }
  }
  if (!ex.ner_tags.empty() && ex.ner_tags.size() != ex.words.size()) {
    throw ValidationError("ner_tags count " + std::to_string(ex.ner_tags.size()) +
                          " != word count " + std::to_string(ex.words.size()));
  }
}

// One JSON object, fields words / labels / ner_tags / chars.
inline TitleExample example_from_json(const nlohmann::json& rec) {
  if (!rec.is_object()) throw ParseError("record is not a JSON object");
  if (!rec.contains("words") || !rec["words"].is_array()) {
    throw ParseError("record has no \"words\" array");
  }
  TitleExample ex;
  std::vector<std::size_t> chars;
  try {
    for (const auto& w : rec["words"]) ex.words.emplace_back(w.get<std::string>());
    if (rec.contains("labels") && !rec["labels"].is_null()) {
      ex.labels = rec["labels"].get<std::vector<int>>();
    }
    if (rec.contains("ner_tags") && !rec["ner_tags"].is_null()) {
      ex.ner_tags = rec["ner_tags"].get<std::vector<std::string>>();
    }
    if (rec.contains("chars") && !rec["chars"].is_null()) {
      chars = rec["chars"].get<std::vector<std::size_t>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what());
  }
  if (!chars.empty()) {
    if (chars.size() != ex.words.size()) {
      throw ValidationError("chars count " + std::to_string(chars.size()) +
                            " != word count " + std::to_string(ex.words.size()));
    }
    for (std::size_t i = 0; i < chars.size(); ++i) ex.words[i].char_len = chars[i];
  }
  validate_example(ex);
  return ex;
}

inline nlohmann::json example_to_json(const TitleExample& ex) {
  nlohmann::json rec;
  rec["words"] = ex.surfaces();
  if (ex.labels) rec["labels"] = *ex.labels;
  if (!ex.ner_tags.empty()) rec["ner_tags"] = ex.ner_tags;
  const bool custom_chars =
      std::any_of(ex.words.begin(), ex.words.end(), [](const Word& w) {
        return w.char_len != utf8_length(w.surface);
      });
  if (custom_chars) {
    std::vector<std::size_t> chars;
    for (const auto& w : ex.words) chars.push_back(w.char_len);
    rec["chars"] = chars;
  }
  return rec;
}

// Blank lines are skipped; line numbers in errors are 1-based.
inline std::vector<TitleExample> parse_dataset(std::istream& in) {
  std::vector<TitleExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      out.push_back(example_from_json(rec));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<TitleExample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path);
  return parse_dataset(in);
}

inline void write_dataset(std::ostream& out,
                          const std::vector<TitleExample>& examples) {
  for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
}

inline void save_dataset(const std::string& path,
                         const std::vector<TitleExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path);
  write_dataset(out, examples);
  if (!out) throw IoError("write failed for " + path);
}

// 64-bit FNV-1a over the items, each terminated by '\n'.
inline std::uint64_t fnv1a(const std::vector<std::string>& items) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  };
  for (const auto& s : items) {
    for (unsigned char c : s) mix(c);
    mix('\n');
  }
  return h;
}

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kOov = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kOovToken = "<unk>";

  Vocabulary() : words_{kPadToken, kOovToken} {}

  // Non-reserved words in id order (ids 2, 3, ...).
  static Vocabulary from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    for (const auto& w : words) {
      if (v.index_.count(w)) throw ValidationError("duplicate vocabulary word " + w);
      v.index_.emplace(w, v.words_.size());
      v.words_.push_back(w);
    }
    return v;
  }

  std::size_t size() const { return words_.size(); }
  std::size_t id(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? kOov : it->second;
  }
  bool contains(const std::string& w) const { return index_.count(w) > 0; }
  const std::string& word(std::size_t id) const { return words_.at(id); }

  std::vector<std::string> regular_words() const {
    return {words_.begin() + 2, words_.end()};
  }
  std::uint64_t hash() const { return fnv1a(words_); }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Words with frequency >= min_count, ordered by descending frequency then by
// byte order of the surface.
inline Vocabulary build_vocabulary(const std::vector<TitleExample>& examples,
                                   std::size_t min_count = 1) {
  if (min_count < 1) throw ValidationError("min_count must be >= 1");
  if (examples.empty()) throw ValidationError("cannot build vocabulary from empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& ex : examples)
    for (const auto& w : ex.words) ++freq[w.surface];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : freq)
    if (c >= min_count) kept.emplace_back(w, c);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [w, c] : kept) words.push_back(w);
  return Vocabulary::from_words(words);
}

struct CorpusStats {
  std::size_t title_count = 0;
  // Number of titles containing each word.
  std::unordered_map<std::string, std::size_t> doc_count;
  double mean_words_per_title = 0.0;
  double mean_chars_per_title = 0.0;
  // Over labeled titles only; zero when none are labeled.
  double mean_words_per_summary = 0.0;
  double mean_chars_per_summary = 0.0;

  std::size_t count(const std::string& w) const {
    auto it = doc_count.find(w);
    return it == doc_count.end() ? 0 : it->second;
  }
};

inline CorpusStats compute_corpus_stats(const std::vector<TitleExample>& examples) {
  if (examples.empty()) throw ValidationError("cannot compute stats of empty corpus");
  CorpusStats s;
  s.title_count = examples.size();
  double words = 0, chars = 0, sum_words = 0, sum_chars = 0;
  std::size_t labeled = 0;
  for (const auto& ex : examples) {
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < ex.words.size(); ++i) {
      const Word& w = ex.words[i];
      if (seen.insert(w.surface).second) ++s.doc_count[w.surface];
      words += 1;
      chars += static_cast<double>(w.char_len);
      if (ex.labels && (*ex.labels)[i]) {
        sum_words += 1;
        sum_chars += static_cast<double>(w.char_len);
      }
    }
    if (ex.labels) ++labeled;
  }
  const double n = static_cast<double>(examples.size());
  s.mean_words_per_title = words / n;
  s.mean_chars_per_title = chars / n;
  if (labeled) {
    s.mean_words_per_summary = sum_words / static_cast<double>(labeled);
    s.mean_chars_per_summary = sum_chars / static_cast<double>(labeled);
  }
  return s;
}

struct EncodedExample {
  std::vector<std::size_t> ids;
  std::vector<int> mask;
  // Zero at padded positions; all zero when the example is unlabeled.
  std::vector<int> labels;
  std::size_t length = 0;
};

inline EncodedExample encode_example(const TitleExample& ex, const Vocabulary& vocab,
                                     std::size_t max_len) {
  if (max_len < 1) throw ValidationError("max_len must be >= 1");
  EncodedExample e;
  e.length = std::min(ex.size(), max_len);
  e.ids.assign(max_len, Vocabulary::kPad);
  e.mask.assign(max_len, 0);
  e.labels.assign(max_len, 0);
  for (std::size_t i = 0; i < e.length; ++i) {
    e.ids[i] = vocab.id(ex.words[i].surface);
    e.mask[i] = 1;
    if (ex.labels) e.labels[i] = (*ex.labels)[i];
  }
  return e;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct TagFamily {
  std::string tag;
  // Distinct surfaces for this tag; 0 draws a fresh, never-reused surface for
  // every occurrence.
  std::size_t vocab_size = 50;
  int min_count = 0;
  int max_count = 1;
  // Filler families are scattered at random positions instead of sitting in
  // template order.
  bool scattered = false;
};

struct SyntheticSpec {
  std::vector<TagFamily> families = default_families();
  std::set<std::string> keep_tags = {"Category", "Color", "Style"};
  std::size_t title_count = 1000;
  bool shuffle_order = false;
  std::uint64_t seed = 1;
  double target_words_per_title = 12.0;
  double target_words_per_summary = 5.0;

  static std::vector<TagFamily> default_families() {
    return {
        {"Marketing_Service", 40, 0, 2, false},
        {"Brand", 200, 1, 1, false},
        {"Season", 8, 0, 1, false},
        {"Gender", 6, 0, 1, false},
        {"Style", 150, 1, 2, false},
        {"Color", 60, 1, 2, false},
        {"Material", 50, 0, 1, false},
        {"Category", 300, 1, 3, false},
        {"Size", 30, 0, 1, false},
        {"O", 80, 2, 4, true},
    };
  }

  std::vector<std::string> tags() const {
    std::vector<std::string> out;
    for (const auto& f : families) out.push_back(f.tag);
    return out;
  }

  void validate() const {
    if (families.empty()) throw ValidationError("synthetic spec has no tag families");
    std::set<std::string> seen;
    bool can_keep = false;
    for (const auto& f : families) {
      if (!seen.insert(f.tag).second) throw ValidationError("duplicate tag family " + f.tag);
      if (f.min_count < 0 || f.max_count < f.min_count) {
        throw ValidationError("bad count range for tag family " + f.tag);
      }
      if (keep_tags.count(f.tag) && f.max_count > 0) can_keep = true;
    }
    for (const auto& k : keep_tags) {
      if (!seen.count(k)) throw ValidationError("keep tag " + k + " has no family");
    }
    if (!can_keep) throw ValidationError("keep tags can never occur in a title");
  }
};

inline nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
  nlohmann::json j;
  j["families"] = nlohmann::json::array();
  for (const auto& f : s.families) {
    j["families"].push_back({{"tag", f.tag},
                             {"vocab_size", f.vocab_size},
                             {"min_count", f.min_count},
                             {"max_count", f.max_count},
                             {"scattered", f.scattered}});
  }
  j["keep_tags"] = s.keep_tags;
  j["title_count"] = s.title_count;
  j["shuffle_order"] = s.shuffle_order;
  j["seed"] = s.seed;
  j["target_words_per_title"] = s.target_words_per_title;
  j["target_words_per_summary"] = s.target_words_per_summary;
  return j;
}

// Missing keys keep their defaults.
inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    if (j.contains("families")) {
      s.families.clear();
      for (const auto& f : j["families"]) {
        TagFamily t;
        t.tag = f.at("tag").get<std::string>();
        t.vocab_size = f.value("vocab_size", t.vocab_size);
        t.min_count = f.value("min_count", t.min_count);
        t.max_count = f.value("max_count", t.max_count);
        t.scattered = f.value("scattered", t.scattered);
        s.families.push_back(t);
      }
    }
    if (j.contains("keep_tags")) s.keep_tags = j["keep_tags"].get<std::set<std::string>>();
    s.title_count = j.value("title_count", s.title_count);
    s.shuffle_order = j.value("shuffle_order", s.shuffle_order);
    s.seed = j.value("seed", s.seed);
    s.target_words_per_title = j.value("target_words_per_title", s.target_words_per_title);
    s.target_words_per_summary =
        j.value("target_words_per_summary", s.target_words_per_summary);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

struct SyntheticCorpus {
  std::vector<TitleExample> examples;
  // word -> tag for every surface the generator produced.
  std::vector<std::pair<std::string, std::string>> lexicon;
  std::vector<std::string> tags;
};

// The labeling rule: keep iff the word's tag is in the keep set.
inline std::vector<int> synthetic_labels(const std::vector<std::string>& tags,
                                         const std::set<std::string>& keep_tags) {
  std::vector<int> out;
  out.reserve(tags.size());
  for (const auto& t : tags) out.push_back(keep_tags.count(t) ? 1 : 0);
  return out;
}

namespace detail {

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Character counts 1..4 with weights 15/50/30/5 (mean 2.25 chars per word).
inline std::size_t draw_word_length(nn::Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.15) return 1;
  if (u < 0.65) return 2;
  if (u < 0.95) return 3;
  return 4;
}

class SurfaceFactory {
 public:
  explicit SurfaceFactory(nn::Rng& rng) : rng_(rng) {}

  // A CJK surface not produced before.
  std::string fresh() {
    std::size_t len = draw_word_length(rng_);
    for (int attempt = 0;; ++attempt) {
      if (attempt > 0 && attempt % 16 == 0) ++len;
      std::string s;
      for (std::size_t i = 0; i < len; ++i) {
        append_utf8(s, static_cast<char32_t>(0x4E00 + rng_.below(0x1500)));
      }
      if (used_.insert(s).second) return s;
    }
  }

 private:
  nn::Rng& rng_;
  std::unordered_set<std::string> used_;
};

}  // namespace detail

inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  nn::Rng rng(spec.seed);
  detail::SurfaceFactory factory(rng);

  std::vector<std::vector<std::string>> pools(spec.families.size());
  SyntheticCorpus corpus;
  corpus.tags = spec.tags();
  for (std::size_t f = 0; f < spec.families.size(); ++f) {
    for (std::size_t i = 0; i < spec.families[f].vocab_size; ++i) {
      pools[f].push_back(factory.fresh());
      corpus.lexicon.emplace_back(pools[f].back(), spec.families[f].tag);
    }
  }

  auto draw = [&](std::size_t f) {
    if (pools[f].empty()) {
      std::string s = factory.fresh();
      corpus.lexicon.emplace_back(s, spec.families[f].tag);
      return s;
    }
    return pools[f][rng.below(pools[f].size())];
  };

  corpus.examples.reserve(spec.title_count);
  while (corpus.examples.size() < spec.title_count) {
    std::vector<std::pair<std::string, std::string>> slots;  // (surface, tag)
    std::vector<std::pair<std::string, std::string>> scattered;
    for (std::size_t f = 0; f < spec.families.size(); ++f) {
      const TagFamily& fam = spec.families[f];
      const auto k = rng.between(fam.min_count, fam.max_count);
      for (std::int64_t j = 0; j < k; ++j) {
        auto& dst = fam.scattered ? scattered : slots;
        dst.emplace_back(draw(f), fam.tag);
      }
    }
    for (auto& item : scattered) {
      const auto pos = rng.below(slots.size() + 1);
      slots.insert(slots.begin() + static_cast<std::ptrdiff_t>(pos), std::move(item));
    }
    if (spec.shuffle_order) rng.shuffle(slots);

    TitleExample ex;
    for (auto& [surface, tag] : slots) {
      ex.words.emplace_back(surface);
      ex.ner_tags.push_back(tag);
    }
    ex.labels = synthetic_labels(ex.ner_tags, spec.keep_tags);
    const bool any_kept =
        std::find(ex.labels->begin(), ex.labels->end(), 1) != ex.labels->end();
    if (ex.words.empty() || !any_kept) continue;
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

}  // namespace shorttitle
