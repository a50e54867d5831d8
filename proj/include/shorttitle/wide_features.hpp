#pragma once

// TF-IDF statistics and lexicon-based entity tags, the shallow per-word
// inputs that bypass the recurrent encoder.

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "shorttitle/corpus.hpp"
#include "shorttitle/errors.hpp"

namespace shorttitle {

// cnt(word in title) / n.
inline double term_frequency(const std::string& word,
                             const std::vector<std::string>& title) {
  if (title.empty()) throw ValidationError("term_frequency: empty title");
  std::size_t cnt = 0;
  for (const auto& w : title) cnt += (w == word);
  return static_cast<double>(cnt) / static_cast<double>(title.size());
}

class TfIdfTable {
 public:
  TfIdfTable() = default;

  TfIdfTable(std::size_t title_count,
             std::unordered_map<std::string, std::size_t> doc_count)
      : title_count_(title_count), doc_count_(std::move(doc_count)) {
    if (title_count_ == 0) throw ValidationError("tf-idf table needs N >= 1");
    for (const auto& [w, c] : doc_count_) {
      if (c < 1 || c > title_count_) {
        throw ValidationError("document count of '" + w + "' is " +
                              std::to_string(c) + " with N=" +
                              std::to_string(title_count_));
      }
    }
  }

  static TfIdfTable from_stats(const CorpusStats& stats) {
    return TfIdfTable(stats.title_count, stats.doc_count);
  }
  static TfIdfTable from_corpus(const std::vector<TitleExample>& examples) {
    return from_stats(compute_corpus_stats(examples));
  }

  std::size_t title_count() const { return title_count_; }
  const std::unordered_map<std::string, std::size_t>& doc_counts() const {
    return doc_count_;
  }

  // log(1 + N / C) with natural log; unseen words use C = 1.
  static double idf_value(std::size_t n, std::size_t c) {
    if (n == 0) throw ValidationError("idf: N = 0");
    if (c == 0) c = 1;
    return std::log1p(static_cast<double>(n) / static_cast<double>(c));
  }

  double idf(const std::string& word) const {
    auto it = doc_count_.find(word);
    return idf_value(title_count_, it == doc_count_.end() ? 1 : it->second);
  }
  double default_idf() const { return idf_value(title_count_, 1); }

 private:
  std::size_t title_count_ = 0;
  std::unordered_map<std::string, std::size_t> doc_count_;
};

inline double inverse_document_frequency(const std::string& word,
                                         const TfIdfTable& table) {
  return table.idf(word);
}

using TfIdfVector = std::array<double, 3>;

// [tf, idf, tf * idf].
inline TfIdfVector tfidf_vector(const std::string& word,
                                const std::vector<std::string>& title,
                                const TfIdfTable& table) {
  const double tf = term_frequency(word, title);
  const double idf = table.idf(word);
  return {tf, idf, tf * idf};
}

inline std::vector<TfIdfVector> tfidf_vectors(const std::vector<std::string>& title,
                                              const TfIdfTable& table) {
  std::vector<TfIdfVector> out;
  out.reserve(title.size());
  for (const auto& w : title) out.push_back(tfidf_vector(w, title, table));
  return out;
}

class NerTagSet {
 public:
  static constexpr const char* kNone = "O";

  // The default ten tags.
  NerTagSet()
      : NerTagSet({"Brand", "Color", "Category", "Style", "Size",
                   "Marketing_Service", "Material", "Season", "Gender", kNone}) {}

  explicit NerTagSet(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i].empty()) throw ValidationError("empty tag name");
      if (!index_.emplace(names_[i], i).second) {
        throw ValidationError("duplicate tag name " + names_[i]);
      }
    }
    if (!index_.count(kNone)) {
      throw ValidationError(std::string("tag set must contain \"") + kNone + "\"");
    }
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  bool contains(const std::string& tag) const { return index_.count(tag) > 0; }
  std::size_t none_index() const { return index_.at(kNone); }

  std::size_t index(const std::string& tag) const {
    auto it = index_.find(tag);
    if (it == index_.end()) throw ValidationError("unknown NER tag " + tag);
    return it->second;
  }

  std::uint64_t hash() const { return fnv1a(names_); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::vector<double> ner_one_hot(const std::string& tag, const NerTagSet& tagset) {
  std::vector<double> v(tagset.size(), 0.0);
  v[tagset.index(tag)] = 1.0;
  return v;
}

class NerLexicon {
 public:
  NerLexicon() = default;

  void add(const std::string& word, const std::string& tag) { map_[word] = tag; }

  // Every mapped tag must exist in the tag set.
  void validate(const NerTagSet& tagset) const {
    for (const auto& [w, t] : map_) {
      if (!tagset.contains(t)) {
        throw ValidationError("lexicon maps '" + w + "' to unknown tag " + t);
      }
    }
  }

  const std::string* find(const std::string& word) const {
    auto it = map_.find(word);
    return it == map_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return map_.size(); }
  const std::map<std::string, std::string>& entries() const { return map_; }

 private:
  std::map<std::string, std::string> map_;
};

inline std::vector<std::string> tag_ner(const std::vector<std::string>& title,
                                        const NerLexicon& lexicon,
                                        const NerTagSet& tagset) {
  std::vector<std::string> out;
  out.reserve(title.size());
  for (const auto& w : title) {
    const std::string* t = lexicon.find(w);
    out.push_back(t && tagset.contains(*t) ? *t : NerTagSet::kNone);
  }
  return out;
}

// Tags carried by the example when present, otherwise lexicon tags.
inline std::vector<std::string> resolve_tags(const TitleExample& ex,
                                             const NerLexicon& lexicon,
                                             const NerTagSet& tagset) {
  if (!ex.ner_tags.empty()) {
    for (const auto& t : ex.ner_tags) tagset.index(t);
    return ex.ner_tags;
  }
  return tag_ner(ex.surfaces(), lexicon, tagset);
}

// One tag per line; line order is the one-hot index.
inline NerTagSet load_tagset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tag set " + path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    names.push_back(line);
  }
  return NerTagSet(std::move(names));
}

inline void save_tagset(const std::string& path, const NerTagSet& tagset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write tag set " + path);
  for (const auto& n : tagset.names()) out << n << '\n';
}

// word<TAB>tag per line.
inline NerLexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexicon " + path);
  NerLexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw ParseError("lexicon line " + std::to_string(lineno) +
                       ": expected word<TAB>tag");
    }
    lex.add(line.substr(0, tab), line.substr(tab + 1));
  }
  return lex;
}

inline void save_lexicon(const std::string& path,
                         const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write lexicon " + path);
  for (const auto& [w, t] : entries) out << w << '\t' << t << '\n';
}

// Per-word wide inputs for one title.
struct WideFeatures {
  std::vector<TfIdfVector> tfidf;
  std::vector<std::size_t> ner;  // tag indices
};

inline WideFeatures compute_wide_features(const TitleExample& ex, const TfIdfTable& table,
                                          const NerLexicon& lexicon,
                                          const NerTagSet& tagset) {
  WideFeatures f;
  const auto surfaces = ex.surfaces();
  f.tfidf = tfidf_vectors(surfaces, table);
  for (const auto& t : resolve_tags(ex, lexicon, tagset)) f.ner.push_back(tagset.index(t));
  return f;
}

}  // namespace shorttitle
