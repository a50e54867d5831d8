#pragma once

// ROUGE-1, dataset-level averaging, the TextRank baseline, and side-by-side
// system reports.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "shorttitle/errors.hpp"
#include "shorttitle/inference.hpp"

namespace shorttitle {

struct RougeScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  bool operator==(const RougeScores&) const = default;
};

inline double harmonic_f1(double p, double r) {
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

// Clipped multiset intersection size.
inline std::size_t unigram_overlap(const std::vector<std::string>& a,
                                   const std::vector<std::string>& b) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& w : b) ++counts[w];
  std::size_t overlap = 0;
  for (const auto& w : a) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return overlap;
}

inline RougeScores rouge1(const std::vector<std::string>& predicted,
                          const std::vector<std::string>& reference) {
  if (reference.empty()) throw ValidationError("rouge1: empty reference summary");
  const double overlap = static_cast<double>(unigram_overlap(predicted, reference));
  RougeScores s;
  s.precision = predicted.empty() ? 0.0 : overlap / static_cast<double>(predicted.size());
  s.recall = overlap / static_cast<double>(reference.size());
  s.f1 = harmonic_f1(s.precision, s.recall);
  return s;
}

// Macro average of per-example scores.
inline RougeScores evaluate_dataset(const std::vector<std::vector<std::string>>& predicted,
                                    const std::vector<std::vector<std::string>>& reference) {
  if (predicted.size() != reference.size()) {
    throw ValidationError("evaluate: " + std::to_string(predicted.size()) +
                          " predictions for " + std::to_string(reference.size()) +
                          " references");
  }
  if (reference.empty()) throw ValidationError("evaluate: empty dataset");
  RougeScores mean;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const RougeScores s = rouge1(predicted[i], reference[i]);
    mean.precision += s.precision;
    mean.recall += s.recall;
    mean.f1 += s.f1;
  }
  const double n = static_cast<double>(reference.size());
  mean.precision /= n;
  mean.recall /= n;
  mean.f1 /= n;
  return mean;
}

// ---------------------------------------------------------------------------
// TextRank

struct TextRankConfig {
  std::size_t window = 3;
  double damping = 0.85;
  std::size_t max_iterations = 100;
  double epsilon = 1e-6;

  void validate() const {
    if (window < 2) throw ValidationError("textrank window must be >= 2");
    if (!(damping > 0.0 && damping < 1.0)) {
      throw ValidationError("textrank damping must be in (0, 1)");
    }
  }
};

struct TextRankResult {
  std::vector<std::string> nodes;      // distinct words, first-appearance order
  std::vector<double> node_scores;     // sums to 1
  std::vector<double> word_scores;     // per title position
  std::vector<std::vector<std::size_t>> adjacency;
  std::size_t iterations = 0;
  double last_delta = 0.0;
  bool converged = false;
};

// Undirected co-occurrence graph: distinct words are linked when they occur
// fewer than `window` positions apart.
inline std::vector<std::vector<std::size_t>> cooccurrence_graph(
    const std::vector<std::string>& title, std::size_t window,
    std::vector<std::string>* nodes_out = nullptr,
    std::vector<std::size_t>* node_of_position = nullptr) {
  std::vector<std::string> nodes;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::size_t> pos_node;
  for (const auto& w : title) {
    auto [it, inserted] = index.emplace(w, nodes.size());
    if (inserted) nodes.push_back(w);
    pos_node.push_back(it->second);
  }
  std::vector<std::vector<std::size_t>> adj(nodes.size());
  for (std::size_t i = 0; i < title.size(); ++i) {
    for (std::size_t j = i + 1; j < title.size() && j - i < window; ++j) {
      const std::size_t a = pos_node[i], b = pos_node[j];
      if (a == b) continue;
      if (std::find(adj[a].begin(), adj[a].end(), b) == adj[a].end()) {
        adj[a].push_back(b);
        adj[b].push_back(a);
      }
    }
  }
  for (auto& row : adj) std::sort(row.begin(), row.end());
  if (nodes_out) *nodes_out = std::move(nodes);
  if (node_of_position) *node_of_position = std::move(pos_node);
  return adj;
}

// Damped PageRank by power iteration. Dangling nodes spread their mass
// uniformly.
inline TextRankResult textrank_scores(const std::vector<std::string>& title,
                                      const TextRankConfig& config = {}) {
  config.validate();
  if (title.empty()) throw ValidationError("textrank: empty title");
  TextRankResult r;
  std::vector<std::size_t> pos_node;
  r.adjacency = cooccurrence_graph(title, config.window, &r.nodes, &pos_node);
  const std::size_t n = r.nodes.size();
  const double d = config.damping;
  const double base = (1.0 - d) / static_cast<double>(n);
  std::vector<double> s(n, 1.0 / static_cast<double>(n)), next(n);
  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    double dangling = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (r.adjacency[j].empty()) dangling += s[j];
    const double spread = d * dangling / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j : r.adjacency[i]) {
        acc += s[j] / static_cast<double>(r.adjacency[j].size());
      }
      next[i] = base + spread + d * acc;
    }
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) delta += std::abs(next[i] - s[i]);
    s.swap(next);
    r.iterations = it + 1;
    r.last_delta = delta;
    if (delta < config.epsilon) {
      r.converged = true;
      break;
    }
  }
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  for (double& v : s) v /= total;
  r.node_scores = s;
  for (std::size_t node : pos_node) r.word_scores.push_back(s[node]);
  return r;
}

// The k highest-scoring distinct words (ties to the earlier word), keeping
// every occurrence, in title order.
inline Selection textrank_extract_topk(const std::vector<std::string>& title,
                                       const TextRankConfig& config, std::size_t k,
                                       std::span<const std::size_t> char_lens = {}) {
  const TextRankResult r = textrank_scores(title, config);
  std::vector<std::size_t> order(r.nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return r.node_scores[a] > r.node_scores[b];
  });
  std::vector<char> chosen(r.nodes.size(), 0);
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) chosen[order[i]] = 1;
  std::unordered_map<std::string, std::size_t> node_index;
  for (std::size_t i = 0; i < r.nodes.size(); ++i) node_index[r.nodes[i]] = i;
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < title.size(); ++i)
    if (chosen[node_index[title[i]]]) kept.push_back(i);
  return make_selection(r.word_scores, char_lens, std::move(kept));
}

// Knapsack over TextRank word scores under a character budget.
inline Selection textrank_extract_budget(const std::vector<std::string>& title,
                                         std::span<const std::size_t> char_lens,
                                         const TextRankConfig& config, std::size_t budget) {
  const TextRankResult r = textrank_scores(title, config);
  return select_by_knapsack(r.word_scores, char_lens, budget);
}

// ---------------------------------------------------------------------------
// Reports

struct SystemRun {
  std::string system;
  std::string setting;  // e.g. "tau=0.4" or "budget=12"
  std::vector<std::vector<std::string>> predictions;
};

struct ReportRow {
  std::string system;
  std::string setting;
  RougeScores scores;
};

inline std::string format_fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Report {
  std::vector<ReportRow> rows;

  // Aligned plain-text table; the best value in each metric column is
  // marked with '*'.
  std::string to_table() const {
    double best[3] = {-1.0, -1.0, -1.0};
    for (const auto& r : rows) {
      best[0] = std::max(best[0], r.scores.precision);
      best[1] = std::max(best[1], r.scores.recall);
      best[2] = std::max(best[2], r.scores.f1);
    }
    std::size_t w_sys = 6, w_set = 7;
    for (const auto& r : rows) {
      w_sys = std::max(w_sys, r.system.size());
      w_set = std::max(w_set, r.setting.size());
    }
    std::ostringstream out;
    auto cell = [&](double v, double b) {
      std::string s = format_fixed(v) + (v == b ? "*" : " ");
      return std::string(9 - std::min<std::size_t>(9, s.size()), ' ') + s;
    };
    out << std::left << std::setw(static_cast<int>(w_sys)) << "system" << "  "
        << std::setw(static_cast<int>(w_set)) << "setting" << "  "
        << "  ROUGE-P" << "  ROUGE-R" << " ROUGE-F1" << '\n';
    for (const auto& r : rows) {
      out << std::left << std::setw(static_cast<int>(w_sys)) << r.system << "  "
          << std::setw(static_cast<int>(w_set)) << r.setting << "  "
          << cell(r.scores.precision, best[0]) << cell(r.scores.recall, best[1])
          << cell(r.scores.f1, best[2]) << '\n';
    }
    return out.str();
  }

  // One JSON record per row.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& r : rows) {
      nlohmann::json j = {{"system", r.system},
                          {"setting", r.setting},
                          {"precision", r.scores.precision},
                          {"recall", r.scores.recall},
                          {"f1", r.scores.f1}};
      out += j.dump() + "\n";
    }
    return out;
  }
};

inline Report compare_models(const std::vector<SystemRun>& runs,
                             const std::vector<std::vector<std::string>>& reference) {
  Report report;
  for (const auto& run : runs) {
    report.rows.push_back({run.system, run.setting, evaluate_dataset(run.predictions, reference)});
  }
  return report;
}

inline std::string tau_setting(double tau) {
  std::ostringstream s;
  s << "tau=" << tau;
  return s.str();
}

// One run per threshold from fixed per-word scores.
inline std::vector<SystemRun> sweep_tau(const std::string& system,
                                        const std::vector<std::vector<double>>& scores,
                                        const std::vector<std::vector<std::string>>& titles,
                                        const std::vector<double>& taus) {
  if (scores.size() != titles.size()) throw ValidationError("sweep_tau: size mismatch");
  std::vector<SystemRun> runs;
  for (double tau : taus) {
    SystemRun run{system, tau_setting(tau), {}};
    for (std::size_t i = 0; i < titles.size(); ++i) {
      run.predictions.push_back(kept_words(select_by_threshold(scores[i], tau), titles[i]));
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace shorttitle
