// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include "shorttitle/corpus.hpp"
#include "shorttitle/evalkit.hpp"
#include "shorttitle/inference.hpp"
#include "shorttitle/model.hpp"
#include "shorttitle/training.hpp"

using namespace shorttitle;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) { return format_fixed(v, digits); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

ModelConfig desk_model() {
  ModelConfig m;
  m.embed_dim = 16;
  m.lstm_hidden = 16;
  m.lstm_layers = 2;
  m.max_len = 15;
  return m;
}

// 1 ------------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.lstm_hidden = 8;
  cfg.lstm_layers = 2;
  cfg.max_len = 6;
  cfg.vocab_size = 20;
  cfg.ner_tag_count = 10;
  ModelParams p = init_params(cfg);
  nn::Rng rng(2024);
  for (auto* prm : p.all()) nn::init_uniform(*prm, rng, -0.5, 0.5);

  const std::vector<std::size_t> ids = {4, 11, 1, 7, 19, 0};
  const std::vector<int> mask = {1, 1, 1, 1, 1, 0};
  const std::vector<int> labels = {1, 0, 1, 1, 0};
  WideFeatures wide;
  for (int i = 0; i < 5; ++i) {
    const double tf = rng.uniform(0.1, 0.6), idf = rng.uniform(0.7, 3.0);
    wide.tfidf.push_back({tf, idf, tf * idf});
    wide.ner.push_back(rng.below(cfg.ner_tag_count));
  }
  auto params = p.all();
  const auto report = nn::finite_difference_check(
      params,
      [&](nn::Tape& t) {
        const auto r = forward(t, p, cfg, ids, mask, wide, Ablation::none());
        return nn::binary_cross_entropy(r.scores, labels, std::vector<int>(5, 1));
      },
      1e-4);
  const double secs = seconds_since(t0);
  std::string worst;
  double worst_err = -1.0;
  for (const auto& e : report.entries) {
    if (e.max_relative_error > worst_err) {
      worst_err = e.max_relative_error;
      worst = e.name;
    }
  }
  return {report.passed() && secs <= 60.0,
          std::to_string(report.entries.size()) + " groups, max rel err " + sci(worst_err) + " (" +
              worst + "), tol 1e-4, " + fmt(secs, 1) + " s (limit 60)"};
}

// 2 ------------------------------------------------------------------------

Outcome knapsack_oracle() {
  const auto t0 = Clock::now();
  nn::Rng rng(7);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(15);
    std::vector<double> s(n);
    std::vector<std::size_t> lens(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = trial % 3 == 0 ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
      lens[i] = rng.between(1, 8);
    }
    const std::size_t m = rng.below(41);
    const auto dp = select_by_knapsack(s, lens, m);
    const auto bf = knapsack_bruteforce(s, lens, m);
    if (!(dp.kept == bf.kept && dp.total_score == bf.total_score)) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs <= 10.0,
          "1000 instances, " + std::to_string(mismatches) + " mismatches, " + fmt(secs, 2) +
              " s (limit 10)"};
}

// 3 ------------------------------------------------------------------------

Outcome rouge_oracle() {
  struct Case {
    std::vector<std::string> pred, ref;
    long overlap;  // clipped unigram matches, counted by hand
  };
  const std::vector<Case> cases = {
      {{"a", "b", "c"}, {"b", "c", "d"}, 2},
      {{"a", "b"}, {"a", "b"}, 2},
      {{"x", "y"}, {"a", "b"}, 0},
      {{}, {"a", "b"}, 0},
      {{"a", "a", "a"}, {"a", "b"}, 1},
      {{"a"}, {"a", "a", "b"}, 1},
      {{"a", "a", "b"}, {"a", "a", "a", "b"}, 3},
      {{"印花", "卫衣"}, {"印花", "女装", "卫衣"}, 2},
      {{"a", "b", "c", "d", "e", "f"}, {"f"}, 1},
      {{"b", "a"}, {"a", "b"}, 2},
      {{"a", "b", "a", "b"}, {"b", "b", "c"}, 2},
      {{"q"}, {"q"}, 1},
  };
  double worst = 0.0;
  for (const auto& c : cases) {
    const double lp = static_cast<double>(c.pred.size()), lr = static_cast<double>(c.ref.size());
    const double o = static_cast<double>(c.overlap);
    const double p = c.pred.empty() ? 0.0 : o / lp;
    const double r = o / lr;
    const double f = c.overlap == 0 ? 0.0 : 2.0 * o / (lp + lr);
    const auto got = rouge1(c.pred, c.ref);
    worst = std::max({worst, std::abs(got.precision - p), std::abs(got.recall - r),
                      std::abs(got.f1 - f)});
  }
  return {worst <= 1e-12, std::to_string(cases.size()) + " fixtures, max abs diff " + sci(worst) +
                              " (tol 1e-12)"};
}

// 4 ------------------------------------------------------------------------

Outcome masking_invariance() {
  ModelConfig cfg = desk_model();
  cfg.vocab_size = 50;
  ModelParams p = init_params(cfg);
  nn::Rng rng(99);
  for (auto* prm : p.all()) nn::init_uniform(*prm, rng, -0.3, 0.3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(cfg.max_len);
    std::vector<std::size_t> ids;
    WideFeatures wide;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back(rng.below(cfg.vocab_size));
      const double tf = rng.uniform(0.05, 1.0), idf = rng.uniform(0.69, 4.0);
      wide.tfidf.push_back({tf, idf, tf * idf});
      wide.ner.push_back(rng.below(cfg.ner_tag_count));
    }
    nn::Tape t1, t2;
    const auto bare = forward(t1, p, cfg, ids, std::vector<int>(n, 1), wide, Ablation::none());
    auto padded = ids;
    std::vector<int> mask(n, 1);
    padded.resize(cfg.max_len, Vocabulary::kPad);
    mask.resize(cfg.max_len, 0);
    const auto pad = forward(t2, p, cfg, padded, mask, wide, Ablation::none());
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(bare.scores.value()[i] - pad.scores.value()[i]));
    }
  }
  return {worst <= 1e-9, "100 examples, max |diff| " + sci(worst) + " (tol 1e-9)"};
}

// 5 ------------------------------------------------------------------------

Outcome synthetic_learning() {
  const auto t0 = Clock::now();
  SyntheticSpec spec;
  spec.title_count = 5500;
  spec.seed = 7;
  const auto all = generate_synthetic(spec).examples;
  const std::vector<TitleExample> train_set(all.begin(), all.begin() + 5000);
  const std::vector<TitleExample> test_set(all.begin() + 5000, all.end());
  TrainConfig tc;
  tc.epochs = 10;
  tc.tau = 0.4;
  auto ck = make_initial_checkpoint(train_set, desk_model(), tc, NerTagSet(), NerLexicon());
  train(ck, train_set, {}, tc);
  const auto f1 = evaluate_threshold(ck, prepare_all(ck.features, test_set), 0.4).f1;
  const double secs = seconds_since(t0);
  return {f1 >= 0.95 && secs <= 600.0, "5000/500 titles, 10 epochs, test F1 " + fmt(f1) +
                                           " at tau 0.4 (need >= 0.95), " + fmt(secs, 1) +
                                           " s (limit 600)"};
}

// 6 ------------------------------------------------------------------------

// Every word is fresh, so test titles contain only words never seen in
// training, and word order is shuffled. Only the NER tags carry the rule.
Outcome ablation_ordering() {
  const auto t0 = Clock::now();
  double full_sum = 0.0, base_sum = 0.0;
  std::size_t max_freq = 0;
  std::ostringstream per_seed;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    SyntheticSpec spec;
    spec.title_count = 2500;
    spec.seed = seed;
    spec.shuffle_order = true;
    for (auto& f : spec.families) f.vocab_size = 0;
    const auto all = generate_synthetic(spec).examples;
    const std::vector<TitleExample> train_set(all.begin(), all.begin() + 2000);
    const std::vector<TitleExample> test_set(all.begin() + 2000, all.end());
    std::map<std::string, std::size_t> freq;
    for (const auto& ex : train_set)
      for (const auto& w : ex.words) max_freq = std::max(max_freq, ++freq[w.surface]);
    TrainConfig tc;
    tc.epochs = 5;
    tc.seed = seed;
    double f1[2];
    for (int variant = 0; variant < 2; ++variant) {
      ModelConfig m = desk_model();
      m.seed = seed;
      m.ablation = variant == 0 ? Ablation::none() : Ablation::bilstm_only();
      auto ck = make_initial_checkpoint(train_set, m, tc, NerTagSet(), NerLexicon());
      train(ck, train_set, {}, tc);
      f1[variant] = evaluate_threshold(ck, prepare_all(ck.features, test_set), 0.4).f1;
    }
    full_sum += f1[0];
    base_sum += f1[1];
    per_seed << " seed " << seed << ": " << fmt(f1[0]) << " vs " << fmt(f1[1]) << ";";
  }
  const double gap = (full_sum - base_sum) / 3.0;
  return {gap >= 0.02 && max_freq < 3,
          "max training frequency of any word " + std::to_string(max_freq) + "; mean F1 full " + fmt(full_sum / 3.0) + ", bilstm-only " +
                           fmt(base_sum / 3.0) + ", gap " + fmt(gap) + " (need >= 0.02);" +
                           per_seed.str() + " " + fmt(seconds_since(t0), 1) + " s"};
}

// 7 ------------------------------------------------------------------------

std::vector<double> pagerank_linear_solve(const std::vector<std::vector<std::size_t>>& adj,
                                          double d) {
  const std::size_t n = adj.size();
  std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    a[i][i] += 1.0;
    a[i][n] = (1.0 - d) / static_cast<double>(n);
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i : adj[j]) a[i][j] -= d / static_cast<double>(adj[j].size());
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k <= n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = a[i][n] / a[i][i];
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  for (double& v : s) v /= total;
  return s;
}

std::vector<std::string> random_title(nn::Rng& rng, std::size_t vocab) {
  std::vector<std::string> t;
  for (std::size_t i = 0, n = 1 + rng.below(15); i < n; ++i)
    t.push_back("w" + std::to_string(rng.below(vocab)));
  return t;
}

Outcome textrank_checks() {
  nn::Rng rng(5);
  std::size_t not_converged = 0, titles = 0, max_iter = 0;
  SyntheticSpec spec;
  spec.title_count = 2000;
  for (const auto& ex : generate_synthetic(spec).examples) {
    const auto r = textrank_scores(truncate(ex, 15).surfaces());
    ++titles;
    max_iter = std::max(max_iter, r.iterations);
    if (!(r.converged && r.last_delta < 1e-6 && r.iterations <= 100)) ++not_converged;
  }
  for (int i = 0; i < 2000; ++i) {
    const auto r = textrank_scores(random_title(rng, 1 + rng.below(20)));
    ++titles;
    max_iter = std::max(max_iter, r.iterations);
    if (!(r.converged && r.last_delta < 1e-6 && r.iterations <= 100)) ++not_converged;
  }
  double worst = 0.0;
  int graphs = 0;
  while (graphs < 50) {
    const auto title = random_title(rng, 12);
    const auto r = textrank_scores(title);
    bool dangling = false;
    for (const auto& row : r.adjacency) dangling |= row.empty();
    if (dangling) continue;  // the linear system below assumes no dangling nodes
    const auto exact = pagerank_linear_solve(r.adjacency, 0.85);
    for (std::size_t i = 0; i < exact.size(); ++i)
      worst = std::max(worst, std::abs(exact[i] - r.node_scores[i]));
    ++graphs;
  }
  return {not_converged == 0 && worst <= 1e-6,
          std::to_string(titles) + " titles, " + std::to_string(not_converged) +
              " not converged (max " + std::to_string(max_iter) + " iterations); " +
              std::to_string(graphs) + " graphs vs linear solve, max |diff| " + sci(worst) +
              " (tol 1e-6)"};
}

// 8 ------------------------------------------------------------------------

Outcome budget_compliance() {
  nn::Rng rng(8);
  std::size_t violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    std::vector<double> s(n);
    std::vector<std::size_t> lens(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.uniform();
      lens[i] = rng.between(1, 8);
    }
    const auto sel = select_by_knapsack(s, lens, 12);
    std::size_t chars = 0;
    for (std::size_t i : sel.kept) chars += lens[i];
    if (chars > 12 || chars != sel.total_chars) ++violations;
  }
  return {violations == 0, "10000 instances at m = 12, " + std::to_string(violations) +
                               " violations"};
}

// 9 ------------------------------------------------------------------------

Outcome determinism_round_trip() {
  SyntheticSpec spec;
  spec.title_count = 400;
  spec.seed = 21;
  const auto all = generate_synthetic(spec).examples;
  const std::vector<TitleExample> train_set(all.begin(), all.begin() + 300);
  const std::vector<TitleExample> test_set(all.begin() + 300, all.end());
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 32;
  auto run = [&] {
    auto ck = make_initial_checkpoint(train_set, desk_model(), tc, NerTagSet(), NerLexicon());
    train(ck, train_set, {}, tc);
    return ck;
  };
  const auto a = run();
  const auto b = run();
  const bool identical = serialize_checkpoint(a) == serialize_checkpoint(b);

  const auto path = (std::filesystem::temp_directory_path() / "shorttitle_accept.ckpt").string();
  save_checkpoint(path, a);
  const auto loaded = load_checkpoint(path);
  std::remove(path.c_str());
  const auto before = score_all(a, prepare_all(a.features, test_set));
  const auto after = score_all(loaded, prepare_all(loaded.features, test_set));
  const bool same_scores = before == after;
  return {identical && same_scores,
          std::string("checkpoints ") + (identical ? "bitwise identical" : "DIFFER") +
              ", reloaded scores " + (same_scores ? "bitwise identical" : "DIFFER")};
}

// 10 -----------------------------------------------------------------------

Outcome threshold_monotonicity() {
  nn::Rng rng(10);
  std::size_t violations = 0;
  auto subset = [](const Selection& a, const Selection& b) {
    return std::includes(b.kept.begin(), b.kept.end(), a.kept.begin(), a.kept.end());
  };
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s(1 + rng.below(20));
    for (double& v : s) v = trial % 4 == 0 ? static_cast<double>(rng.below(11)) / 10.0 : rng.uniform();
    const auto s5 = select_by_threshold(s, 0.5), s4 = select_by_threshold(s, 0.4),
               s3 = select_by_threshold(s, 0.3);
    if (!subset(s5, s4) || !subset(s4, s3)) ++violations;
  }
  return {violations == 0, "1000 score vectors, " + std::to_string(violations) + " violations"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient check", gradient_check},
      {"knapsack vs brute force", knapsack_oracle},
      {"ROUGE-1 fixtures", rouge_oracle},
      {"masking invariance", masking_invariance},
      {"synthetic end-to-end learning", synthetic_learning},
      {"ablation ordering", ablation_ordering},
      {"TextRank convergence and oracle", textrank_checks},
      {"budget compliance", budget_compliance},
      {"determinism and round trip", determinism_round_trip},
      {"threshold monotonicity", threshold_monotonicity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first
              << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
