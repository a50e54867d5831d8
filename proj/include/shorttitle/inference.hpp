#pragma once

// Turning per-word scores into a short title: threshold cut-off, or an exact
// 0/1 knapsack under a character budget.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shorttitle/errors.hpp"

namespace shorttitle {

struct Selection {
  std::vector<int> z;                // 1 = keep, per real word
  std::vector<std::size_t> kept;     // strictly increasing
  std::size_t total_chars = 0;
  double total_score = 0.0;

  bool operator==(const Selection&) const = default;
};

// Value of a kept set, summed from the last kept index to the first. Both
// knapsack solvers use this order so equal sets compare bit-identical.
inline double selection_value(std::span<const double> scores,
                              std::span<const std::size_t> kept) {
  double v = 0.0;
  for (std::size_t k = kept.size(); k-- > 0;) v = scores[kept[k]] + v;
  return v;
}

inline Selection make_selection(std::span<const double> scores,
                                std::span<const std::size_t> char_lens,
                                std::vector<std::size_t> kept) {
  Selection s;
  s.z.assign(scores.size(), 0);
  for (std::size_t i : kept) {
    s.z[i] = 1;
    s.total_chars += char_lens.empty() ? 0 : char_lens[i];
  }
  s.total_score = selection_value(scores, kept);
  s.kept = std::move(kept);
  return s;
}

// Keep word i iff scores[i] >= tau.
inline Selection select_by_threshold(std::span<const double> scores, double tau,
                                     std::span<const std::size_t> char_lens = {}) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("tau must be in [0, 1]");
  if (!char_lens.empty() && char_lens.size() != scores.size()) {
    throw ValidationError("threshold: scores and lengths differ in size");
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] >= tau) kept.push_back(i);
  return make_selection(scores, char_lens, std::move(kept));
}

namespace detail {

inline void check_knapsack_input(std::span<const double> scores,
                                 std::span<const std::size_t> char_lens) {
  if (scores.size() != char_lens.size()) {
    throw ValidationError("knapsack: " + std::to_string(scores.size()) + " scores vs " +
                          std::to_string(char_lens.size()) + " lengths");
  }
  for (std::size_t len : char_lens)
    if (len < 1) throw ValidationError("knapsack: char length must be >= 1");
}

// (value, chars, set) ordering: higher value, then fewer chars, then the
// lexicographically smaller index sequence.
inline bool better(double v1, std::size_t c1, double v2, std::size_t c2) {
  if (v1 != v2) return v1 > v2;
  return c1 < c2;
}

}  // namespace detail

// Exact 0/1 knapsack by DP over items from the right. best[i][c] is the best
// (value, chars) using items i..n-1 with capacity c. On a full tie taking
// item i wins, which yields the leftmost optimal index set.
inline Selection select_by_knapsack(std::span<const double> scores,
                                    std::span<const std::size_t> char_lens,
                                    std::size_t budget) {
  detail::check_knapsack_input(scores, char_lens);
  const std::size_t n = scores.size(), w = budget + 1;
  std::vector<double> value((n + 1) * w, 0.0);
  std::vector<std::size_t> chars((n + 1) * w, 0);
  std::vector<std::uint8_t> take(n * w, 0);
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t c = 0; c <= budget; ++c) {
      const std::size_t skip = (i + 1) * w + c;
      double bv = value[skip];
      std::size_t bc = chars[skip];
      if (char_lens[i] <= c) {
        const std::size_t rest = (i + 1) * w + (c - char_lens[i]);
        const double tv = scores[i] + value[rest];
        const std::size_t tc = char_lens[i] + chars[rest];
        if (!detail::better(bv, bc, tv, tc)) {
          bv = tv;
          bc = tc;
          take[i * w + c] = 1;
        }
      }
      value[i * w + c] = bv;
      chars[i * w + c] = bc;
    }
  }
  std::vector<std::size_t> kept;
  std::size_t c = budget;
  for (std::size_t i = 0; i < n; ++i) {
    if (take[i * w + c]) {
      kept.push_back(i);
      c -= char_lens[i];
    }
  }
  return make_selection(scores, char_lens, std::move(kept));
}

inline constexpr std::size_t kBruteForceLimit = 20;

// Exhaustive search with the same objective and tie-breaking as the DP.
inline Selection knapsack_bruteforce(std::span<const double> scores,
                                     std::span<const std::size_t> char_lens,
                                     std::size_t budget) {
  detail::check_knapsack_input(scores, char_lens);
  const std::size_t n = scores.size();
  if (n > kBruteForceLimit) {
    throw ValidationError("knapsack_bruteforce: n = " + std::to_string(n) + " exceeds " +
                          std::to_string(kBruteForceLimit));
  }
  std::vector<std::size_t> best_set;
  double best_value = 0.0;
  std::size_t best_chars = 0;
  std::vector<std::size_t> set;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    set.clear();
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) {
        set.push_back(i);
        total += char_lens[i];
      }
    }
    if (total > budget) continue;
    const double v = selection_value(scores, set);
    const bool wins = detail::better(v, total, best_value, best_chars) ||
                      (v == best_value && total == best_chars && set < best_set);
    if (wins) {
      best_set = set;
      best_value = v;
      best_chars = total;
    }
  }
  return make_selection(scores, char_lens, std::move(best_set));
}

// Kept surfaces joined in title order.
inline std::string render_short_title(const Selection& sel,
                                      const std::vector<std::string>& words,
                                      const std::string& separator = "") {
  std::string out;
  for (std::size_t k = 0; k < sel.kept.size(); ++k) {
    if (k) out += separator;
    out += words.at(sel.kept[k]);
  }
  return out;
}

inline std::vector<std::string> kept_words(const Selection& sel,
                                           const std::vector<std::string>& words) {
  std::vector<std::string> out;
  for (std::size_t i : sel.kept) out.push_back(words.at(i));
  return out;
}

}  // namespace shorttitle
