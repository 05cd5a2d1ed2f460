#pragma once

// Deliberately naive reference implementations. Nothing here shares code with
// the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace oracle {

// --- strings ------------------------------------------------------------------

inline std::u32string u32(const std::string& s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = c < 0x80 ? 0 : (c >> 5) == 6 ? 1 : (c >> 4) == 14 ? 2 : 3;
    char32_t cp = extra == 0 ? c : extra == 1 ? (c & 0x1F) : extra == 2 ? (c & 0x0F) : (c & 0x07);
    for (int k = 1; k <= extra; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    out += cp;
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

// Cosine over explicit bigram count maps, dot product by nested loops.
inline double bigram_cosine(const std::string& a8, const std::string& b8) {
  const auto a = u32(a8), b = u32(b8);
  std::vector<std::u32string> ba, bb;
  for (std::size_t i = 0; i + 1 < a.size(); ++i) ba.push_back(a.substr(i, 2));
  for (std::size_t i = 0; i + 1 < b.size(); ++i) bb.push_back(b.substr(i, 2));
  if (ba.empty() || bb.empty()) return 0.0;
  double dot = 0;
  for (const auto& x : ba)
    for (const auto& y : bb)
      if (x == y) dot += 1;
  double na = 0, nb = 0;
  for (const auto& x : ba)
    for (const auto& y : ba)
      if (x == y) na += 1;
  for (const auto& x : bb)
    for (const auto& y : bb)
      if (x == y) nb += 1;
  return dot / std::sqrt(na * nb);
}

// Matching blocks by brute-force search: for every (i, j) measure the run
// directly; keep the longest, earliest in a, then earliest in b.
template <typename S>
std::size_t matched_chars(const S& a, std::size_t alo, std::size_t ahi, const S& b,
                          std::size_t blo, std::size_t bhi) {
  if (alo >= ahi || blo >= bhi) return 0;
  std::size_t bi = 0, bj = 0, bk = 0;
  for (std::size_t i = alo; i < ahi; ++i) {
    for (std::size_t j = blo; j < bhi; ++j) {
      std::size_t k = 0;
      while (i + k < ahi && j + k < bhi && a[i + k] == b[j + k]) ++k;
      if (k > bk) std::tie(bi, bj, bk) = std::tuple{i, j, k};
    }
  }
  if (bk == 0) return 0;
  return bk + matched_chars(a, alo, bi, b, blo, bj) + matched_chars(a, bi + bk, ahi, b, bj + bk, bhi);
}

template <typename S>
double gestalt(const S& a, const S& b) {
  if (a.empty() && b.empty()) return 1.0;
  return 2.0 * static_cast<double>(matched_chars(a, 0, a.size(), b, 0, b.size())) /
         static_cast<double>(a.size() + b.size());
}

// --- statistics -----------------------------------------------------------------

inline std::vector<double> ranks_with_ties(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double x : v) {
      if (x < v[i]) less += 1;
      if (x == v[i]) equal += 1;
    }
    r[i] = less + (equal + 1) / 2.0;
  }
  return r;
}

// Two-sided exact signed-rank p by listing all 2^n sign patterns.
inline double wilcoxon_enumerated(const std::vector<double>& deltas) {
  std::vector<double> mags;
  for (double d : deltas)
    if (d != 0) mags.push_back(std::abs(d));
  const auto ranks = ranks_with_ties(mags);
  double w_plus = 0, total = 0;
  std::size_t j = 0;
  for (double d : deltas) {
    if (d == 0) continue;
    total += ranks[j];
    if (d > 0) w_plus += ranks[j];
    ++j;
  }
  const double observed = std::min(w_plus, total - w_plus);
  const std::size_t n = mags.size();
  std::uint64_t hits = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) w += ranks[i];
    if (std::min(w, total - w) <= observed + 1e-9) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(std::uint64_t{1} << n);
}

// Tie-corrected Friedman statistic computed from the textbook formula.
inline double friedman_q(const std::vector<std::vector<double>>& m) {
  const double n = static_cast<double>(m.size()), k = static_cast<double>(m[0].size());
  std::vector<double> sums(m[0].size(), 0.0);
  double ties = 0;
  for (const auto& row : m) {
    const auto r = ranks_with_ties(row);
    for (std::size_t j = 0; j < r.size(); ++j) sums[j] += r[j];
    std::map<double, double> counts;
    for (double x : row) counts[x] += 1;
    for (const auto& [x, t] : counts) ties += t * t * t - t;
  }
  const double c = 1.0 - ties / (n * (k * k * k - k));
  if (c <= 1e-12) return 0.0;
  double ss = 0;
  for (double s : sums) ss += s * s;
  return (12.0 / (n * k * (k + 1)) * ss - 3 * n * (k + 1)) / c;
}

// Exact Friedman p: every one of the (k!)^n within-row arrangements.
inline double friedman_enumerated(const std::vector<std::vector<double>>& m) {
  const double observed = friedman_q(m);
  const std::size_t n = m.size(), k = m[0].size();
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::vector<std::size_t>> perms;
  do perms.push_back(idx);
  while (std::next_permutation(idx.begin(), idx.end()));
  std::uint64_t hits = 0, total = 0;
  std::vector<std::size_t> choice(n, 0);
  while (true) {
    std::vector<std::vector<double>> arranged(n, std::vector<double>(k));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < k; ++c) arranged[r][c] = m[r][perms[choice[r]][c]];
    ++total;
    if (friedman_q(arranged) >= observed - 1e-9) ++hits;
    std::size_t r = 0;
    while (r < n && ++choice[r] == perms.size()) choice[r++] = 0;
    if (r == n) break;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

struct Bh {
  std::vector<bool> rejected;
  std::vector<double> adjusted;
};

// Step-up by the textbook definition, adjusted p by the explicit min formula.
inline Bh benjamini_hochberg(const std::vector<double>& p, double q) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::size_t largest = 0;
  for (std::size_t i = 1; i <= m; ++i)
    if (p[order[i - 1]] <= static_cast<double>(i) * q / static_cast<double>(m)) largest = i;
  Bh out{std::vector<bool>(m, false), std::vector<double>(m, 1.0)};
  for (std::size_t i = 1; i <= largest; ++i) out.rejected[order[i - 1]] = true;
  for (std::size_t i = 1; i <= m; ++i) {
    double best = 1e300;
    for (std::size_t j = i; j <= m; ++j)
      best = std::min(best, static_cast<double>(m) * p[order[j - 1]] / static_cast<double>(j));
    out.adjusted[order[i - 1]] = std::min(1.0, best);
  }
  return out;
}

// Spearman with distinct values via 1 - 6 sum d^2 / (n(n^2-1)); exact p over
// all n! relabellings.
inline double spearman_distinct(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = ranks_with_ties(x), ry = ranks_with_ties(y);
  const double n = static_cast<double>(x.size());
  double d2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1));
}

inline double spearman_exact_p(const std::vector<double>& x, const std::vector<double>& y) {
  const double observed = std::abs(spearman_distinct(x, y));
  std::vector<std::size_t> idx(y.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::uint64_t hits = 0, total = 0;
  do {
    std::vector<double> permuted(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) permuted[i] = y[idx[i]];
    ++total;
    if (std::abs(spearman_distinct(x, permuted)) >= observed - 1e-12) ++hits;
  } while (std::next_permutation(idx.begin(), idx.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

// --- chains -----------------------------------------------------------------------

// Every root-to-node path of length >= 2, by recursive DFS over parent links.
inline std::set<std::vector<std::string>> all_paths(
    const std::vector<std::pair<std::string, std::string>>& id_parent) {
  std::set<std::string> ids;
  for (const auto& [id, parent] : id_parent) ids.insert(id);
  std::map<std::string, std::vector<std::string>> children;
  std::vector<std::string> roots;
  for (const auto& [id, parent] : id_parent) {
    if (parent.empty() || !ids.count(parent)) roots.push_back(id);
    else children[parent].push_back(id);
  }
  std::set<std::vector<std::string>> out;
  std::function<void(std::vector<std::string>&)> walk = [&](std::vector<std::string>& path) {
    if (path.size() >= 2) out.insert(path);
    for (const auto& c : children[path.back()]) {
      path.push_back(c);
      walk(path);
      path.pop_back();
    }
  };
  for (const auto& r : roots) {
    std::vector<std::string> path{r};
    walk(path);
  }
  return out;
}

}  // namespace oracle
