#pragma once

// Straight-line reference implementations of the evaluation metrics. They use
// only vectors and nested loops so they share no code with src/metrics.cpp.

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace guidedial::oracle {

using Words = std::vector<std::string>;

inline Words slice(const Words& w, size_t i, int n) {
  return Words(w.begin() + static_cast<long>(i), w.begin() + static_cast<long>(i) + n);
}

inline std::vector<Words> all_ngrams(const Words& w, int n) {
  std::vector<Words> out;
  for (size_t i = 0; i + static_cast<size_t>(n) <= w.size(); ++i) out.push_back(slice(w, i, n));
  return out;
}

// Greedy one-to-one matching; equivalent to the multiset intersection size.
inline long matched_count(const std::vector<Words>& cand, const std::vector<Words>& ref) {
  std::vector<bool> used(ref.size(), false);
  long matched = 0;
  for (const auto& g : cand) {
    for (size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && ref[j] == g) {
        used[j] = true;
        ++matched;
        break;
      }
    }
  }
  return matched;
}

inline double f1(const Words& a, const Words& b) {
  if (a.empty() || b.empty()) return 0.0;
  const long common = matched_count(all_ngrams(a, 1), all_ngrams(b, 1));
  if (common == 0) return 0.0;
  const double p = double(common) / double(a.size());
  const double r = double(common) / double(b.size());
  return 2 * p * r / (p + r);
}

inline double bleu(const Words& cand, const Words& ref, int max_n) {
  if (cand.empty()) return 0.0;
  double product = 1.0;
  for (int n = 1; n <= max_n; ++n) {
    auto c = all_ngrams(cand, n);
    long m = matched_count(c, all_ngrams(ref, n));
    double p = m > 0 ? double(m) / double(c.size()) : 1.0 / double(c.size() + 1);
    product *= p;
  }
  double bp = 1.0;
  if (cand.size() <= ref.size()) bp = std::exp(1.0 - double(ref.size()) / double(cand.size()));
  return bp * std::pow(product, 1.0 / max_n);
}

// Returns {unique, total} so callers can compare the exact fraction.
inline std::pair<long, long> distinct_counts(const std::vector<Words>& corpus, int n) {
  std::vector<Words> seen;
  long total = 0;
  for (const auto& utt : corpus) {
    for (const auto& g : all_ngrams(utt, n)) {
      ++total;
      bool found = false;
      for (const auto& s : seen) found = found || s == g;
      if (!found) seen.push_back(g);
    }
  }
  return {static_cast<long>(seen.size()), total};
}

inline double perplexity(const std::vector<std::vector<double>>& nlls) {
  double sum = 0.0;
  long n = 0;
  for (const auto& l : nlls) {
    for (double v : l) {
      sum += v;
      ++n;
    }
  }
  return std::exp(sum / double(n));
}

inline bool contains_run(const Words& hay, const Words& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  for (size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    bool all = true;
    for (size_t j = 0; j < needle.size(); ++j) all = all && hay[i + j] == needle[j];
    if (all) return true;
  }
  return false;
}

inline Words split_spaces(const std::string& s) {
  Words out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::string join_spaces(const Words& w) {
  std::string out;
  for (size_t i = 0; i < w.size(); ++i) out += (i ? " " : "") + w[i];
  return out;
}

// Random lowercase sentences over a small alphabet, so overlaps and prefixes are common.
inline Words random_words(std::mt19937_64& rng, int min_len, int max_len) {
  static const Words alphabet{"a", "ab", "b", "ba", "c", "cab", "d", "the", "movie", "qimo"};
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<size_t> pick(0, alphabet.size() - 1);
  Words w(static_cast<size_t>(len(rng)));
  for (auto& t : w) t = alphabet[pick(rng)];
  return w;
}

}  // namespace guidedial::oracle
