#pragma once

// Brute-force reference implementations used as test oracles. They share no
// code with the library and favour obviousness over speed.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline double brier(const std::vector<double>& p, const std::vector<int>& y) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - y[i]) * (p[i] - y[i]);
  return s / static_cast<double>(p.size());
}

inline double base_rate(const std::vector<int>& y) {
  double s = 0;
  for (int v : y) s += v;
  return s / static_cast<double>(y.size());
}

// Buckets by explicit interval membership rather than floor arithmetic.
inline double ece(const std::vector<double>& p, const std::vector<int>& y, int m) {
  double total = 0;
  const double n = static_cast<double>(p.size());
  for (int b = 0; b < m; ++b) {
    const double lo = static_cast<double>(b) / m, hi = static_cast<double>(b + 1) / m;
    double sp = 0, sy = 0;
    int count = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool in = p[i] >= lo && (b == m - 1 ? p[i] <= hi : p[i] < hi);
      if (in) {
        sp += p[i];
        sy += y[i];
        ++count;
      }
    }
    if (count) total += (count / n) * std::abs(sy / count - sp / count);
  }
  return total;
}

// Pairwise comparison over every positive/negative pair.
inline double auc(const std::vector<double>& p, const std::vector<int>& y) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (y[j]) continue;
      pairs += 1;
      if (p[i] > p[j]) wins += 1;
      else if (p[i] == p[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

struct Block {
  std::size_t a, b, size;
};

// Longest common run in the window by exhaustive search. Ties go to the
// smallest a, then the smallest b.
inline Block longest(const std::vector<std::string>& a, const std::vector<std::string>& b,
                     std::size_t alo, std::size_t ahi, std::size_t blo, std::size_t bhi) {
  Block best{alo, blo, 0};
  for (std::size_t i = alo; i < ahi; ++i)
    for (std::size_t j = blo; j < bhi; ++j) {
      std::size_t k = 0;
      while (i + k < ahi && j + k < bhi && a[i + k] == b[j + k]) ++k;
      if (k > best.size) best = {i, j, k};
    }
  return best;
}

inline void blocks_rec(const std::vector<std::string>& a, const std::vector<std::string>& b,
                       std::size_t alo, std::size_t ahi, std::size_t blo, std::size_t bhi,
                       std::vector<Block>& out) {
  const Block m = longest(a, b, alo, ahi, blo, bhi);
  if (m.size == 0) return;
  blocks_rec(a, b, alo, m.a, blo, m.b, out);
  out.push_back(m);
  blocks_rec(a, b, m.a + m.size, ahi, m.b + m.size, bhi, out);
}

// Per solution token: kept when inside a matched block and not the first
// token of a block whose gap in b (since the previous block) is non-empty
// while the gap in a is empty.
inline std::vector<bool> kept(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<Block> raw;
  blocks_rec(a, b, 0, a.size(), 0, b.size(), raw);
  std::vector<Block> bl;
  for (const Block& m : raw) {
    if (!bl.empty() && bl.back().a + bl.back().size == m.a && bl.back().b + bl.back().size == m.b)
      bl.back().size += m.size;
    else
      bl.push_back(m);
  }
  std::vector<bool> out(a.size(), false);
  std::size_t pa = 0, pb = 0;
  for (const Block& m : bl) {
    const bool pure_insert = m.a == pa && m.b > pb;
    for (std::size_t t = 0; t < m.size; ++t) out[m.a + t] = true;
    if (pure_insert) out[m.a] = false;
    pa = m.a + m.size;
    pb = m.b + m.size;
  }
  return out;
}

// Reconstructs b by walking matched blocks and copying the gaps from b.
inline std::vector<std::string> rebuild(const std::vector<std::string>& a,
                                        const std::vector<std::string>& b) {
  std::vector<Block> bl;
  blocks_rec(a, b, 0, a.size(), 0, b.size(), bl);
  std::vector<std::string> out;
  std::size_t pb = 0;
  for (const Block& m : bl) {
    for (std::size_t j = pb; j < m.b; ++j) out.push_back(b[j]);
    for (std::size_t t = 0; t < m.size; ++t) out.push_back(a[m.a + t]);
    pb = m.b + m.size;
  }
  for (std::size_t j = pb; j < b.size(); ++j) out.push_back(b[j]);
  return out;
}

// One-way ANOVA share from group sums written out longhand.
inline double eta_squared(const std::vector<std::string>& level, const std::vector<double>& v) {
  std::map<std::string, std::vector<double>> groups;
  for (std::size_t i = 0; i < v.size(); ++i) groups[level[i]].push_back(v[i]);
  double grand = 0;
  for (double x : v) grand += x;
  grand /= static_cast<double>(v.size());
  double between = 0, within = 0;
  for (const auto& [k, g] : groups) {
    double mean = 0;
    for (double x : g) mean += x;
    mean /= static_cast<double>(g.size());
    between += static_cast<double>(g.size()) * (mean - grand) * (mean - grand);
    for (double x : g) within += (x - mean) * (x - mean);
  }
  return between / (between + within);
}

// Naive triple-loop product.
inline Eigen::MatrixXd matmul(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), w.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index k = 0; k < x.cols(); ++k) out(i, j) += x(i, k) * w(k, j);
  return out;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace oracle
