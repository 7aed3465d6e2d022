#pragma once

// Naive scalar-loop reference implementations. Nothing here calls into the
// library; Eigen types are only unpacked into nested vectors.

#include "mgalign/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using Row = std::vector<double>;
using Table = std::vector<Row>;

inline Table table(const mgalign::Mat& m) {
  Table t(static_cast<std::size_t>(m.rows()), Row(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[i][j] = m(i, j);
  return t;
}

inline Row row(const mgalign::Vec& v) {
  Row r(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) r[i] = v(i);
  return r;
}

inline double dot(const Row& a, const Row& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(const Row& a, const Row& b) {
  return dot(a, b) / (std::sqrt(dot(a, a)) * std::sqrt(dot(b, b)));
}

inline Row softmax(const Row& x) {
  double hi = x[0];
  for (double v : x) hi = std::max(hi, v);
  Row out(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - hi);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

inline Table matmul(const Table& a, const Table& b) {
  Table c(a.size(), Row(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Table cross_attention(const Table& q, const Table& k, const Table& v) {
  const std::size_t d = q[0].size();
  Table out(q.size(), Row(v[0].size(), 0.0));
  for (std::size_t m = 0; m < q.size(); ++m) {
    Row logits(k.size());
    for (std::size_t p = 0; p < k.size(); ++p) logits[p] = dot(q[m], k[p]) / std::sqrt(static_cast<double>(d));
    const Row w = softmax(logits);
    for (std::size_t p = 0; p < k.size(); ++p)
      for (std::size_t j = 0; j < v[0].size(); ++j) out[m][j] += w[p] * v[p][j];
  }
  return out;
}

inline Table augment(const Table& tokens, const std::vector<Table>& subtexts, const Table& wq,
                     const Table& wk, const Table& wv) {
  Table sources;
  for (const auto& s : subtexts)
    for (const auto& r : s) sources.push_back(r);
  Table out = cross_attention(matmul(tokens, wq), matmul(sources, wk), matmul(sources, wv));
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] += tokens[i][j];
  return out;
}

inline Row coarse_importance(const Table& t_hat, const Table& frames) {
  Row a(frames.size(), 0.0);
  for (const auto& tok : t_hat) {
    Row sims(frames.size());
    for (std::size_t l = 0; l < frames.size(); ++l) sims[l] = cosine(tok, frames[l]);
    const Row w = softmax(sims);
    for (std::size_t l = 0; l < frames.size(); ++l) a[l] += w[l];
  }
  return a;
}

inline Row fine_importance(const std::vector<Table>& subtexts, const Table& frames) {
  Row score(frames.size());
  for (std::size_t l = 0; l < frames.size(); ++l) {
    double best = -1e300;
    for (const auto& s : subtexts) {
      double mean = 0.0;
      for (const auto& tok : s) mean += cosine(tok, frames[l]);
      best = std::max(best, mean / static_cast<double>(s.size()));
    }
    score[l] = best;
  }
  return softmax(score);
}

inline Row weighted_sum(const Table& frames, const Row& a) {
  Row o(frames[0].size(), 0.0);
  for (std::size_t l = 0; l < frames.size(); ++l)
    for (std::size_t j = 0; j < o.size(); ++j) o[j] += a[l] * frames[l][j];
  return o;
}

/// weight is out x in.
inline Row affine(const Table& weight, const Row& bias, const Row& x) {
  Row y(bias);
  for (std::size_t i = 0; i < weight.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) y[i] += weight[i][j] * x[j];
  return y;
}

inline double tpp(const Row& global, const std::vector<Row>& subs, double eps) {
  const std::size_t n = subs.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sigma = (cosine(global, subs[i]) + 1.0) / 2.0;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) mean += (cosine(subs[i], subs[j]) + 1.0) / 2.0;
    const double delta = 1.0 - mean / static_cast<double>(n - 1);
    acc += std::log(std::clamp(sigma, eps, 1.0) * std::clamp(delta, eps, 1.0));
  }
  return std::exp(-acc / static_cast<double>(n));
}

inline double loss_t2v(const Table& y, const std::vector<int>& labels) {
  const std::size_t b = y.size();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const int c = labels[i];
    double denom = 0.0;
    for (std::size_t j = 0; j < b; ++j) denom += std::exp(y[j][c]);
    double inner = 0.0;
    int count = 0;
    for (std::size_t j = 0; j < b; ++j) {
      if (labels[j] != c) continue;
      inner += std::log(std::exp(y[j][c]) / denom);
      ++count;
    }
    total += inner / count;
  }
  return -total / static_cast<double>(b);
}

inline double loss_v2t(const Table& y, const std::vector<int>& labels) {
  const std::size_t b = y.size();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const int c = labels[i];
    double inner = 0.0;
    int count = 0;
    for (std::size_t j = 0; j < b; ++j) {
      if (labels[j] != c) continue;
      double denom = 0.0;
      for (double v : y[j]) denom += std::exp(v);
      inner += std::log(std::exp(y[j][c]) / denom);
      ++count;
    }
    total += inner / count;
  }
  return -total / static_cast<double>(b);
}

// ---- random instances -------------------------------------------------------------

inline mgalign::Mat random_mat(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  mgalign::Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline mgalign::Vec random_vec(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> d(0.0, 1.0);
  mgalign::Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

inline int random_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline mgalign::TextTokens random_text(std::mt19937_64& rng, int tokens, int dim) {
  return {random_mat(rng, tokens, dim), random_vec(rng, dim)};
}

inline double max_abs_diff(const Row& a, const Row& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Table& a, const Table& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, max_abs_diff(a[i], b[i]));
  return m;
}

}  // namespace oracle
