#pragma once

// Plain-loop reimplementation of the selector forward passes and losses.
// Reads weights element by element and never calls Eigen arithmetic.

#include "bestview/selector/model.hpp"

#include <cmath>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline Vec dense(const bestview::selector::Dense& d, const Vec& x) {
  Vec y(static_cast<std::size_t>(d.w.rows()));
  for (Eigen::Index r = 0; r < d.w.rows(); ++r) {
    long double acc = d.b(r);
    for (Eigen::Index c = 0; c < d.w.cols(); ++c) acc += static_cast<long double>(d.w(r, c)) * x[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = static_cast<double>(acc);
  }
  return y;
}

inline Vec tanh_all(Vec v) {
  for (auto& x : v) x = std::tanh(x);
  return v;
}

inline Vec row(const Eigen::MatrixXd& m, Eigen::Index r) {
  Vec v;
  for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
  return v;
}

inline Vec view_logits(const bestview::selector::SelectorParams& p, const Eigen::MatrixXd& f) {
  Vec x;
  for (Eigen::Index n = 0; n < f.rows(); ++n) {
    const Vec h = dense(p.proj_w(), row(f, n));
    x.insert(x.end(), h.begin(), h.end());
  }
  return dense(p.head_w2(), tanh_all(dense(p.head_w1(), x)));
}

inline Vec pose_logits(const bestview::selector::SelectorParams& p, const Vec& fi, const Vec& fj) {
  Vec x = dense(p.proj_p(), fi);
  const Vec g = dense(p.proj_p(), fj);
  x.insert(x.end(), g.begin(), g.end());
  return dense(p.head_p2(), tanh_all(dense(p.head_p1(), x)));
}

// -log softmax(v)[k] over v[begin, begin + len), computed without max shift.
inline long double ce(const Vec& v, std::size_t begin, std::size_t len, std::size_t k) {
  long double z = 0;
  for (std::size_t i = 0; i < len; ++i) z += std::exp(static_cast<long double>(v[begin + i]));
  return std::log(z) - v[begin + k];
}

// Literal double sum over pairs and heads with the 1/N^2 prefactor.
inline long double pose_loss(const std::vector<Vec>& pair_logits, const std::vector<std::array<int, 5>>& labels,
                             const std::array<int, 5>& classes, std::size_t n) {
  long double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double pair = 0;
      std::size_t off = 0;
      for (std::size_t h = 0; h < 5; ++h) {
        pair += ce(pair_logits[i * n + j], off, static_cast<std::size_t>(classes[h]),
                   static_cast<std::size_t>(labels[i * n + j][h]));
        off += static_cast<std::size_t>(classes[h]);
      }
      total += pair / 5;
    }
  }
  return total / static_cast<long double>(n * n);
}

}  // namespace oracle
