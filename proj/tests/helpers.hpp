#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "wtal/model.hpp"
#include "wtal/synth.hpp"

namespace testing_util {

inline wtal::Matrix random_features(std::size_t t, std::size_t d, wtal::Rng& rng,
                                    double scale = 1.0) {
  wtal::Matrix m(t, d);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

// Random weights and biases everywhere, so no block is trivially zero.
inline wtal::ModelParams random_params(const wtal::ModelShape& shape, wtal::Rng& rng,
                                       double scale = 0.5) {
  wtal::ModelParams p(shape);
  for (double& v : p.values()) v = scale * rng.normal();
  return p;
}

}  // namespace testing_util

namespace testing_util {

// Minimum-norm w with rows(A) . w = b, through the normal equations of A A^T.
inline std::vector<double> min_norm_solve(const wtal::Matrix& a, std::span<const double> b) {
  const std::size_t n = a.rows(), d = a.cols();
  wtal::Matrix g(n, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += a(i, k) * a(j, k);
      g(i, j) = s;
    }
    g(i, n) = b[i];
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(g(r, c)) > std::abs(g(piv, c))) piv = r;
    }
    for (std::size_t k = 0; k <= n; ++k) std::swap(g(c, k), g(piv, k));
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = g(r, c) / g(c, c);
      for (std::size_t k = c; k <= n; ++k) g(r, k) -= f * g(c, k);
    }
  }
  std::vector<double> w(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = g(i, n) / g(i, i);
    for (std::size_t k = 0; k < d; ++k) w[k] += y * a(i, k);
  }
  return w;
}

// Hand-built parameters that solve a noiseless, confound-free world exactly: the embedding
// (centre tap only) carries +x and -x through the ReLU, attention fires on any action
// prototype and the CAS picks out the snippet's own class. `gain` sets the logit scale.
inline wtal::ModelParams analytic_params(const wtal::Prototypes& protos, double gain = 40.0) {
  using namespace wtal;
  const std::size_t d = protos.statics.cols();
  const std::size_t c = protos.motions.rows();
  const ModelShape shape{d, 2 * d, c, 3};
  ModelParams p(shape);
  Matrix flow_rows(c + 1, d);  // background motion is the zero vector
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t k = 0; k < d; ++k) flow_rows(i, k) = protos.motions(i, k);
  }
  for (Modality m : kModalities) {
    const Matrix& rows = m == Modality::Rgb ? protos.statics : flow_rows;
    auto ew = p.block(m, ParamBlock::EmbedWeight);
    for (std::size_t k = 0; k < d; ++k) {
      ew[k * (d * 3) + k * 3 + 1] = 1.0;
      ew[(d + k) * (d * 3) + k * 3 + 1] = -1.0;
    }
    // signed read-out of a linear functional w . x from the split embedding
    auto put = [&](std::span<double> dst, std::size_t stride, std::size_t col,
                   const std::vector<double>& w) {
      for (std::size_t k = 0; k < d; ++k) {
        dst[k * stride + col] = w[k];
        dst[(d + k) * stride + col] = -w[k];
      }
    };
    std::vector<double> target(c + 1, 1.0);
    target[c] = 0.0;
    if (m == Modality::Rgb) {
      put(p.block(m, ParamBlock::AttWeight), 1, 0, min_norm_solve(rows, target));
    } else {
      // zero background row adds nothing to the least-squares system
      Matrix acts(c, d);
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t k = 0; k < d; ++k) acts(i, k) = rows(i, k);
      }
      const std::vector<double> ones(c, 1.0);
      put(p.block(m, ParamBlock::AttWeight), 1, 0, min_norm_solve(acts, ones));
    }
    p.block(m, ParamBlock::AttBias)[0] = -0.5 * gain;
    for (double& v : p.block(m, ParamBlock::AttWeight)) v *= gain;

    const std::size_t outs = c + 1;
    for (std::size_t cls = 0; cls < outs; ++cls) {
      std::vector<double> onehot(c + 1, 0.0);
      onehot[cls] = gain;
      std::vector<double> w;
      if (m == Modality::Rgb) {
        w = min_norm_solve(rows, onehot);
      } else if (cls < c) {
        Matrix acts(c, d);
        for (std::size_t i = 0; i < c; ++i) {
          for (std::size_t k = 0; k < d; ++k) acts(i, k) = rows(i, k);
        }
        w = min_norm_solve(acts, std::span<const double>(onehot).first(c));
      } else {
        w.assign(d, 0.0);
      }
      put(p.block(m, ParamBlock::ClsWeight), outs, cls, w);
    }
  }
  return p;
}

}  // namespace testing_util
