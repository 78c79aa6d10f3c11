#include "wtal/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "wtal/errors.hpp"

namespace wtal {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data has " + std::to_string(data_.size()) + " values, expected " +
                     std::to_string(rows * cols));
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

bool all_finite(std::span<const double> values) noexcept {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("log_sum_exp: empty input");
  const double peak = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - peak);
  return peak + std::log(sum);
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidArgument("softmax: empty input");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& v : out) v -= lse;
  return out;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) noexcept {
  if (n <= 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t r = i % period;
  if (r < 0) r += period;
  if (r >= static_cast<std::ptrdiff_t>(n)) r = period - r;
  return static_cast<std::size_t>(r);
}

std::vector<double> gaussian_kernel(const SmoothingConfig& config) {
  if (!(config.sigma > 0.0) || !std::isfinite(config.sigma)) {
    throw InvalidArgument("gaussian_smooth: sigma must be positive, got " +
                          std::to_string(config.sigma));
  }
  const auto radius = static_cast<std::ptrdiff_t>(config.radius);
  std::vector<double> taps;
  taps.reserve(2 * config.radius + 1);
  double sum = 0.0;
  for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
    const double w = std::exp(-static_cast<double>(d * d) / (2.0 * config.sigma * config.sigma));
    taps.push_back(w);
    sum += w;
  }
  for (double& w : taps) w /= sum;
  return taps;
}

std::vector<double> gaussian_smooth(std::span<const double> seq, const SmoothingConfig& config) {
  const auto taps = gaussian_kernel(config);
  if (seq.empty()) throw InvalidArgument("gaussian_smooth: empty sequence");
  const auto radius = static_cast<std::ptrdiff_t>(config.radius);
  std::vector<double> out(seq.size(), 0.0);
  // offsets from the centre value, so constant stretches come back bit-exact
  for (std::size_t t = 0; t < seq.size(); ++t) {
    double acc = 0.0;
    for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
      acc += taps[static_cast<std::size_t>(d + radius)] *
             (seq[reflect_index(static_cast<std::ptrdiff_t>(t) + d, seq.size())] - seq[t]);
    }
    out[t] = seq[t] + acc;
  }
  return out;
}

std::vector<double> gaussian_smooth_adjoint(std::span<const double> seq,
                                            const SmoothingConfig& config) {
  const auto taps = gaussian_kernel(config);
  if (seq.empty()) throw InvalidArgument("gaussian_smooth: empty sequence");
  const auto radius = static_cast<std::ptrdiff_t>(config.radius);
  std::vector<double> out(seq.size(), 0.0);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
      out[reflect_index(static_cast<std::ptrdiff_t>(t) + d, seq.size())] +=
          taps[static_cast<std::size_t>(d + radius)] * seq[t];
    }
  }
  return out;
}

OptimizerState::OptimizerState(std::size_t num_params, double rate, double decay)
    : first_moment(num_params, 0.0),
      second_moment(num_params, 0.0),
      learning_rate(rate),
      weight_decay(decay) {}

void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw InvalidArgument("adam_step: params (" + std::to_string(params.size()) + "), grads (" +
                          std::to_string(grads.size()) + ") and moments (" +
                          std::to_string(state.first_moment.size()) + ") differ in size");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const double lr = state.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    params[i] -= lr * state.weight_decay * params[i];
    params[i] -= lr * (m / correction1) / (std::sqrt(v / correction2) + state.epsilon);
  }
}

double scheduled_rate(double initial, double decayed, double decay_fraction, std::size_t step,
                      std::size_t total_steps) noexcept {
  const double boundary = decay_fraction * static_cast<double>(total_steps);
  return static_cast<double>(step) < boundary ? initial : decayed;
}

double clip_global_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

std::vector<double> finite_diff_grad(const ScalarFunction& loss_fn, std::span<const double> params,
                                     double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("finite_diff_grad: epsilon must be positive");
  std::vector<double> point(params.begin(), params.end());
  std::vector<double> grad(point.size(), 0.0);
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double original = point[i];
    point[i] = original + epsilon;
    const double up = loss_fn(point);
    point[i] = original - epsilon;
    const double down = loss_fn(point);
    point[i] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite loss at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

double relative_error(double a, double b, double floor) noexcept {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw InvalidArgument("Rng::below: empty range");
  const std::uint64_t bound = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % bound);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

}  // namespace wtal
