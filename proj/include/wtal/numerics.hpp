#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace wtal {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
bool all_finite(std::span<const double> values) noexcept;

std::vector<double> softmax(std::span<const double> logits);
// log(sum(exp(v))) computed with max-subtraction.
double log_sum_exp(std::span<const double> v);
std::vector<double> log_softmax(std::span<const double> logits);

double sigmoid(double x) noexcept;

/// Mirror index into [0, n) without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) noexcept;

struct SmoothingConfig {
  double sigma = 1.0;
  std::size_t radius = 2;
};

/// Normalized taps exp(-d^2 / 2 sigma^2) for d in [-radius, radius].
std::vector<double> gaussian_kernel(const SmoothingConfig& config);

/// Temporal Gaussian smoothing with reflect padding. Linear in `seq`.
std::vector<double> gaussian_smooth(std::span<const double> seq, const SmoothingConfig& config);

/// Adjoint of gaussian_smooth; used when gradients flow through the smoothing operator.
std::vector<double> gaussian_smooth_adjoint(std::span<const double> seq,
                                            const SmoothingConfig& config);

/// Adam moments plus the step-decay schedule parameters.
struct OptimizerState {
  std::size_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  double learning_rate = 1e-3;
  // Fraction of the run after which the rate drops to its second-stage value.
  double decay_fraction = 0.5;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  OptimizerState() = default;
  OptimizerState(std::size_t num_params, double learning_rate, double weight_decay);
};

/// One bias-corrected Adam update with decoupled weight decay (w -= lr*wd*w first).
void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state);

/// Constant `initial` for the first decay_fraction*total steps, then `decayed`.
double scheduled_rate(double initial, double decayed, double decay_fraction, std::size_t step,
                      std::size_t total_steps) noexcept;

/// Rescales `grads` so its L2 norm is at most max_norm. max_norm <= 0 disables clipping.
double clip_global_norm(std::span<double> grads, double max_norm);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central-difference gradient: (f(w+eps)-f(w-eps)) / 2eps per coordinate.
std::vector<double> finite_diff_grad(const ScalarFunction& loss_fn, std::span<const double> params,
                                     double epsilon = 1e-5);

/// |a-b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor) noexcept;

/// Seeded generator whose derived distributions are platform-independent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); n must be positive.
  std::size_t below(std::size_t n);
  // Inclusive integer range.
  std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace wtal
