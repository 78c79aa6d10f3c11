#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wtal/model.hpp"

namespace wtal {

/// Treatment of the background-loss gradient.
enum class GradMode {
  Standard,     // exact gradient of the written losses
  Bges,         // exact gradient of the forward whose background aggregate is divided by N_f
  Grl,          // Standard, with the attention path of L_bg reversed
  Bvl,          // Standard plus the background-video loss
  BvlPlusBges,  // both of the above
};

std::string_view to_string(GradMode mode) noexcept;
GradMode parse_grad_mode(std::string_view name);
NormMode norm_mode_for(GradMode mode) noexcept;
bool uses_bvl(GradMode mode) noexcept;

inline constexpr double kLogFloor = 1e-12;

/// Multi-hot over C+1 with the background bit set; input is the C action flags.
std::vector<double> make_target(const std::vector<bool>& video_label);

double loss_fg(std::span<const double> p_fg, std::span<const double> label);
double loss_bg(std::span<const double> p_bg);
double loss_bvl(const Matrix& y);
double loss_att(std::span<const double> a, std::span<const double> a_tcb,
                const SmoothingConfig& smoothing);
double loss_kl(const Matrix& y, const Matrix& y_tcb);

struct LossBreakdown {
  double fg = 0.0;
  double bg = 0.0;
  double att = 0.0;
  double kl = 0.0;
  double bvl = 0.0;
  double total = 0.0;
};

/// The smoothed attentions and softened CAS that each branch is pulled towards.
/// Evaluating the consistency losses against frozen targets reproduces the
/// stop-gradient convention for finite differencing.
struct ConsistencyTargets {
  std::vector<double> smoothed_base;  // G(a)
  std::vector<double> smoothed_tcb;   // G(a^R)
  Matrix probs_base;                  // softmax rows of y
  Matrix probs_tcb;                   // softmax rows of y^R
};

ConsistencyTargets consistency_targets(const BranchOutputs& base, const BranchOutputs& tcb,
                                       const SmoothingConfig& smoothing);

/// L_all and its terms. `tcb` may be null (no continuity branch). When `frozen` is
/// given and stop-gradient is active, consistency terms measure the distance to it.
LossBreakdown compute_losses(const ForwardOutputs& base, const BranchOutputs* tcb,
                             std::span<const double> label, const Hyperparams& hyper,
                             GradMode mode, const ConsistencyTargets* frozen = nullptr);

/// Per-snippet background-loss terms on the attention path, already weighted by lambda.
/// `fused[i]` is d(lambda L_bg)/d a_i; `logit[m][i]` is its share at modality m's
/// attention logit (the scalar multiplying X_e,i in the attention-weight gradient).
/// The `_bg_channel` variants keep only the background-class component.
struct BackgroundFactors {
  std::vector<double> fused;
  std::vector<double> fused_bg_channel;
  std::array<std::vector<double>, 2> logit;
  std::array<std::vector<double>, 2> logit_bg_channel;
};

struct GradientReport {
  ModelParams grads;
  BackgroundFactors background;
};

struct BackwardResult {
  GradientReport report;
  LossBreakdown losses;
};

struct BackwardOptions {
  // Test hook for the gradient checker: flips the sign of flow.att_weight.
  bool inject_sign_bug = false;
};

BackwardResult backward(const ForwardOutputs& base, const BranchOutputs* tcb,
                        const ModelParams& params, std::span<const double> label,
                        const Hyperparams& hyper, GradMode mode,
                        const BackwardOptions& options = {});

// Closed-form background-channel factors at modality m's attention logit, evaluated on
// a forward's own pooled quantities (N = that forward's background normalizer):
//   difference form: w (1-P_bg^bg)/(-2) * ( y_bg - y_i^bg)/N * a_m,i (1-a_m,i)
//   enhanced form:   w (1-P_bg^bg)/(-2) * (-y_bg - y_i^bg)/N * a_m,i (1-a_m,i)
// where y_bg is the pooled background aggregate's background entry.
std::vector<double> difference_closed_form(const ForwardOutputs& fwd, Modality m, double weight);
std::vector<double> enhanced_closed_form(const ForwardOutputs& fwd, Modality m, double weight);
// The per-snippet amount the enhanced form adds over the difference form:
//   w (1-P_bg^bg) * y_bg / N * a_m,i (1-a_m,i)
std::vector<double> enhancement_increment(const ForwardOutputs& fwd, Modality m, double weight);

}  // namespace wtal
