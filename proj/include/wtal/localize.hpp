#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wtal/model.hpp"
#include "wtal/synth.hpp"

namespace wtal {

struct ActionProposal {
  std::size_t cls = 0;
  double confidence = 0.0;
  std::size_t start = 0;  // inclusive snippet index
  std::size_t end = 0;    // exclusive
  double source_threshold = 0.0;
  bool operator==(const ActionProposal&) const = default;
};

/// S_l = eps * ybar_c + (1 - eps) * a.
std::vector<double> fuse_scores(std::span<const double> class_probs,
                                std::span<const double> attention, double epsilon);

/// Action classes whose video probability reaches rho; falls back to the best action class.
std::vector<std::size_t> predict_classes(std::span<const double> p_fg, double rho);

/// Maximal runs with score >= theta for each theta, pooled; identical (start, end)
/// candidates keep the lowest source threshold. Confidence is left at zero.
std::vector<ActionProposal> threshold_proposals(std::span<const double> scores,
                                                std::span<const double> thresholds,
                                                std::size_t cls);

/// Outer-inner contrast: inner mean minus the mean over margins of max(1, ceil(len/4))
/// on both sides, clipped to the sequence.
double score_proposal(std::span<const double> scores, std::size_t start, std::size_t end);

/// Confidence descending, then earlier start, then lower class, then earlier end.
bool proposal_order(const ActionProposal& a, const ActionProposal& b) noexcept;

/// Greedy per-class suppression of proposals whose IoU with a kept one exceeds the threshold.
std::vector<ActionProposal> nms(std::vector<ActionProposal> proposals, double iou_threshold);

/// Base-branch inference on one video with Standard pooling.
std::vector<ActionProposal> localize_video(const Matrix& x_rgb, const Matrix& x_flow,
                                           const ModelParams& params, const Hyperparams& hyper);

struct ProposalRecord {
  std::string video_id;
  ActionProposal proposal;
  bool operator==(const ProposalRecord&) const = default;
};

std::vector<ProposalRecord> localize_dataset(const Dataset& dataset, const ModelParams& params,
                                             const Hyperparams& hyper);

// One whitespace-separated line per proposal:
//   video_id class confidence(6 dp) start end [start_seconds end_seconds]
// Lines starting with '#' are comments.
void write_proposals(const std::filesystem::path& path, std::span<const ProposalRecord> records,
                     const std::optional<Timing>& timing);
std::vector<ProposalRecord> read_proposals(const std::filesystem::path& path);
std::string format_proposals(std::span<const ProposalRecord> records,
                             const std::optional<Timing>& timing);
std::vector<ProposalRecord> parse_proposals(const std::string& text);

}  // namespace wtal
