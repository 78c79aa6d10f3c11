#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wtal/localize.hpp"
#include "wtal/synth.hpp"

namespace wtal {

struct Segment {
  double start = 0.0;
  double end = 0.0;  // exclusive, end > start
};

double temporal_iou(const Segment& a, const Segment& b);

struct Detection {
  std::size_t video = 0;  // index into the evaluated dataset
  double confidence = 0.0;
  Segment segment;
};

struct GroundTruth {
  std::size_t video = 0;
  Segment segment;
};

/// Precision-at-TP average precision for one class. Detections are ranked by confidence
/// (ties: earlier start, then lower video index); each is a true positive when its
/// best-IoU still-unmatched ground truth in the same video reaches the threshold.
/// Returns nullopt when there are no ground truths.
std::optional<double> average_precision(std::vector<Detection> detections,
                                        std::span<const GroundTruth> truths,
                                        double iou_threshold);

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> map;                                 // per threshold
  std::vector<std::vector<std::optional<double>>> class_ap;  // [threshold][class]
  std::vector<std::size_t> skipped_classes;                // classes without ground truth

  // Mean mAP over the thresholds lying in [lo, hi] (inclusive, 1e-9 slack).
  double average(double lo, double hi) const;
  double map_at(double threshold) const;
};

std::vector<double> default_iou_thresholds();

EvalReport evaluate(std::span<const ProposalRecord> proposals, const Dataset& dataset,
                    std::span<const double> iou_thresholds);

/// Arithmetic mean of several reports over identical thresholds and classes.
EvalReport average_reports(std::span<const EvalReport> reports);

/// CSV rows "iou,class,ap" followed by a summary block of mAP per threshold and the
/// (0.1:0.5), (0.3:0.7), (0.1:0.7) averages.
std::string format_report(const EvalReport& report);

}  // namespace wtal
