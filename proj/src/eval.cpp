#include "wtal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <tuple>
#include <unordered_map>

#include "wtal/errors.hpp"

namespace wtal {

double temporal_iou(const Segment& a, const Segment& b) {
  if (!(a.end > a.start) || !(b.end > b.start)) {
    throw InvalidArgument("temporal_iou: degenerate segment");
  }
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return inter / uni;
}

std::optional<double> average_precision(std::vector<Detection> detections,
                                        std::span<const GroundTruth> truths,
                                        double iou_threshold) {
  if (truths.empty()) return std::nullopt;
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) {
                     return std::make_tuple(-a.confidence, a.segment.start, a.video,
                                            a.segment.end) <
                            std::make_tuple(-b.confidence, b.segment.start, b.video,
                                            b.segment.end);
                   });
  std::unordered_map<std::size_t, std::vector<std::size_t>> by_video;
  for (std::size_t g = 0; g < truths.size(); ++g) by_video[truths[g].video].push_back(g);
  std::vector<bool> matched(truths.size(), false);

  double sum_precision = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < detections.size(); ++k) {
    const auto& det = detections[k];
    auto it = by_video.find(det.video);
    if (it == by_video.end()) continue;
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g : it->second) {
      if (matched[g]) continue;
      const double iou = temporal_iou(det.segment, truths[g].segment);
      if (iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best >= iou_threshold) {
      matched[best_g] = true;
      ++tp;
      sum_precision += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  return sum_precision / static_cast<double>(truths.size());
}

double EvalReport::average(double lo, double hi) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] >= lo - 1e-9 && thresholds[i] <= hi + 1e-9) {
      sum += map[i];
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double EvalReport::map_at(double threshold) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (std::abs(thresholds[i] - threshold) < 1e-9) return map[i];
  }
  throw InvalidArgument("report has no IoU threshold " + std::to_string(threshold));
}

std::vector<double> default_iou_thresholds() {
  return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
}

EvalReport evaluate(std::span<const ProposalRecord> proposals, const Dataset& dataset,
                    std::span<const double> iou_thresholds) {
  const std::size_t classes = dataset.num_classes;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t v = 0; v < dataset.videos.size(); ++v) index[dataset.videos[v].id] = v;

  std::vector<std::vector<Detection>> dets(classes);
  for (const auto& r : proposals) {
    auto it = index.find(r.video_id);
    if (it == index.end()) {
      throw InvalidArgument("proposal references unknown video \"" + r.video_id + "\"");
    }
    if (r.proposal.cls >= classes) {
      throw InvalidArgument("proposal for video \"" + r.video_id + "\" has class " +
                            std::to_string(r.proposal.cls) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
    dets[r.proposal.cls].push_back({it->second, r.proposal.confidence,
                                    {static_cast<double>(r.proposal.start),
                                     static_cast<double>(r.proposal.end)}});
  }
  std::vector<std::vector<GroundTruth>> truths(classes);
  for (std::size_t v = 0; v < dataset.videos.size(); ++v) {
    for (const auto& inst : dataset.videos[v].instances) {
      truths[inst.cls].push_back(
          {v, {static_cast<double>(inst.start), static_cast<double>(inst.end)}});
    }
  }

  EvalReport report;
  report.thresholds.assign(iou_thresholds.begin(), iou_thresholds.end());
  for (std::size_t c = 0; c < classes; ++c) {
    if (truths[c].empty()) report.skipped_classes.push_back(c);
  }
  for (double thr : iou_thresholds) {
    std::vector<std::optional<double>> aps(classes);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      aps[c] = average_precision(dets[c], truths[c], thr);
      if (aps[c]) {
        sum += *aps[c];
        ++n;
      }
    }
    report.map.push_back(n == 0 ? 0.0 : sum / static_cast<double>(n));
    report.class_ap.push_back(std::move(aps));
  }
  return report;
}

EvalReport average_reports(std::span<const EvalReport> reports) {
  if (reports.empty()) throw InvalidArgument("average_reports: no reports");
  EvalReport out = reports.front();
  const double n = static_cast<double>(reports.size());
  for (std::size_t i = 0; i < out.thresholds.size(); ++i) {
    double sum = 0.0;
    for (const auto& r : reports) {
      if (r.thresholds.size() != out.thresholds.size()) {
        throw InvalidArgument("average_reports: threshold sets differ");
      }
      sum += r.map[i];
    }
    out.map[i] = sum / n;
    for (std::size_t c = 0; c < out.class_ap[i].size(); ++c) {
      if (!out.class_ap[i][c]) continue;
      double s = 0.0;
      for (const auto& r : reports) s += r.class_ap[i][c].value_or(0.0);
      out.class_ap[i][c] = s / n;
    }
  }
  return out;
}

std::string format_report(const EvalReport& report) {
  std::string out = "iou,class,ap\n";
  char buf[128];
  for (std::size_t i = 0; i < report.thresholds.size(); ++i) {
    for (std::size_t c = 0; c < report.class_ap[i].size(); ++c) {
      if (!report.class_ap[i][c]) continue;
      std::snprintf(buf, sizeof buf, "%.2f,%zu,%.6f\n", report.thresholds[i], c,
                    *report.class_ap[i][c]);
      out += buf;
    }
  }
  out += "\n# summary (mAP %)\n";
  for (double t : report.thresholds) {
    std::snprintf(buf, sizeof buf, "mAP@%.1f,", t);
    out += buf;
  }
  out += "AVG(0.1:0.5),AVG(0.3:0.7),AVG(0.1:0.7)\n";
  for (double m : report.map) {
    std::snprintf(buf, sizeof buf, "%.2f,", 100.0 * m);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%.2f,%.2f,%.2f\n", 100.0 * report.average(0.1, 0.5),
                100.0 * report.average(0.3, 0.7), 100.0 * report.average(0.1, 0.7));
  out += buf;
  if (!report.skipped_classes.empty()) {
    out += "# classes without ground truth (skipped):";
    for (std::size_t c : report.skipped_classes) out += " " + std::to_string(c);
    out += "\n";
  }
  return out;
}

}  // namespace wtal
