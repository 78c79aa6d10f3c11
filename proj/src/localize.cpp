#include "wtal/localize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "wtal/errors.hpp"
#include "wtal/eval.hpp"

namespace wtal {

std::vector<double> fuse_scores(std::span<const double> class_probs,
                                std::span<const double> attention, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw InvalidArgument("fuse_scores: epsilon must lie in [0, 1], got " +
                          std::to_string(epsilon));
  }
  if (class_probs.size() != attention.size()) {
    throw ShapeError("fuse_scores: score and attention lengths differ");
  }
  std::vector<double> out(class_probs.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t] = epsilon * class_probs[t] + (1.0 - epsilon) * attention[t];
  }
  return out;
}

std::vector<std::size_t> predict_classes(std::span<const double> p_fg, double rho) {
  if (p_fg.size() < 2) throw InvalidArgument("predict_classes: need at least one action class");
  const std::size_t actions = p_fg.size() - 1;
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < actions; ++c) {
    if (p_fg[c] >= rho) out.push_back(c);
  }
  if (out.empty()) {
    const auto best = std::max_element(p_fg.begin(), p_fg.begin() + actions) - p_fg.begin();
    out.push_back(static_cast<std::size_t>(best));
  }
  return out;
}

std::vector<ActionProposal> threshold_proposals(std::span<const double> scores,
                                                std::span<const double> thresholds,
                                                std::size_t cls) {
  if (thresholds.empty()) throw InvalidArgument("threshold_proposals: no thresholds given");
  std::vector<ActionProposal> out;
  for (double theta : thresholds) {
    std::size_t t = 0;
    while (t < scores.size()) {
      if (!(scores[t] >= theta)) {
        ++t;
        continue;
      }
      const std::size_t start = t;
      while (t < scores.size() && scores[t] >= theta) ++t;
      auto same = std::find_if(out.begin(), out.end(), [&](const ActionProposal& p) {
        return p.start == start && p.end == t;
      });
      if (same == out.end()) {
        out.push_back({cls, 0.0, start, t, theta});
      } else {
        same->source_threshold = std::min(same->source_threshold, theta);
      }
    }
  }
  return out;
}

double score_proposal(std::span<const double> scores, std::size_t start, std::size_t end) {
  if (end <= start) throw InvalidArgument("score_proposal: empty segment");
  if (end > scores.size()) throw InvalidArgument("score_proposal: segment exceeds sequence");
  const std::size_t len = end - start;
  const std::size_t margin = std::max<std::size_t>(1, (len + 3) / 4);
  double inner = 0.0;
  for (std::size_t t = start; t < end; ++t) inner += scores[t];
  inner /= static_cast<double>(len);

  const std::size_t left = start >= margin ? start - margin : 0;
  const std::size_t right = std::min(scores.size(), end + margin);
  double outer = 0.0;
  std::size_t n = 0;
  for (std::size_t t = left; t < start; ++t, ++n) outer += scores[t];
  for (std::size_t t = end; t < right; ++t, ++n) outer += scores[t];
  if (n == 0) return inner;
  return inner - outer / static_cast<double>(n);
}

bool proposal_order(const ActionProposal& a, const ActionProposal& b) noexcept {
  return std::make_tuple(-a.confidence, a.start, a.cls, a.end) <
         std::make_tuple(-b.confidence, b.start, b.cls, b.end);
}

std::vector<ActionProposal> nms(std::vector<ActionProposal> proposals, double iou_threshold) {
  std::sort(proposals.begin(), proposals.end(), proposal_order);
  std::vector<ActionProposal> kept;
  for (const auto& p : proposals) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const ActionProposal& k) {
      return k.cls == p.cls &&
             temporal_iou({static_cast<double>(k.start), static_cast<double>(k.end)},
                          {static_cast<double>(p.start), static_cast<double>(p.end)}) >
                 iou_threshold;
    });
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

std::vector<ActionProposal> localize_video(const Matrix& x_rgb, const Matrix& x_flow,
                                           const ModelParams& params, const Hyperparams& hyper) {
  const auto fwd = forward(x_rgb, x_flow, params, NormMode::Standard);
  const auto& branch = fwd.branch;
  const std::size_t length = branch.length();
  const std::size_t outputs = params.shape().outputs();
  Matrix probs(length, outputs);
  for (std::size_t t = 0; t < length; ++t) {
    const auto p = softmax(branch.cas.row(t));
    std::copy(p.begin(), p.end(), probs.row(t).begin());
  }

  std::vector<ActionProposal> candidates;
  std::vector<double> class_probs(length);
  for (std::size_t c : predict_classes(fwd.pooled.p_fg, hyper.rho_cls)) {
    for (std::size_t t = 0; t < length; ++t) class_probs[t] = probs(t, c);
    const auto scores = fuse_scores(class_probs, branch.attention, hyper.epsilon);
    for (auto p : threshold_proposals(scores, hyper.proposal_thresholds, c)) {
      p.confidence = score_proposal(scores, p.start, p.end);
      candidates.push_back(p);
    }
  }
  return nms(std::move(candidates), hyper.nms_iou);
}

std::vector<ProposalRecord> localize_dataset(const Dataset& dataset, const ModelParams& params,
                                             const Hyperparams& hyper) {
  std::vector<ProposalRecord> out;
  for (const auto& v : dataset.videos) {
    for (const auto& p : localize_video(v.rgb, v.flow, params, hyper)) {
      out.push_back({v.id, p});
    }
  }
  return out;
}

std::string format_proposals(std::span<const ProposalRecord> records,
                             const std::optional<Timing>& timing) {
  std::string out = timing ? "# video_id class confidence start end start_s end_s\n"
                           : "# video_id class confidence start end\n";
  char buf[160];
  for (const auto& r : records) {
    const auto& p = r.proposal;
    out += r.video_id;
    std::snprintf(buf, sizeof buf, " %zu %.6f %zu %zu", p.cls, p.confidence, p.start, p.end);
    out += buf;
    if (timing) {
      const double sps = timing->seconds_per_snippet();
      std::snprintf(buf, sizeof buf, " %.3f %.3f", static_cast<double>(p.start) * sps,
                    static_cast<double>(p.end) * sps);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::vector<ProposalRecord> parse_proposals(const std::string& text) {
  std::vector<ProposalRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    ProposalRecord r;
    auto& p = r.proposal;
    if (!(fields >> r.video_id >> p.cls >> p.confidence >> p.start >> p.end) ||
        p.end <= p.start) {
      throw InvalidArgument("proposal file line " + std::to_string(line_no) + " is malformed");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_proposals(const std::filesystem::path& path, std::span<const ProposalRecord> records,
                     const std::optional<Timing>& timing) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << format_proposals(records, timing);
}

std::vector<ProposalRecord> read_proposals(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_proposals(buf.str());
}

}  // namespace wtal
