#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wtal/numerics.hpp"

namespace wtal {

struct Instance {
  std::size_t cls = 0;
  std::size_t start = 0;  // snippet index, inclusive
  std::size_t end = 0;    // exclusive
  bool operator==(const Instance&) const = default;
};

struct VideoRecord {
  std::string id;
  Matrix rgb;                     // T x D
  Matrix flow;                    // T x D
  std::vector<bool> label;        // C action flags
  std::vector<Instance> instances;  // evaluation only

  std::size_t length() const noexcept { return rgb.rows(); }
  bool operator==(const VideoRecord&) const = default;
};

struct Timing {
  double fps = 0.0;
  double frames_per_snippet = 0.0;
  double seconds_per_snippet() const noexcept { return frames_per_snippet / fps; }
  bool operator==(const Timing&) const = default;
};

struct Dataset {
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::optional<Timing> timing;
  std::vector<VideoRecord> videos;
  bool operator==(const Dataset&) const = default;
};

struct SynthConfig {
  std::size_t num_classes = 5;
  std::size_t feature_dim = 32;
  std::size_t min_length = 60;
  std::size_t max_length = 120;
  std::size_t min_instances = 1;
  std::size_t max_instances = 3;
  std::size_t min_instance_length = 8;
  std::size_t max_instance_length = 16;
  std::size_t min_gap = 3;         // background snippets before, between and after instances
  double prototype_scale = 1.0;    // std-dev of static (rgb) prototype entries
  double motion_scale = 1.0;       // std-dev of motion (flow) prototype entries
  double confound_strength = 0.8;  // share of the video's class prototype in background rgb
  double noise_sigma = 2.0;
  double multi_class_prob = 0.0;   // chance an instance takes a class other than the video's
  std::size_t num_train = 200;
  std::size_t num_test = 60;
  std::uint64_t seed = 7;
  std::optional<Timing> timing;
};

struct Prototypes {
  Matrix statics;  // (C+1) x D, last row is the generic background appearance
  Matrix motions;  // C x D
};

struct SynthOutput {
  Dataset train;
  Dataset test;
  Prototypes prototypes;
};

void validate(const SynthConfig& config);
SynthOutput generate(const SynthConfig& config);

// Container "WTALDS01": u32 version, u32 C, u32 D, u64 count, u32 extension length +
// extension bytes (16: f64 fps, f64 frames per snippet), then per video: id, u32 T,
// label bitmask (ceil(C/8) bytes, LSB first), u32 instance count, (u32 class, u32 start,
// u32 end) per instance, rgb then flow as T x D float64 row-major. Trailing CRC32 covers
// everything after the magic.
std::vector<std::uint8_t> serialize_dataset(const Dataset& dataset);
Dataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);
std::uint32_t dataset_checksum(const Dataset& dataset);

/// What training is allowed to see of a video.
struct TrainingVideo {
  const std::string& id;
  const Matrix& rgb;
  const Matrix& flow;
  const std::vector<bool>& label;
};

/// Label-only view of a dataset; ground-truth segments are not reachable through it.
class TrainingView {
 public:
  explicit TrainingView(const Dataset& dataset) : dataset_(&dataset) {}

  std::size_t size() const noexcept { return dataset_->videos.size(); }
  std::size_t num_classes() const noexcept { return dataset_->num_classes; }
  std::size_t feature_dim() const noexcept { return dataset_->feature_dim; }
  TrainingVideo operator[](std::size_t i) const {
    const auto& v = dataset_->videos.at(i);
    return {v.id, v.rgb, v.flow, v.label};
  }

 private:
  const Dataset* dataset_;
};

}  // namespace wtal
