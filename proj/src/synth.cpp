#include "wtal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "wtal/binary_io.hpp"
#include "wtal/errors.hpp"

namespace wtal {

namespace {

constexpr std::string_view kDatasetMagic = "WTALDS01";
constexpr std::uint32_t kDatasetVersion = 1;

Matrix draw_prototypes(std::size_t rows, std::size_t dim, double scale, Rng& rng) {
  Matrix out(rows, dim);
  for (double& v : out.data()) v = scale * rng.normal();
  return out;
}

std::string video_id(const char* split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu", split, index);
  return buf;
}

VideoRecord make_video(const SynthConfig& cfg, const Prototypes& protos, std::string id,
                       Rng& rng) {
  const std::size_t length = rng.between(cfg.min_length, cfg.max_length);
  const std::size_t count = rng.between(cfg.min_instances, cfg.max_instances);
  const std::size_t primary = rng.below(cfg.num_classes);

  std::vector<std::size_t> lengths(count);
  std::size_t action_total = 0;
  for (auto& l : lengths) {
    l = rng.between(cfg.min_instance_length, cfg.max_instance_length);
    action_total += l;
  }
  // every gap (before, between, after) keeps at least min_gap background snippets
  const std::size_t spare = length - action_total - (count + 1) * cfg.min_gap;
  std::vector<std::size_t> cuts(count);
  for (auto& c : cuts) c = rng.below(spare + 1);
  std::sort(cuts.begin(), cuts.end());

  VideoRecord video;
  video.id = std::move(id);
  video.label.assign(cfg.num_classes, false);
  std::size_t cursor = 0;
  std::size_t previous_cut = 0;
  for (std::size_t j = 0; j < count; ++j) {
    cursor += cfg.min_gap + (cuts[j] - previous_cut);
    previous_cut = cuts[j];
    std::size_t cls = primary;
    if (cfg.num_classes > 1 && rng.uniform() < cfg.multi_class_prob) {
      cls = (primary + 1 + rng.below(cfg.num_classes - 1)) % cfg.num_classes;
    }
    video.instances.push_back({cls, cursor, cursor + lengths[j]});
    video.label[cls] = true;
    cursor += lengths[j];
  }

  const std::size_t dim = cfg.feature_dim;
  const auto background = protos.statics.row(cfg.num_classes);
  const auto confound = protos.statics.row(primary);
  video.rgb = Matrix(length, dim);
  video.flow = Matrix(length, dim);
  std::vector<std::ptrdiff_t> owner(length, -1);
  for (const auto& inst : video.instances) {
    for (std::size_t t = inst.start; t < inst.end; ++t) {
      owner[t] = static_cast<std::ptrdiff_t>(inst.cls);
    }
  }
  const double mix = cfg.confound_strength;
  for (std::size_t t = 0; t < length; ++t) {
    auto rgb = video.rgb.row(t);
    auto flow = video.flow.row(t);
    if (owner[t] >= 0) {
      const auto cls = static_cast<std::size_t>(owner[t]);
      const auto s = protos.statics.row(cls);
      const auto m = protos.motions.row(cls);
      for (std::size_t d = 0; d < dim; ++d) rgb[d] = s[d] + cfg.noise_sigma * rng.normal();
      for (std::size_t d = 0; d < dim; ++d) flow[d] = m[d] + cfg.noise_sigma * rng.normal();
    } else {
      for (std::size_t d = 0; d < dim; ++d) {
        rgb[d] = mix * confound[d] + (1.0 - mix) * background[d] + cfg.noise_sigma * rng.normal();
      }
      for (std::size_t d = 0; d < dim; ++d) flow[d] = cfg.noise_sigma * rng.normal();
    }
  }
  return video;
}

std::size_t label_bytes(std::size_t num_classes) { return (num_classes + 7) / 8; }

}  // namespace

void validate(const SynthConfig& cfg) {
  auto fail = [](const std::string& why) { throw InvalidArgument("synth config: " + why); };
  if (cfg.num_classes == 0) fail("num_classes must be >= 1");
  if (cfg.feature_dim == 0) fail("feature_dim must be >= 1");
  if (cfg.min_length == 0 || cfg.min_length > cfg.max_length) fail("invalid length range");
  if (cfg.min_instances == 0 || cfg.min_instances > cfg.max_instances) {
    fail("invalid instance count range");
  }
  if (cfg.min_instance_length == 0 || cfg.min_instance_length > cfg.max_instance_length) {
    fail("invalid instance length range");
  }
  if (cfg.min_gap == 0) fail("min_gap must be >= 1");
  const std::size_t worst =
      cfg.max_instances * cfg.max_instance_length + (cfg.max_instances + 1) * cfg.min_gap;
  if (worst > cfg.min_length) {
    fail("instances do not fit: " + std::to_string(cfg.max_instances) + " instances of up to " +
         std::to_string(cfg.max_instance_length) + " snippets plus background gaps need " +
         std::to_string(worst) + " snippets but min_length is " +
         std::to_string(cfg.min_length));
  }
  if (cfg.confound_strength < 0.0 || cfg.confound_strength > 1.0) {
    fail("confound_strength must lie in [0, 1]");
  }
  if (cfg.noise_sigma < 0.0) fail("noise_sigma must be >= 0");
  if (cfg.multi_class_prob < 0.0 || cfg.multi_class_prob > 1.0) {
    fail("multi_class_prob must lie in [0, 1]");
  }
  if (cfg.timing && !(cfg.timing->fps > 0.0 && cfg.timing->frames_per_snippet > 0.0)) {
    fail("timing needs positive fps and frames_per_snippet");
  }
}

SynthOutput generate(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  SynthOutput out;
  out.prototypes.statics = draw_prototypes(cfg.num_classes + 1, cfg.feature_dim,
                                           cfg.prototype_scale, rng);
  out.prototypes.motions = draw_prototypes(cfg.num_classes, cfg.feature_dim, cfg.motion_scale,
                                           rng);
  for (Dataset* ds : {&out.train, &out.test}) {
    ds->num_classes = cfg.num_classes;
    ds->feature_dim = cfg.feature_dim;
    ds->timing = cfg.timing;
  }
  for (std::size_t i = 0; i < cfg.num_train; ++i) {
    out.train.videos.push_back(make_video(cfg, out.prototypes, video_id("train", i), rng));
  }
  for (std::size_t i = 0; i < cfg.num_test; ++i) {
    out.test.videos.push_back(make_video(cfg, out.prototypes, video_id("test", i), rng));
  }
  return out;
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  io::ByteWriter w;
  w.magic(kDatasetMagic);
  const std::size_t payload = w.size();
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  w.u32(static_cast<std::uint32_t>(ds.feature_dim));
  w.u64(ds.videos.size());
  if (ds.timing) {
    w.u32(16);
    w.f64(ds.timing->fps);
    w.f64(ds.timing->frames_per_snippet);
  } else {
    w.u32(0);
  }
  for (const auto& v : ds.videos) {
    if (v.rgb.cols() != ds.feature_dim || v.flow.cols() != ds.feature_dim ||
        v.rgb.rows() != v.flow.rows() || v.label.size() != ds.num_classes) {
      throw ShapeError("video " + v.id + " does not match dataset shape");
    }
    w.string(v.id);
    w.u32(static_cast<std::uint32_t>(v.length()));
    std::vector<std::uint8_t> mask(label_bytes(ds.num_classes), 0);
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      if (v.label[c]) mask[c / 8] |= static_cast<std::uint8_t>(1u << (c % 8));
    }
    w.bytes(mask);
    w.u32(static_cast<std::uint32_t>(v.instances.size()));
    for (const auto& inst : v.instances) {
      w.u32(static_cast<std::uint32_t>(inst.cls));
      w.u32(static_cast<std::uint32_t>(inst.start));
      w.u32(static_cast<std::uint32_t>(inst.end));
    }
    w.f64s(v.rgb.data());
    w.f64s(v.flow.data());
  }
  w.crc_from(payload);
  return w.take();
}

Dataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic(kDatasetMagic);
  const std::size_t payload = r.offset();
  const std::size_t version_at = r.offset();
  const auto version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version), version_at);
  }
  Dataset ds;
  ds.num_classes = r.u32();
  ds.feature_dim = r.u32();
  const std::size_t count_at = r.offset();
  const auto count = r.u64();
  if (ds.num_classes == 0 || ds.feature_dim == 0) {
    throw FormatError("dataset header has zero classes or feature dimension", version_at + 4);
  }
  const std::size_t ext_at = r.offset();
  const auto ext_len = r.u32();
  if (ext_len == 16) {
    Timing timing;
    timing.fps = r.f64();
    timing.frames_per_snippet = r.f64();
    if (!(timing.fps > 0.0 && timing.frames_per_snippet > 0.0)) {
      throw FormatError("timing extension must be positive", ext_at + 4);
    }
    ds.timing = timing;
  } else if (ext_len != 0) {
    throw FormatError("unknown header extension of " + std::to_string(ext_len) + " bytes",
                      ext_at);
  }
  // every video occupies at least its fixed-size fields; reject absurd counts early
  if (count > r.remaining()) {
    throw FormatError("video count " + std::to_string(count) + " exceeds file size", count_at);
  }
  ds.videos.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    VideoRecord v;
    v.id = r.string();
    const std::size_t length_at = r.offset();
    const std::size_t length = r.u32();
    if (length == 0) throw FormatError("video " + v.id + " has zero snippets", length_at);
    const std::size_t mask_at = r.offset();
    const auto mask = r.bytes(label_bytes(ds.num_classes));
    v.label.assign(ds.num_classes, false);
    for (std::size_t b = 0; b < mask.size() * 8; ++b) {
      const bool bit = (mask[b / 8] >> (b % 8)) & 1u;
      if (b < ds.num_classes) {
        v.label[b] = bit;
      } else if (bit) {
        throw FormatError("label bit set beyond class count", mask_at + b / 8);
      }
    }
    const auto instances = r.u32();
    std::vector<bool> union_label(ds.num_classes, false);
    for (std::uint32_t j = 0; j < instances; ++j) {
      const std::size_t inst_at = r.offset();
      Instance inst;
      inst.cls = r.u32();
      inst.start = r.u32();
      inst.end = r.u32();
      if (inst.cls >= ds.num_classes || inst.end <= inst.start || inst.end > length) {
        throw FormatError("invalid instance in video " + v.id, inst_at);
      }
      union_label[inst.cls] = true;
      v.instances.push_back(inst);
    }
    if (instances > 0 && union_label != v.label) {
      throw FormatError("label of video " + v.id + " is not the union of its instances",
                        mask_at);
    }
    if (length * ds.feature_dim * 2 * sizeof(double) > r.remaining()) {
      throw FormatError("truncated feature block in video " + v.id, r.offset());
    }
    v.rgb = Matrix(length, ds.feature_dim);
    v.flow = Matrix(length, ds.feature_dim);
    r.f64s(v.rgb.data());
    r.f64s(v.flow.data());
    ds.videos.push_back(std::move(v));
  }
  r.verify_crc_from(payload);
  r.expect_end();
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  io::write_file(path, serialize_dataset(dataset));
}

Dataset read_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(io::read_file(path));
}

std::uint32_t dataset_checksum(const Dataset& dataset) {
  return io::crc32(serialize_dataset(dataset));
}

}  // namespace wtal
