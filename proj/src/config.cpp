#include "wtal/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "wtal/errors.hpp"

namespace wtal {

namespace {

struct Where {
  const std::string& source;
  std::size_t line;
  std::string_view key;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(source + ":" + std::to_string(line) + ": " + std::string(key) + ": " + what);
  }
};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(std::string_view v, const Where& w) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) w.fail("expected a number, got \"" + std::string(v) + "\"");
  return out;
}

std::uint64_t to_uint(std::string_view v, const Where& w) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    w.fail("expected a non-negative integer, got \"" + std::string(v) + "\"");
  }
  return out;
}

bool to_bool(std::string_view v, const Where& w) {
  static const std::set<std::string_view> yes{"true", "yes", "on", "1"};
  static const std::set<std::string_view> no{"false", "no", "off", "0"};
  if (yes.contains(v)) return true;
  if (no.contains(v)) return false;
  w.fail("expected true or false, got \"" + std::string(v) + "\"");
}

std::vector<double> to_list(std::string_view v, const Where& w) {
  std::vector<double> out;
  while (true) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    if (item.empty()) w.fail("empty list item");
    out.push_back(to_double(item, w));
    if (comma == std::string_view::npos) break;
    v = v.substr(comma + 1);
  }
  return out;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // prefer the short spelling when it reads back identically
  char shorter[40];
  std::snprintf(shorter, sizeof shorter, "%g", v);
  return std::stod(shorter) == v ? shorter : buf;
}

std::string list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + num(v[i]);
  return out;
}

Timing& timing_of(ToolConfig& c) {
  if (!c.synth.timing) c.synth.timing = Timing{};
  return *c.synth.timing;
}

struct Entry {
  std::string_view section;
  std::string_view key;
  std::function<void(ToolConfig&, std::string_view, const Where&)> set;
  std::function<std::string(const ToolConfig&)> get;  // empty result: omitted from output
};

#define WTAL_SIZE(sec, name, field)                                                            \
  Entry {                                                                                      \
    sec, #name,                                                                                \
        [](ToolConfig& c, std::string_view v, const Where& w) {                                \
          c.field = static_cast<std::size_t>(to_uint(v, w));                                   \
        },                                                                                     \
        [](const ToolConfig& c) { return std::to_string(c.field); }                            \
  }
#define WTAL_REAL(sec, name, field)                                                   \
  Entry {                                                                             \
    sec, #name,                                                                       \
        [](ToolConfig& c, std::string_view v, const Where& w) { c.field = to_double(v, w); }, \
        [](const ToolConfig& c) { return num(c.field); }                             \
  }
#define WTAL_BOOL(sec, name, field)                                                  \
  Entry {                                                                            \
    sec, #name,                                                                      \
        [](ToolConfig& c, std::string_view v, const Where& w) { c.field = to_bool(v, w); }, \
        [](const ToolConfig& c) { return std::string(c.field ? "true" : "false"); } \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      WTAL_SIZE("synth", num_classes, synth.num_classes),
      WTAL_SIZE("synth", feature_dim, synth.feature_dim),
      WTAL_SIZE("synth", min_length, synth.min_length),
      WTAL_SIZE("synth", max_length, synth.max_length),
      WTAL_SIZE("synth", min_instances, synth.min_instances),
      WTAL_SIZE("synth", max_instances, synth.max_instances),
      WTAL_SIZE("synth", min_instance_length, synth.min_instance_length),
      WTAL_SIZE("synth", max_instance_length, synth.max_instance_length),
      WTAL_SIZE("synth", min_gap, synth.min_gap),
      WTAL_REAL("synth", prototype_scale, synth.prototype_scale),
      WTAL_REAL("synth", motion_scale, synth.motion_scale),
      WTAL_REAL("synth", confound_strength, synth.confound_strength),
      WTAL_REAL("synth", noise_sigma, synth.noise_sigma),
      WTAL_REAL("synth", multi_class_prob, synth.multi_class_prob),
      WTAL_SIZE("synth", num_train, synth.num_train),
      WTAL_SIZE("synth", num_test, synth.num_test),
      Entry{"synth", "seed",
            [](ToolConfig& c, std::string_view v, const Where& w) { c.synth.seed = to_uint(v, w); },
            [](const ToolConfig& c) { return std::to_string(c.synth.seed); }},
      Entry{"synth", "fps",
            [](ToolConfig& c, std::string_view v, const Where& w) {
              timing_of(c).fps = to_double(v, w);
            },
            [](const ToolConfig& c) { return c.synth.timing ? num(c.synth.timing->fps) : ""; }},
      Entry{"synth", "frames_per_snippet",
            [](ToolConfig& c, std::string_view v, const Where& w) {
              timing_of(c).frames_per_snippet = to_double(v, w);
            },
            [](const ToolConfig& c) {
              return c.synth.timing ? num(c.synth.timing->frames_per_snippet) : "";
            }},

      WTAL_SIZE("model", embed_dim, run.hyper.embed_dim),
      WTAL_SIZE("model", kernel_size, run.hyper.kernel_size),

      WTAL_REAL("loss", lambda, run.hyper.lambda),
      WTAL_REAL("loss", beta, run.hyper.beta),
      WTAL_SIZE("loss", k, run.hyper.k),
      WTAL_REAL("loss", bvl_weight, run.hyper.bvl_weight),
      WTAL_REAL("loss", smoothing_sigma, run.hyper.smoothing.sigma),
      WTAL_SIZE("loss", smoothing_radius, run.hyper.smoothing.radius),
      WTAL_BOOL("loss", full_consistency_backprop, run.hyper.full_consistency_backprop),

      Entry{"train", "mode",
            [](ToolConfig& c, std::string_view v, const Where& w) {
              try {
                c.run.mode = parse_grad_mode(v);
              } catch (const InvalidArgument& e) {
                w.fail(e.what());
              }
            },
            [](const ToolConfig& c) { return std::string(to_string(c.run.mode)); }},
      WTAL_BOOL("train", ten, run.use_ten),
      WTAL_SIZE("train", iterations, run.hyper.iterations),
      WTAL_REAL("train", learning_rate, run.learning_rate),
      WTAL_REAL("train", final_learning_rate, run.final_learning_rate),
      WTAL_REAL("train", decay_fraction, run.decay_fraction),
      WTAL_REAL("train", weight_decay, run.weight_decay),
      WTAL_SIZE("train", batch_size, run.batch_size),
      Entry{"train", "seed",
            [](ToolConfig& c, std::string_view v, const Where& w) { c.run.seed = to_uint(v, w); },
            [](const ToolConfig& c) { return std::to_string(c.run.seed); }},
      WTAL_REAL("train", grad_clip, run.grad_clip),
      WTAL_SIZE("train", workers, run.workers),
      WTAL_SIZE("train", checkpoint_every, run.checkpoint_every),

      WTAL_REAL("localize", epsilon, run.hyper.epsilon),
      WTAL_REAL("localize", rho_cls, run.hyper.rho_cls),
      WTAL_REAL("localize", nms_iou, run.hyper.nms_iou),
      Entry{"localize", "proposal_thresholds",
            [](ToolConfig& c, std::string_view v, const Where& w) {
              c.run.hyper.proposal_thresholds = to_list(v, w);
            },
            [](const ToolConfig& c) { return list(c.run.hyper.proposal_thresholds); }},

      Entry{"eval", "iou_thresholds",
            [](ToolConfig& c, std::string_view v, const Where& w) {
              c.iou_thresholds = to_list(v, w);
            },
            [](const ToolConfig& c) { return list(c.iou_thresholds); }},

      WTAL_SIZE("ablate", seeds, ablation_seeds),
  };
  return table;
}

#undef WTAL_SIZE
#undef WTAL_REAL
#undef WTAL_BOOL

std::string full_name(const Entry& e) {
  return std::string(e.section) + "." + std::string(e.key);
}

void check(const ToolConfig& c, const std::string& source) {
  auto bad = [&](const std::string& what) { throw ConfigError(source + ": " + what); };
  if (c.synth.timing && !(c.synth.timing->fps > 0.0 && c.synth.timing->frames_per_snippet > 0.0)) {
    bad("synth.fps and synth.frames_per_snippet must both be given and positive");
  }
  if (c.run.hyper.k == 0) bad("loss.k must be >= 1");
  if (c.run.hyper.kernel_size % 2 == 0) bad("model.kernel_size must be odd");
  if (c.run.batch_size == 0) bad("train.batch_size must be >= 1");
  if (c.run.hyper.epsilon < 0.0 || c.run.hyper.epsilon > 1.0) bad("localize.epsilon must lie in [0, 1]");
  if (c.run.hyper.lambda < 0.0) bad("loss.lambda must be >= 0");
  if (c.run.hyper.smoothing.sigma <= 0.0) bad("loss.smoothing_sigma must be > 0");
  if (c.run.decay_fraction < 0.0 || c.run.decay_fraction > 1.0) {
    bad("train.decay_fraction must lie in [0, 1]");
  }
  if (c.ablation_seeds == 0) bad("ablate.seeds must be >= 1");
}

}  // namespace

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& e : entries()) out.push_back(full_name(e));
  return out;
}

std::string nearest_key(std::string_view key) {
  const auto dot = key.find('.');
  const auto bare = dot == std::string_view::npos ? key : key.substr(dot + 1);
  std::size_t best = std::numeric_limits<std::size_t>::max();
  std::string out;
  for (const auto& e : entries()) {
    const std::size_t d = dot == std::string_view::npos ? edit_distance(bare, e.key)
                                                        : edit_distance(key, full_name(e));
    if (d < best) {
      best = d;
      out = full_name(e);
    }
  }
  return out;
}

ToolConfig parse_config(std::string_view text, const std::string& source) {
  ToolConfig config;
  std::string section;
  std::set<std::string> seen;
  std::set<std::string_view> sections;
  for (const auto& e : entries()) sections.insert(e.section);

  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find_first_of("#;"); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (!sections.contains(section)) {
        std::string names;
        for (auto s : sections) names += (names.empty() ? "" : ", ") + std::string(s);
        throw ConfigError(where + "unknown section [" + section + "]; valid sections: " + names);
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    if (section.empty()) {
      throw ConfigError(where + "key \"" + std::string(key) +
                        "\" appears before any [section]; did you mean " + nearest_key(key) + "?");
    }
    const auto& table = entries();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Entry& e) {
      return e.section == section && e.key == key;
    });
    if (it == table.end()) {
      throw ConfigError(where + "unknown key \"" + section + "." + std::string(key) +
                        "\"; nearest valid key is \"" + nearest_key(key) + "\"");
    }
    const auto name = full_name(*it);
    if (!seen.insert(name).second) throw ConfigError(where + "duplicate key \"" + name + "\"");
    if (value.empty()) throw ConfigError(where + "key \"" + name + "\" has no value");
    it->set(config, value, Where{source, line_no, name});
  }
  check(config, source);
  return config;
}

ToolConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string format_config(const ToolConfig& config) {
  std::string out;
  std::string_view section;
  for (const auto& e : entries()) {
    if (e.section != section) {
      section = e.section;
      out += (out.empty() ? "[" : "\n[") + std::string(section) + "]\n";
    }
    const auto value = e.get(config);
    if (value.empty()) {
      out += "# " + std::string(e.key) + " = (unset)\n";
    } else {
      out += std::string(e.key) + " = " + value + "\n";
    }
  }
  return out;
}

}  // namespace wtal
