#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "wtal/synth.hpp"
#include "wtal/trainer.hpp"

namespace wtal {

struct ToolConfig {
  SynthConfig synth;
  RunConfig run;
  std::vector<double> iou_thresholds = default_iou_thresholds();
  std::size_t ablation_seeds = 5;
};

/// Grammar, one item per line:
///   [section]        section header
///   key = value      assignment inside the current section
///   # or ;           comment to end of line; blank lines ignored
/// Lists are comma-separated, booleans are true/false/yes/no/on/off/1/0.
/// Unknown keys, duplicates and keys outside a section raise ConfigError.
ToolConfig parse_config(std::string_view text, const std::string& source = "<config>");
ToolConfig load_config(const std::filesystem::path& path);

/// Every accepted key as "section.key", in documentation order.
std::vector<std::string> config_keys();

/// The accepted key closest to `key` by edit distance, as "section.key".
std::string nearest_key(std::string_view key);

/// Serializes every key; parse_config(format_config(c)) reproduces c.
std::string format_config(const ToolConfig& config);

std::size_t edit_distance(std::string_view a, std::string_view b);

}  // namespace wtal
