#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace wtal::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Default config file when --config is not given.
inline constexpr const char* kConfigEnv = "WTAL_CONFIG";

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace wtal::cli
