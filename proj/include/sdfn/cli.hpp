#pragma once

#include <string>
#include <vector>

#include "sdfn/config.hpp"

namespace sdfn {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNoCheckpoint = 3;
inline constexpr int kExitNumerics = 4;

/// One row of the ablation grid: a name plus the overrides it applies on top
/// of the base config.
struct AblationVariant {
  std::string name;
  std::vector<std::string> overrides;
};

std::vector<AblationVariant> ablation_variants();
/// Accepts the "no-rsm" alias for "no-rcm". Raises ConfigError on unknown names.
AblationVariant find_variant(const std::string& name);
TrainConfig apply_variant(TrainConfig base, const AblationVariant& variant);

/// Entry point of the `sdfn` tool; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace sdfn
