#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace chitchat::pipeline {

inline constexpr std::string_view kToolVersion = "0.1.0";

std::string sha256_hex(std::string_view data);
/// Hex digest of a file's bytes; throws Error(kIo) when unreadable.
std::string sha256_file(const std::filesystem::path& path);

/// Stage order: corpus -> format -> train -> generate -> analyze. A stage
/// runs only if its section is present in the config.
inline constexpr std::string_view kStages[] = {"corpus", "format", "train",
                                               "generate", "analyze"};

struct StageOutcome {
  std::string stage;
  bool ran = false;  // false: manifest matched, outputs reused
  std::vector<std::filesystem::path> outputs;
};

struct RunOptions {
  /// Relative input paths in the config resolve against this directory.
  std::filesystem::path base_dir = ".";
  std::optional<std::filesystem::path> out_dir;  // overrides config "out_dir"
  std::optional<std::uint64_t> seed;             // overrides config "seed"
  std::optional<unsigned> threads;               // overrides config "threads"
  std::function<void(const StageOutcome&)> on_stage;
};

/// Runs the declared stages in dependency order. A stage is skipped when its
/// manifest records the same config section, seed, tool version and input
/// hashes, and every recorded output still hashes to its recorded value.
/// A failing stage throws and later stages do not run.
std::vector<StageOutcome> run_pipeline(const nlohmann::json& config,
                                       const RunOptions& options = {});

/// Reads a config file and runs it with base_dir set to the file's directory.
std::vector<StageOutcome> run_pipeline_file(const std::filesystem::path& config_path,
                                            RunOptions options = {});

/// Writes a complete toy project (tweets, dialogues, evaluation export and a
/// config) under `dir` and returns the config path.
std::filesystem::path write_toy_project(const std::filesystem::path& dir,
                                        std::uint64_t seed);

}  // namespace chitchat::pipeline
