#pragma once

// Command-line front end. `run_cli` is the whole program minus process
// setup so tests can drive it in-process.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage / config / missing
// path, 3 numeric failure (non-finite loss).

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cgt/data.hpp"

namespace cgt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

inline constexpr const char* kToolVersion = "0.1.0";

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Generation settings read by `cgt gen --config`.
struct GenConfig {
    CorpusConfig corpus;
    std::size_t count = 500;
    std::array<double, 3> fractions{0.8, 0.1, 0.1};
    std::uint64_t split_seed = 0;
};

std::string gen_config_to_json(const GenConfig& cfg, int indent = -1);
/// Missing fields keep defaults; unknown fields throw ConfigError naming them.
GenConfig gen_config_from_json(const std::string& text);

/// The three splits of a corpus directory written by `cgt gen`.
CorpusSplit read_corpus_splits(const std::filesystem::path& dir);

} // namespace cgt::cli
