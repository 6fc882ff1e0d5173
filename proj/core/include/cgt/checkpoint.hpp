#pragma once

// Versioned checkpoint container.
//
// Byte layout (version 1):
//   text header, one field per line, '\n' terminated:
//     CGTCKPT 1
//     config_digest <16 hex digits, FNV-1a of the config bytes>
//     step <decimal>
//     rng_bytes <decimal>        followed by that many bytes of RNG state and '\n'
//     config_bytes <decimal>     followed by that many bytes of JSON config and '\n'
//     tensors <decimal>
//     END_HEADER
//   then, per tensor:
//     u32 name length, name bytes, u32 rank, rank x u64 dims,
//     prod(dims) x f64 values
//   all integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cgt/params.hpp"
#include "cgt/tensor.hpp"

namespace cgt {

inline constexpr int kCheckpointVersion = 1;

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;
    friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

struct Checkpoint {
    int version = kCheckpointVersion;
    std::string config_json;
    std::uint64_t step = 0;
    std::string rng_state;
    std::vector<StoredTensor> tensors;

    std::string config_digest() const;
    const StoredTensor* find(const std::string& name) const;
    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string checkpoint_to_bytes(const Checkpoint& ckpt);
/// Throws ParseError naming `origin` on truncation or a bad header.
Checkpoint checkpoint_from_bytes(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of every parameter in `params`, in order.
std::vector<StoredTensor> capture_tensors(const ParamSet& params);

/// Copies stored values into every parameter of `params` whose name starts
/// with `prefix`. Missing names or shape mismatches throw ConfigError listing
/// every offending tensor. Returns the number of tensors restored.
std::size_t restore_tensors(const Checkpoint& ckpt, const ParamSet& params, const std::string& prefix = "");

std::string rng_to_string(const Rng& rng);
Rng rng_from_string(const std::string& state);

} // namespace cgt
