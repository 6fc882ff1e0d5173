#pragma once

// Synthetic histology-like corpus: generation, on-disk layout and splits.
//
// Split directory layout (schema version 1):
//   <dir>/index.json         {"format":"cgt-split","version":1,"samples":[ids...]}
//   <dir>/<id>.ppm           binary P6 RGB image, 8 bits per channel
//   <dir>/<id>.json          {"format":"cgt-sample","version":1,"id",...,
//                             "centroids":[[x,y],...],"labels":[...],
//                             "mask_width","mask_height","mask":[row-major]}

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cgt/ops.hpp"

namespace cgt {

struct Sample {
    std::string id;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t num_classes = 0;
    /// 3 x H x W, each value an exact multiple of 1/255.
    std::vector<double> image;
    std::vector<Point2> centroids;
    std::vector<int> labels;
    /// (H/4) x (W/4) class map; background = num_classes.
    std::vector<int> mask;

    std::size_t mask_height() const { return height / 4; }
    std::size_t mask_width() const { return width / 4; }
    std::size_t nuclei() const { return centroids.size(); }
    Tensor image_tensor() const;

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct ClassAppearance {
    std::array<double, 3> color{0.5, 0.3, 0.5};
    double radius_min = 2.0;
    double radius_max = 3.0;
};

struct CorpusConfig {
    std::size_t image_size = 64;
    std::size_t nuclei_min = 20;
    std::size_t nuclei_max = 60;
    std::size_t num_classes = 3;
    std::vector<ClassAppearance> appearance = default_appearance();
    std::vector<double> class_prior{0.5, 0.3, 0.2};
    /// Per-nucleus N(0, sd^2) shift of every colour channel.
    double color_jitter = 0.05;
    double pixel_noise = 0.03;
    std::array<double, 3> background{0.92, 0.80, 0.86};
    /// Probability that a nucleus copies the class of its nearest already-placed neighbour.
    double cluster_strength = 0.6;
    double label_noise = 0.0;
    double min_distance = 5.0;
    double margin = 3.0;
    std::size_t placement_attempts = 4000;
    std::uint64_t seed = 0;

    static std::vector<ClassAppearance> default_appearance();
    /// Throws ConfigError naming the offending field.
    void validate() const;
};

/// Support radius, in stride-4 grid cells, within which every nucleus has at
/// least one mask cell of its class.
inline constexpr double kMaskSupportRadius = 2.0;

/// Throws GenerationError (reporting the seed) if placement fails.
Sample generate_sample(const CorpusConfig& cfg, std::uint64_t seed, std::string id);

/// Seed of sample `index` derived from cfg.seed.
std::uint64_t sample_seed(std::uint64_t corpus_seed, std::size_t index);

/// Generates `count` samples with ids "s00000"... Runs on up to `threads`
/// workers (0 = CGT_THREADS or hardware concurrency); output is independent
/// of the thread count.
std::vector<Sample> generate_corpus(const CorpusConfig& cfg, std::size_t count, unsigned threads = 0);

/// Worker cap from CGT_THREADS (if set) and the hardware.
unsigned worker_threads();

void write_corpus(std::span<const Sample> samples, const std::filesystem::path& dir);
std::vector<Sample> read_corpus(const std::filesystem::path& dir);

struct CorpusSplit {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
    std::vector<std::string> warnings;
};

/// Deterministic shuffled partition. Sizes: floor(f_train N), floor(f_val N),
/// remainder to test; a split that ends up empty while its fraction is
/// positive produces a warning. Fractions must sum to 1 (within 1e-9).
CorpusSplit split_corpus(std::vector<Sample> corpus, std::array<double, 3> fractions, std::uint64_t seed);

/// Count of nucleus labels per class.
std::vector<std::size_t> class_frequencies(std::span<const Sample> samples, std::size_t classes);

/// tau_b proportional to 1 / frequency_b, scaled so the smallest weight is 1.
/// Classes absent from the table get weight 1.
std::vector<double> class_weights(std::span<const std::size_t> frequencies);

/// FNV-1a digest over the serialised samples (hex string).
std::string corpus_digest(std::span<const Sample> samples);

/// Deterministic 64-bit string hash (FNV-1a).
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

} // namespace cgt
