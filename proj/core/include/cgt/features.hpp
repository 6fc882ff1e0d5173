#pragma once

// Stride-4 convolutional feature extractor plus the sampling and positional
// helpers that turn its feature map into per-nucleus embeddings.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cgt/ops.hpp"
#include "cgt/params.hpp"

namespace cgt {

inline constexpr std::size_t kFeatureStride = 4;

struct BackboneConfig {
    /// Output channels of the four encoder convolutions (strides 2, 2, 1, 1).
    std::array<std::size_t, 4> encoder_widths{8, 16, 16, 16};
    /// C: channels of the feature map f.
    std::size_t feature_channels = 32;
    /// B: nucleus classes; the segmentation head predicts B + 1 (background last).
    std::size_t num_classes = 3;

    /// Throws ConfigError unless C is even and >= 8 and widths are non-zero.
    void validate() const;
};

struct FeatureMap {
    Tensor values; // [C x H/4 x W/4]
    std::size_t channels() const { return values.dim(0); }
    std::size_t height() const { return values.dim(1); }
    std::size_t width() const { return values.dim(2); }
};

struct BackboneOutput {
    FeatureMap features;  // second-to-last decoder layer
    Tensor seg_logits;    // [(B+1) x H/4 x W/4], final layer
};

/// Four encoder convolutions and three decoder stages with skip additions:
///   d1 = relu(conv(e4)) + e3
///   f  = relu(conv(d1)) + lateral_1x1(e2)
///   seg = conv_1x1(f)
struct Backbone {
    BackboneConfig config;
    std::array<Tensor, 4> enc_w;
    std::array<Tensor, 4> enc_b;
    Tensor dec1_w, dec1_b;
    Tensor dec2_w, dec2_b;
    Tensor lateral_w, lateral_b;
    Tensor seg_w, seg_b;

    static Backbone create(const BackboneConfig& cfg, Rng& rng);
    ParamSet params(const std::string& prefix = "backbone.") const;

    /// image: [3 x H x W] with H, W divisible by 4.
    BackboneOutput extract(const Tensor& image) const;
};

/// Maps input-pixel coordinates to feature-grid coordinates (divide by 4).
Point2 to_grid(Point2 pixel);

/// Bilinear sample of f at one pixel position; returns [1 x C].
Tensor bilinear_sample(const FeatureMap& f, Point2 pixel);
/// Batched: one row per point, [N x C].
Tensor bilinear_sample(const FeatureMap& f, std::span<const Point2> pixels);

/// Per-axis 1-D sinusoidal codes of width C/2 for x then y. Pair t of an
/// axis holds (sin(v / 10000^(2t/(C/2))), cos(...)). Requires C % 4 == 0.
std::vector<double> sinusoidal_pe(Point2 p, std::size_t channels);
/// [N x C] constant table of sinusoidal_pe rows.
Tensor positional_table(std::span<const Point2> points, std::size_t channels);

Point2 edge_midpoint(Point2 a, Point2 b);

} // namespace cgt
