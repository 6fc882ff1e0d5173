#include "cgt/features.hpp"

#include <cmath>

#include "cgt/errors.hpp"

namespace cgt {

void BackboneConfig::validate() const {
    if (feature_channels < 8 || feature_channels % 2 != 0) {
        throw ConfigError("backbone: feature_channels must be even and >= 8, got " + std::to_string(feature_channels));
    }
    for (std::size_t w : encoder_widths) {
        if (w == 0) throw ConfigError("backbone: encoder widths must be positive");
    }
    if (encoder_widths[2] != encoder_widths[3]) {
        throw ConfigError("backbone: encoder stages 3 and 4 must share a width for the skip addition");
    }
    if (num_classes == 0) {
        throw ConfigError("backbone: num_classes must be positive");
    }
}

namespace {

void conv_param(Tensor& w, Tensor& b, std::size_t cout, std::size_t cin, std::size_t ksize, Rng& rng) {
    const std::size_t fan_in = cin * ksize * ksize;
    w = init_uniform_fan_in(Shape{cout, cin, ksize, ksize}, fan_in, rng);
    b = init_uniform_fan_in(Shape{cout}, fan_in, rng);
}

} // namespace

Backbone Backbone::create(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    Backbone bb;
    bb.config = cfg;
    const auto& ew = cfg.encoder_widths;
    std::size_t cin = 3;
    for (std::size_t s = 0; s < 4; ++s) {
        conv_param(bb.enc_w[s], bb.enc_b[s], ew[s], cin, 3, rng);
        cin = ew[s];
    }
    conv_param(bb.dec1_w, bb.dec1_b, ew[2], ew[3], 3, rng);
    conv_param(bb.dec2_w, bb.dec2_b, cfg.feature_channels, ew[2], 3, rng);
    conv_param(bb.lateral_w, bb.lateral_b, cfg.feature_channels, ew[1], 1, rng);
    conv_param(bb.seg_w, bb.seg_b, cfg.num_classes + 1, cfg.feature_channels, 1, rng);
    return bb;
}

ParamSet Backbone::params(const std::string& prefix) const {
    ParamSet ps;
    for (std::size_t s = 0; s < 4; ++s) {
        ps.add(prefix + "enc" + std::to_string(s + 1) + ".weight", enc_w[s]);
        ps.add(prefix + "enc" + std::to_string(s + 1) + ".bias", enc_b[s]);
    }
    ps.add(prefix + "dec1.weight", dec1_w);
    ps.add(prefix + "dec1.bias", dec1_b);
    ps.add(prefix + "dec2.weight", dec2_w);
    ps.add(prefix + "dec2.bias", dec2_b);
    ps.add(prefix + "lateral.weight", lateral_w);
    ps.add(prefix + "lateral.bias", lateral_b);
    ps.add(prefix + "seg.weight", seg_w);
    ps.add(prefix + "seg.bias", seg_b);
    return ps;
}

BackboneOutput Backbone::extract(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ConfigError("backbone: expected a [3 x H x W] image, got " + shape_str(image.shape()));
    }
    if (image.dim(1) % kFeatureStride != 0 || image.dim(2) % kFeatureStride != 0) {
        throw ConfigError("backbone: image size " + shape_str(image.shape()) + " not divisible by 4");
    }
    const Tensor e1 = relu(conv2d(image, enc_w[0], enc_b[0], 2, 1));
    const Tensor e2 = relu(conv2d(e1, enc_w[1], enc_b[1], 2, 1));
    const Tensor e3 = relu(conv2d(e2, enc_w[2], enc_b[2], 1, 1));
    const Tensor e4 = relu(conv2d(e3, enc_w[3], enc_b[3], 1, 1));
    const Tensor d1 = add(relu(conv2d(e4, dec1_w, dec1_b, 1, 1)), e3);
    const Tensor f = add(relu(conv2d(d1, dec2_w, dec2_b, 1, 1)), conv2d(e2, lateral_w, lateral_b, 1, 0));
    BackboneOutput out;
    out.features.values = f;
    out.seg_logits = conv2d(f, seg_w, seg_b, 1, 0);
    return out;
}

Point2 to_grid(Point2 pixel) {
    const double s = static_cast<double>(kFeatureStride);
    return Point2{pixel.x / s, pixel.y / s};
}

Tensor bilinear_sample(const FeatureMap& f, Point2 pixel) {
    const Point2 g = to_grid(pixel);
    return grid_sample_bilinear(f.values, std::span<const Point2>(&g, 1));
}

Tensor bilinear_sample(const FeatureMap& f, std::span<const Point2> pixels) {
    std::vector<Point2> grid;
    grid.reserve(pixels.size());
    for (const Point2& p : pixels) grid.push_back(to_grid(p));
    return grid_sample_bilinear(f.values, grid);
}

std::vector<double> sinusoidal_pe(Point2 p, std::size_t channels) {
    if (channels == 0 || channels % 4 != 0) {
        throw ConfigError("sinusoidal_pe: channel count must be a positive multiple of 4, got " + std::to_string(channels));
    }
    const std::size_t half = channels / 2;
    std::vector<double> out(channels);
    const double coords[2] = {p.x, p.y};
    for (std::size_t axis = 0; axis < 2; ++axis) {
        for (std::size_t t = 0; t < half / 2; ++t) {
            const double freq = std::pow(10000.0, static_cast<double>(2 * t) / static_cast<double>(half));
            const double arg = coords[axis] / freq;
            out[axis * half + 2 * t] = std::sin(arg);
            out[axis * half + 2 * t + 1] = std::cos(arg);
        }
    }
    return out;
}

Tensor positional_table(std::span<const Point2> points, std::size_t channels) {
    std::vector<double> v;
    v.reserve(points.size() * channels);
    for (const Point2& p : points) {
        const auto row = sinusoidal_pe(p, channels);
        v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(Shape{points.size(), channels}, std::move(v));
}

Point2 edge_midpoint(Point2 a, Point2 b) { return Point2{0.5 * (a.x + b.x), 0.5 * (a.y + b.y)}; }

} // namespace cgt
