#pragma once

// Named parameter collections, initialisers and the Adam optimiser.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cgt/tensor.hpp"

namespace cgt {

using Rng = std::mt19937_64;

struct NamedParam {
    std::string name;
    Tensor tensor;
};

/// Ordered, name-addressable list of trainable tensors. Handles alias the
/// tensors owned by model structs, so updates are visible to both.
class ParamSet {
public:
    void add(std::string name, const Tensor& tensor);
    void append(const ParamSet& other);

    std::span<const NamedParam> items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    const Tensor* find(const std::string& name) const;
    std::size_t scalar_count() const;

    void zero_grad() const;
    /// Scales every existing gradient buffer by `factor`.
    void scale_grad(double factor) const;
    /// Copies values of every parameter whose name starts with `prefix`
    /// from `source` (matched by name); returns the number copied. Throws
    /// ConfigError on a shape mismatch.
    std::size_t copy_values_from(const ParamSet& source, const std::string& prefix = "") const;

private:
    std::vector<NamedParam> items_;
};

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with requires_grad set.
Tensor init_uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng);
/// N(0, stddev^2) with requires_grad set.
Tensor init_normal(Shape shape, double stddev, Rng& rng);
Tensor init_constant(Shape shape, double value);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias-corrected moments:
///   m <- b1 m + (1-b1) g,   v <- b2 v + (1-b2) g^2,
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
class Adam {
public:
    Adam(ParamSet params, AdamConfig cfg);

    /// Applies one update from the current gradients (absent grads = 0).
    void step();
    std::size_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    ParamSet params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

} // namespace cgt
