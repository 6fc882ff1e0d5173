#pragma once

// Differentiable primitives. Every function returns a new tensor and, when
// recording, registers its backward rule on the current thread's tape.
// Matrices are rank-2 row-major; feature maps are rank-3 [C x H x W].

#include <cstddef>
#include <span>
#include <vector>

#include "cgt/tensor.hpp"

namespace cgt {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point2&, const Point2&) = default;
};

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
/// x^p elementwise; for non-integral p the input must be non-negative.
Tensor pow(const Tensor& x, double exponent);
/// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// [m x p] -> [m]
Tensor sum_rows(const Tensor& x);
/// [m x p] -> [p]
Tensor sum_cols(const Tensor& x);

// ---- linear algebra and shape ----------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// [m x p] + [p] with the bias broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x * w + b, with b optional (undefined tensor = no bias).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Concatenates along the last dimension of rank-2 tensors.
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(std::initializer_list<Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_rows(std::initializer_list<Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// [1 x p] or [p] -> [count x p]
Tensor repeat_rows(const Tensor& row, std::size_t count);

// ---- neural-network blocks -------------------------------------------------

/// Row-wise softmax, stabilised by subtracting the row maximum.
Tensor softmax_rows(const Tensor& x);

/// Normalises each vector along the last dimension, then applies gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Zero-padded cross-correlation of [C_in x H x W] with [C_out x C_in x kh x kw].
/// Output size is floor((H + 2 pad - kh) / stride) + 1. `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t pad);

/// Non-overlapping max pooling with window = stride = `window`.
Tensor max_pool2d(const Tensor& x, std::size_t window);

Tensor upsample_nearest2d(const Tensor& x, std::size_t factor);

/// Samples a [C x H x W] map at continuous grid coordinates; returns [N x C].
/// Coordinates are clamped into [0, W-1] x [0, H-1] before interpolation.
Tensor grid_sample_bilinear(const Tensor& map, std::span<const Point2> grid_points);

/// Diagnostic copy of attention probabilities, one T x T matrix per head.
struct AttentionProbe {
    std::size_t tokens = 0;
    std::size_t heads = 0;
    std::vector<double> probs; // [heads][query][key]
};

/// Scaled dot-product self-attention on packed [T x 3C] = [Q | K | V].
/// Each of the `heads` heads uses C / heads contiguous columns. Returns [T x C].
Tensor multi_head_attention(const Tensor& qkv, std::size_t heads, AttentionProbe* probe = nullptr);

/// Per-channel softmax aggregation of messages [E x C] into [n x C]:
/// out[i,c] = sum_{e: target(e)=i} softmax_e(msg[e,c]) * msg[e,c].
/// Nodes with no incoming message receive zeros. If `weights_out` is given it
/// receives the [E x C] aggregation weights.
Tensor softmax_aggregate(const Tensor& messages, std::span<const std::size_t> targets, std::size_t nodes,
                         std::vector<double>* weights_out = nullptr);

} // namespace cgt
