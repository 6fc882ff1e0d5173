#pragma once

// Transformer encoder over stacked node and edge tokens, the node
// classification head and the cross-entropy + focal node loss.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cgt/ops.hpp"
#include "cgt/params.hpp"

namespace cgt {

struct EncoderConfig {
    std::size_t token_width = 192; // 3C
    std::size_t width = 64;        // C
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t ffn_multiplier = 4;
    double ln_eps = 1e-5;

    void validate() const;
};

/// Pre-norm layer: x += Wo * MHA(LN1(x)); x += FFN(LN2(x)).
struct EncoderLayer {
    Tensor ln1_gain, ln1_bias;
    Tensor qkv_w, qkv_b;
    Tensor out_w, out_b;
    Tensor ln2_gain, ln2_bias;
    Tensor ff1_w, ff1_b;
    Tensor ff2_w, ff2_b;
};

struct CgtEncoder {
    EncoderConfig config;
    Tensor input_w, input_b; // 3C -> C
    std::vector<EncoderLayer> layers;
    Tensor final_gain, final_bias;

    static CgtEncoder create(const EncoderConfig& cfg, Rng& rng);
    ParamSet params(const std::string& prefix = "encoder.") const;
};

/// Attention probabilities of every layer when requested.
struct EncodeTrace {
    std::vector<AttentionProbe> layers;
};

/// tokens: [(n + D) x 3C] -> [(n + D) x C], dense attention without masking.
Tensor encode(const Tensor& tokens, const CgtEncoder& encoder, EncodeTrace* trace = nullptr);

struct ClassifierHead {
    Tensor weight; // [C x B]
    Tensor bias;   // [B]

    static ClassifierHead create(std::size_t width, std::size_t classes, Rng& rng);
    ParamSet params(const std::string& prefix = "head.") const;
};

/// Row-softmax of the linear head over the first n encoder rows: [n x B].
Tensor classify(const Tensor& encoded, std::size_t n, const ClassifierHead& head);

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean over nodes of
///   -sum_b y_b log P_b - sum_b tau_b (1 - P_b)^gamma y_b log P_b,
/// with P clamped to [1e-12, 1]. `onehot` must be exactly one-hot per row.
Tensor node_loss(const Tensor& probs, const Tensor& onehot, std::span<const double> tau, double gamma = 2.0);

/// [n x B] one-hot constant from class ids.
Tensor one_hot(std::span<const int> labels, std::size_t classes);

} // namespace cgt
