#pragma once

// Topology-aware pretraining head: a two-layer GENConv-style message-passing
// classifier over the fixed k-NN cell graph, and the pixel-level Dice and
// cross-entropy auxiliary losses on the extractor's segmentation output.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cgt/encoder.hpp"
#include "cgt/features.hpp"
#include "cgt/graph.hpp"
#include "cgt/params.hpp"

namespace cgt {

struct GcnConfig {
    std::size_t feature_channels = 32; // C_f of the sampled features
    std::size_t hidden = 32;           // message-passing width
    std::size_t classes = 3;
    std::size_t layers = 2;
    double message_eps = 1e-7;

    void validate() const;
};

/// x' = x + MLP(x + softmax_aggregate(relu(x_src + e) + eps)), MLP = H -> 2H -> H.
struct GenConvLayer {
    Tensor mlp1_w, mlp1_b;
    Tensor mlp2_w, mlp2_b;
};

struct GcnHead {
    GcnConfig config;
    Tensor node_in_w, node_in_b; // [z, rho] (2 C_f) -> H, discarded after pretraining
    Tensor edge_in_w, edge_in_b; // z_e (C_f) -> H
    std::vector<GenConvLayer> layers;
    Tensor cls_w, cls_b;         // H -> B

    static GcnHead create(const GcnConfig& cfg, Rng& rng);
    ParamSet params(const std::string& prefix = "gcn.") const;
};

struct GcnOutput {
    Tensor embeddings; // [n x H]
    Tensor logits;     // [n x B]
};

/// Diagnostics: aggregation weights per layer, [2D x H] each, and the
/// message target of each row.
struct GcnTrace {
    std::vector<std::vector<double>> weights;
    std::vector<std::size_t> targets;
};

/// Every stored edge (i, j) carries a message j -> i and i -> j, both with
/// the edge's feature row. Throws ContractError on a dangling edge.
GcnOutput gcn_forward(const Tensor& node_feats, const Tensor& edge_feats, std::span<const Edge> edges,
                      const GcnHead& head, GcnTrace* trace = nullptr);

/// 1 - mean_c (2 sum p t + s) / (sum p + sum t + s); probs and target are
/// [K x P] (class-major, P pixels).
Tensor dice_loss(const Tensor& probs, const Tensor& target, double smoothing = 1.0);

/// Mean over pixels of -log p[target]; probs [K x P], target one-hot [K x P].
Tensor pixel_cross_entropy(const Tensor& probs, const Tensor& target);

/// Class-major per-pixel softmax of [K x H x W] logits, returned as [K x (H W)].
Tensor channel_softmax(const Tensor& logits);

/// Class map (values 0..K-1) as a class-major one-hot [K x P] constant.
Tensor mask_one_hot(std::span<const int> mask, std::size_t classes);

struct PretrainLossWeights {
    double dice = 1.0;
    double pixel_ce = 1.0;
    double gamma = 2.0;
};

struct PretrainLosses {
    Tensor total;
    double instance_cls = 0.0;
    double dice = 0.0;
    double pixel_ce = 0.0;
    double total_value = 0.0;
    Tensor probs; // GCN posteriors, [n x B]
};

struct Sample;

/// Full pretraining forward: graph with k = `edges_per_node`, sampled node
/// and edge features, GCN instance loss and the two pixel losses.
PretrainLosses pretrain_step(const Sample& sample, const GraphBundle& bundle, const Backbone& backbone,
                             const GcnHead& head, std::span<const double> tau, const PretrainLossWeights& weights);

} // namespace cgt
