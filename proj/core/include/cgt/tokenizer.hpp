#pragma once

// Cell-graph tokenisation: node and edge tokens of width 3C built from
// sampled visual features, Laplacian link markers and two token markers.

#include <cstddef>
#include <string>

#include "cgt/features.hpp"
#include "cgt/graph.hpp"
#include "cgt/params.hpp"

namespace cgt {

struct TokenizerConfig {
    std::size_t feature_channels = 32; // channels of f, also the width of rho
    std::size_t model_width = 64;      // C of each token block
    std::size_t marker_dim = 16;       // c_l

    void validate() const;
    std::size_t token_width() const { return 3 * model_width; }
};

struct Tokenizer {
    TokenizerConfig config;
    Tensor node_proj_w, node_proj_b; // [z, rho] (2 C_f) -> C
    Tensor edge_proj_w, edge_proj_b; // z_e (C_f) -> C
    Tensor link_proj_w, link_proj_b; // [m_i, m_j] (2 c_l) -> C
    Tensor node_marker;              // M^v, [1 x C]
    Tensor edge_marker;              // M^e, [1 x C]

    static Tokenizer create(const TokenizerConfig& cfg, Rng& rng);
    ParamSet params(const std::string& prefix = "tokenizer.") const;
};

struct TokenSet {
    Tensor node_tokens; // [n x 3C], row i = node i
    Tensor edge_tokens; // [D x 3C], row d = edges[d]
    std::size_t node_count() const { return node_tokens.dim(0); }
    std::size_t edge_count() const { return edge_tokens.dim(0); }
    /// Nodes first, then edges: [(n + D) x 3C].
    Tensor stacked() const;
};

/// Constant per-graph inputs of the tokenizer that do not depend on f.
struct GraphTokenInputs {
    std::vector<Point2> edge_midpoints;
    Tensor positions;  // [n x C_f] sinusoidal codes
    Tensor node_links; // [n x 2 c_l], rows [m_i, m_i]
    Tensor edge_links; // [D x 2 c_l], rows [m_i, m_j]
};

GraphTokenInputs prepare_token_inputs(const CellGraph& graph, const LinkMarkers& markers,
                                      std::size_t feature_channels);

TokenSet tokenize(const CellGraph& graph, const FeatureMap& f, const GraphTokenInputs& inputs,
                  const Tokenizer& tokenizer);
TokenSet tokenize(const CellGraph& graph, const FeatureMap& f, const LinkMarkers& markers,
                  const Tokenizer& tokenizer);

} // namespace cgt
