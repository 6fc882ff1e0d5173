#include "cgt/tokenizer.hpp"

#include "cgt/errors.hpp"

namespace cgt {

void TokenizerConfig::validate() const {
    if (model_width == 0 || feature_channels == 0) {
        throw ConfigError("tokenizer: widths must be positive");
    }
    if (feature_channels % 4 != 0) {
        throw ConfigError("tokenizer: feature_channels must be a multiple of 4 for the positional code");
    }
}

Tokenizer Tokenizer::create(const TokenizerConfig& cfg, Rng& rng) {
    cfg.validate();
    Tokenizer t;
    t.config = cfg;
    const std::size_t c = cfg.model_width;
    const std::size_t node_in = 2 * cfg.feature_channels;
    const std::size_t link_in = 2 * cfg.marker_dim;
    t.node_proj_w = init_uniform_fan_in(Shape{node_in, c}, node_in, rng);
    t.node_proj_b = init_uniform_fan_in(Shape{c}, node_in, rng);
    t.edge_proj_w = init_uniform_fan_in(Shape{cfg.feature_channels, c}, cfg.feature_channels, rng);
    t.edge_proj_b = init_uniform_fan_in(Shape{c}, cfg.feature_channels, rng);
    t.link_proj_w = init_uniform_fan_in(Shape{link_in, c}, link_in, rng);
    t.link_proj_b = init_uniform_fan_in(Shape{c}, link_in, rng);
    t.node_marker = init_normal(Shape{1, c}, 0.02, rng);
    t.edge_marker = init_normal(Shape{1, c}, 0.02, rng);
    return t;
}

ParamSet Tokenizer::params(const std::string& prefix) const {
    ParamSet ps;
    ps.add(prefix + "sigma1.weight", node_proj_w);
    ps.add(prefix + "sigma1.bias", node_proj_b);
    ps.add(prefix + "sigma2.weight", edge_proj_w);
    ps.add(prefix + "sigma2.bias", edge_proj_b);
    ps.add(prefix + "sigma3.weight", link_proj_w);
    ps.add(prefix + "sigma3.bias", link_proj_b);
    ps.add(prefix + "marker_node", node_marker);
    ps.add(prefix + "marker_edge", edge_marker);
    return ps;
}

Tensor TokenSet::stacked() const {
    if (edge_count() == 0) return node_tokens;
    return concat_rows({node_tokens, edge_tokens});
}

GraphTokenInputs prepare_token_inputs(const CellGraph& graph, const LinkMarkers& markers,
                                      std::size_t feature_channels) {
    const std::size_t n = graph.n;
    const std::size_t cl = markers.markers.cols;
    if (markers.markers.rows != n) {
        throw ConfigError("tokenize: link markers have " + std::to_string(markers.markers.rows) + " rows for " +
                          std::to_string(n) + " nodes");
    }
    GraphTokenInputs in;
    in.positions = positional_table(graph.centroids, feature_channels);
    std::vector<double> node_links(n * 2 * cl);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < cl; ++c) {
            node_links[i * 2 * cl + c] = markers.markers(i, c);
            node_links[i * 2 * cl + cl + c] = markers.markers(i, c);
        }
    }
    in.node_links = Tensor(Shape{n, 2 * cl}, std::move(node_links));
    const std::size_t d = graph.edges.size();
    std::vector<double> edge_links(d * 2 * cl);
    in.edge_midpoints.reserve(d);
    for (std::size_t e = 0; e < d; ++e) {
        const Edge& ed = graph.edges[e];
        if (ed.from >= n || ed.to >= n) {
            throw ContractError("tokenize: edge " + std::to_string(e) + " references a missing node");
        }
        for (std::size_t c = 0; c < cl; ++c) {
            edge_links[e * 2 * cl + c] = markers.markers(ed.from, c);
            edge_links[e * 2 * cl + cl + c] = markers.markers(ed.to, c);
        }
        in.edge_midpoints.push_back(edge_midpoint(graph.centroids[ed.from], graph.centroids[ed.to]));
    }
    in.edge_links = Tensor(Shape{d, 2 * cl}, std::move(edge_links));
    return in;
}

TokenSet tokenize(const CellGraph& graph, const FeatureMap& f, const GraphTokenInputs& inputs,
                  const Tokenizer& tok) {
    const auto& cfg = tok.config;
    if (f.channels() != cfg.feature_channels) {
        throw ConfigError("tokenize: feature map has " + std::to_string(f.channels()) + " channels, tokenizer expects " +
                          std::to_string(cfg.feature_channels));
    }
    if (inputs.node_links.dim(1) != 2 * cfg.marker_dim) {
        throw ConfigError("tokenize: link markers of width " + std::to_string(inputs.node_links.dim(1) / 2) +
                          ", tokenizer expects " + std::to_string(cfg.marker_dim));
    }
    const std::size_t n = graph.n;
    const std::size_t d = graph.edges.size();

    const Tensor z_nodes = bilinear_sample(f, graph.centroids);
    const Tensor node_visual = linear(concat_cols({z_nodes, inputs.positions}), tok.node_proj_w, tok.node_proj_b);
    const Tensor node_link = linear(inputs.node_links, tok.link_proj_w, tok.link_proj_b);
    TokenSet ts;
    ts.node_tokens = concat_cols({node_visual, node_link, repeat_rows(tok.node_marker, n)});

    if (d == 0) {
        ts.edge_tokens = Tensor(Shape{0, cfg.token_width()});
        return ts;
    }
    const Tensor z_edges = bilinear_sample(f, inputs.edge_midpoints);
    const Tensor edge_visual = linear(z_edges, tok.edge_proj_w, tok.edge_proj_b);
    const Tensor edge_link = linear(inputs.edge_links, tok.link_proj_w, tok.link_proj_b);
    ts.edge_tokens = concat_cols({edge_visual, edge_link, repeat_rows(tok.edge_marker, d)});
    return ts;
}

TokenSet tokenize(const CellGraph& graph, const FeatureMap& f, const LinkMarkers& markers, const Tokenizer& tok) {
    return tokenize(graph, f, prepare_token_inputs(graph, markers, tok.config.feature_channels), tok);
}

} // namespace cgt
