#include <gtest/gtest.h>

#include <random>

#include "cgt/errors.hpp"
#include "cgt/tokenizer.hpp"
#include "oracles.hpp"

using namespace cgt;

namespace {

std::vector<Point2> random_points(std::size_t n, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 32.0);
    std::vector<Point2> p(n);
    for (auto& q : p) q = {u(rng), u(rng)};
    return p;
}

TokenizerConfig small_config() {
    TokenizerConfig c;
    c.feature_channels = 8;
    c.model_width = 6;
    c.marker_dim = 4;
    return c;
}

} // namespace

TEST(Tokenize, SingleNodeGraph) {
    Rng rng(1);
    const Tokenizer tok = Tokenizer::create(small_config(), rng);
    const auto b = build_graph_bundle(std::vector<Point2>{{5, 5}}, 4, 4);
    const FeatureMap f{cgt::testing::random_tensor({8, 8, 8}, rng)};
    const TokenSet ts = tokenize(b.graph, f, b.markers, tok);
    EXPECT_EQ(ts.node_tokens.shape(), (Shape{1, 18}));
    EXPECT_EQ(ts.edge_tokens.shape(), (Shape{0, 18}));
    EXPECT_EQ(ts.stacked().shape(), (Shape{1, 18}));
}

TEST(Tokenize, ZeroFeatureMapLeavesOnlyPosition) {
    Rng rng(2);
    Tokenizer tok = Tokenizer::create(small_config(), rng);
    for (double& v : tok.node_proj_b.values_mut()) v = 0.0;
    const auto pts = random_points(6, rng);
    const auto b = build_graph_bundle(pts, 2, 4);
    const FeatureMap f{Tensor::zeros({8, 8, 8})};
    const TokenSet ts = tokenize(b.graph, f, b.markers, tok);
    for (std::size_t i = 0; i < 6; ++i) {
        const auto rho = sinusoidal_pe(pts[i], 8);
        for (std::size_t o = 0; o < 6; ++o) {
            double expected = 0.0;
            for (std::size_t c = 0; c < 8; ++c) expected += rho[c] * tok.node_proj_w.at((8 + c) * 6 + o);
            EXPECT_NEAR(ts.node_tokens.at(i, o), expected, 1e-12);
        }
    }
}

TEST(Tokenize, IdentityLinkProjectionExposesMarkers) {
    Rng rng(3);
    TokenizerConfig cfg = small_config();
    cfg.model_width = 8;     // C
    cfg.marker_dim = 4;      // c_l = C / 2
    Tokenizer tok = Tokenizer::create(cfg, rng);
    auto w = tok.link_proj_w.values_mut();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (i / 8 == i % 8) ? 1.0 : 0.0;
    for (double& v : tok.link_proj_b.values_mut()) v = 0.0;
    const auto b = build_graph_bundle(std::vector<Point2>{{0, 0}, {6, 0}}, 1, 4);
    const FeatureMap f{cgt::testing::random_tensor({8, 4, 4}, rng)};
    const TokenSet ts = tokenize(b.graph, f, b.markers, tok);
    ASSERT_EQ(ts.edge_count(), 2u);
    for (std::size_t d = 0; d < 2; ++d) {
        const Edge& e = b.graph.edges[d];
        for (std::size_t c = 0; c < 4; ++c) {
            EXPECT_EQ(ts.edge_tokens.at(d, 8 + c), b.markers.markers(e.from, c));
            EXPECT_EQ(ts.edge_tokens.at(d, 12 + c), b.markers.markers(e.to, c));
        }
    }
}

TEST(Tokenize, CountsWidthMarkersAndNaiveOracle) {
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(100 + trial);
        const Tokenizer tok = Tokenizer::create(small_config(), rng);
        const std::size_t n = 1 + rng() % 25, k = 1 + rng() % 5;
        const auto b = build_graph_bundle(random_points(n, rng), k, 4);
        const FeatureMap f{cgt::testing::random_tensor({8, 8, 8}, rng)};
        const TokenSet ts = tokenize(b.graph, f, b.markers, tok);
        const std::size_t d = std::min(k, n - 1) * n;
        ASSERT_EQ(ts.node_count(), n);
        ASSERT_EQ(ts.edge_count(), d);
        ASSERT_EQ(ts.node_tokens.dim(1), 18u);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(ts.node_tokens.at(i, 12 + c), tok.node_marker.at(c));
        }
        for (std::size_t e = 0; e < d; ++e) {
            for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(ts.edge_tokens.at(e, 12 + c), tok.edge_marker.at(c));
        }
        const auto naive = cgt::testing::naive_tokens(b.graph, f.values, b.markers, tok);
        for (std::size_t i = 0; i < naive.node.size(); ++i) EXPECT_NEAR(ts.node_tokens.at(i), naive.node[i], 1e-12);
        for (std::size_t i = 0; i < naive.edge.size(); ++i) EXPECT_NEAR(ts.edge_tokens.at(i), naive.edge[i], 1e-12);
    }
}

TEST(Tokenize, DimensionMismatchIsConfigError) {
    Rng rng(4);
    const Tokenizer tok = Tokenizer::create(small_config(), rng);
    const auto b = build_graph_bundle(random_points(5, rng), 2, 4);
    EXPECT_THROW(tokenize(b.graph, FeatureMap{Tensor::zeros({6, 4, 4})}, b.markers, tok), ConfigError);
    const auto wrong = build_graph_bundle(b.graph.centroids, 2, 3);
    EXPECT_THROW(tokenize(b.graph, FeatureMap{Tensor::zeros({8, 4, 4})}, wrong.markers, tok), ConfigError);
}

TEST(Tokenize, GradientsReachFeaturesProjectionsAndMarkers) {
    Rng rng(5);
    const Tokenizer tok = Tokenizer::create(small_config(), rng);
    const auto b = build_graph_bundle(random_points(5, rng), 2, 4);
    const FeatureMap f{cgt::testing::random_tensor({8, 8, 8}, rng)};
    const auto proj = cgt::testing::random_projection({15, 18}, rng);
    auto loss = [&] { return proj(tokenize(b.graph, f, b.markers, tok).stacked()); };
    std::vector<Tensor> inputs{f.values,         tok.node_proj_w, tok.edge_proj_b, tok.link_proj_w,
                               tok.node_marker, tok.edge_marker};
    const auto r = cgt::testing::check_gradients(loss, inputs, 30, &rng);
    EXPECT_LE(r.max_rel_error, cgt::testing::kFdTolerance) << r.worst;
}
