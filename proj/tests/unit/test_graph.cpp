#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "cgt/errors.hpp"
#include "cgt/graph.hpp"
#include "oracles.hpp"

using namespace cgt;

namespace {

std::vector<Point2> random_points(std::size_t n, Rng& rng, double extent = 64.0) {
    std::uniform_real_distribution<double> u(0.0, extent);
    std::vector<Point2> p(n);
    for (auto& q : p) q = {u(rng), u(rng)};
    return p;
}

std::vector<std::pair<std::size_t, std::size_t>> pairs(const CellGraph& g) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const Edge& e : g.edges) out.emplace_back(e.from, e.to);
    return out;
}

} // namespace

TEST(Knn, ThreeCollinearPoints) {
    const std::vector<Point2> pts{{0, 0}, {1, 0}, {2.5, 0}};
    const CellGraph g = build_knn_graph(pts, 1);
    using P = std::pair<std::size_t, std::size_t>;
    EXPECT_EQ(pairs(g), (std::vector<P>{{0, 1}, {1, 0}, {2, 1}}));
    EXPECT_TRUE(g.linked(0, 1));
    EXPECT_TRUE(g.linked(1, 2));
    EXPECT_FALSE(g.linked(0, 2));
}

TEST(Knn, SingleNodeHasNoEdges) {
    const std::vector<Point2> pts{{3, 4}};
    const CellGraph g = build_knn_graph(pts, 4);
    EXPECT_EQ(g.k, 0u);
    EXPECT_TRUE(g.edges.empty());
    EXPECT_EQ(g.adjacency(0, 0), 0.0);
}

TEST(Knn, UnitSquareIsComplete) {
    const std::vector<Point2> pts{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    const CellGraph g = build_knn_graph(pts, 3);
    EXPECT_EQ(g.edges.size(), 12u);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(g.adjacency(i, j), i == j ? 0.0 : 1.0);
    }
}

TEST(Knn, ErrorsAndTies) {
    EXPECT_THROW(build_knn_graph(std::vector<Point2>{}, 2), ContractError);
    EXPECT_THROW(build_knn_graph(std::vector<Point2>{{0, 0}, {1, 1}}, 0), ContractError);
    EXPECT_THROW(build_knn_graph(std::vector<Point2>{{0, 0}, {NAN, 1}}, 1), ContractError);
    // Equidistant neighbours: the lower index wins; duplicates participate at distance 0.
    const CellGraph g = build_knn_graph(std::vector<Point2>{{0, 0}, {1, 0}, {-1, 0}, {0, 0}}, 2);
    EXPECT_EQ(g.edges[0].to, 3u);
    EXPECT_EQ(g.edges[1].to, 1u);
}

TEST(Knn, StructuralInvariantsAndOracle) {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng() % 50;
        const std::size_t k = 1 + rng() % 8;
        const auto pts = random_points(n, rng);
        const CellGraph g = build_knn_graph(pts, k);
        const std::size_t kk = std::min(k, n - 1);
        ASSERT_EQ(g.edges.size(), kk * n);
        const auto oracle = cgt::testing::knn_oracle(pts, k);
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t r = 0; r < kk; ++r) {
                const Edge& e = g.edges[i * kk + r];
                EXPECT_EQ(e.from, i);
                EXPECT_EQ(e.to, oracle[i][r]);
                EXPECT_NE(e.from, e.to);
                EXPECT_TRUE(seen.insert({e.from, e.to}).second);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_EQ(g.adjacency(i, i), 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                const bool linked = seen.count({i, j}) || seen.count({j, i});
                EXPECT_EQ(g.adjacency(i, j), linked ? 1.0 : 0.0);
            }
        }
    }
}

TEST(Laplacian, HandEvaluations) {
    const CellGraph two = build_knn_graph(std::vector<Point2>{{0, 0}, {1, 0}}, 1);
    const Matrix l2 = normalized_laplacian(two);
    EXPECT_NEAR(l2(0, 0), 1, 1e-15);
    EXPECT_NEAR(l2(0, 1), -1, 1e-15);
    EXPECT_NEAR(l2(1, 0), -1, 1e-15);
    EXPECT_NEAR(l2(1, 1), 1, 1e-15);

    const CellGraph path = build_knn_graph(std::vector<Point2>{{0, 0}, {1, 0}, {2.5, 0}}, 1);
    const Matrix lp = normalized_laplacian(path);
    const double s = 1.0 / std::sqrt(2.0);
    const double expected[3][3] = {{1, -s, 0}, {-s, 1, -s}, {0, -s, 1}};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(lp(i, j), expected[i][j], 1e-15);
    }

    const CellGraph one = build_knn_graph(std::vector<Point2>{{5, 5}}, 4);
    EXPECT_EQ(normalized_laplacian(one)(0, 0), 1.0);
}

TEST(LinkMarkers, TwoNodeAnalyticEigenpair) {
    const auto b = build_graph_bundle(std::vector<Point2>{{0, 0}, {1, 0}}, 1, 1);
    EXPECT_NEAR(b.markers.eigenvalues[0], 0.0, 1e-12);
    EXPECT_NEAR(b.markers.eigenvalues[1], 2.0, 1e-12);
    EXPECT_NEAR(b.markers.markers(0, 0), 1.0 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(b.markers.markers(1, 0), -1.0 / std::sqrt(2.0), 1e-12);
}

TEST(LinkMarkers, SingleNodePadsWithZeros) {
    const auto b = build_graph_bundle(std::vector<Point2>{{1, 2}}, 4, 16);
    ASSERT_EQ(b.markers.markers.rows, 1u);
    ASSERT_EQ(b.markers.markers.cols, 16u);
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(b.markers.markers(0, c), 0.0);
}

TEST(LinkMarkers, EigenpairsOrthonormalAndSignCanonical) {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 2 + rng() % 29;
        const CellGraph g = build_knn_graph(random_points(n, rng), 1 + rng() % 5);
        const Matrix L = normalized_laplacian(g);
        const LinkMarkers m = link_markers(L, 16);
        for (std::size_t a = 1; a < n; ++a) EXPECT_LE(m.eigenvalues[a - 1], m.eigenvalues[a]);
        for (std::size_t col = 0; col < n; ++col) {
            double worst = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                double lv = 0.0;
                for (std::size_t c = 0; c < n; ++c) lv += L(r, c) * m.eigenvectors(c, col);
                worst = std::max(worst, std::abs(lv - m.eigenvalues[col] * m.eigenvectors(r, col)));
            }
            EXPECT_LE(worst, 1e-8);
            for (std::size_t other = 0; other < n; ++other) {
                double dot = 0.0;
                for (std::size_t r = 0; r < n; ++r) dot += m.eigenvectors(r, col) * m.eigenvectors(r, other);
                EXPECT_NEAR(dot, col == other ? 1.0 : 0.0, 1e-8);
            }
            double big = 0.0;
            std::size_t pivot = 0;
            for (std::size_t r = 0; r < n; ++r) {
                if (std::abs(m.eigenvectors(r, col)) > big + 1e-12) {
                    big = std::abs(m.eigenvectors(r, col));
                    pivot = r;
                }
            }
            EXPECT_GT(m.eigenvectors(pivot, col), 0.0);
        }
        // Markers are eigenvector columns 2..c_l+1, zero padded.
        for (std::size_t c = 0; c < 16; ++c) {
            for (std::size_t r = 0; r < n; ++r) {
                const double expected = c + 1 < n ? m.eigenvectors(r, c + 1) : 0.0;
                EXPECT_EQ(m.markers(r, c), expected);
            }
        }
    }
}

TEST(LinkMarkers, ReconstructionSpectrumAndFullBasisIdentity) {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 30;
        const CellGraph g = build_knn_graph(random_points(n, rng), 1 + rng() % 6);
        const Matrix L = normalized_laplacian(g);
        const LinkMarkers m = link_markers(L, n, MarkerMode::FullBasis);
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double r = 0.0;
                for (std::size_t a = 0; a < n; ++a) r += m.eigenvectors(i, a) * m.eigenvalues[a] * m.eigenvectors(j, a);
                worst = std::max(worst, std::abs(r - L(i, j)));
            }
        }
        EXPECT_LE(worst, 1e-8);
        for (double a : m.eigenvalues) {
            EXPECT_GE(a, -1e-8);
            EXPECT_LE(a, 2.0 + 1e-8);
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double mij = 0.0, mii = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    mij += m.markers(i, c) * m.markers(j, c);
                    mii += m.markers(i, c) * m.markers(i, c);
                }
                EXPECT_NEAR(mij, i == j ? 1.0 : 0.0, 1e-6);
                if (g.linked(i, j) && i != j) EXPECT_NEAR(mij + mii, 1.0, 1e-6);
            }
        }
    }
}

TEST(LinkMarkers, PermutationEquivariance) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const auto pts = random_points(10, rng);
        std::vector<std::size_t> perm(10);
        for (std::size_t i = 0; i < 10; ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Point2> permuted(10);
        for (std::size_t i = 0; i < 10; ++i) permuted[i] = pts[perm[i]];
        const auto a = build_graph_bundle(pts, 3, 9);
        const auto b = build_graph_bundle(permuted, 3, 9);
        for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(a.markers.eigenvalues[i], b.markers.eigenvalues[i], 1e-9);
        // Columns with a simple eigenvalue match up to sign.
        for (std::size_t c = 0; c < 9; ++c) {
            const double lam = a.markers.eigenvalues[c + 1];
            const bool simple = std::abs(lam - a.markers.eigenvalues[c]) > 1e-6 &&
                                (c + 2 >= 10 || std::abs(a.markers.eigenvalues[c + 2] - lam) > 1e-6);
            if (!simple) continue;
            double same = 0.0, flipped = 0.0;
            for (std::size_t i = 0; i < 10; ++i) {
                same = std::max(same, std::abs(b.markers.markers(i, c) - a.markers.markers(perm[i], c)));
                flipped = std::max(flipped, std::abs(b.markers.markers(i, c) + a.markers.markers(perm[i], c)));
            }
            EXPECT_LE(std::min(same, flipped), 1e-7) << "column " << c;
        }
    }
}

TEST(GraphDump, RoundTripAndFields) {
    Rng rng(9);
    const auto b = build_graph_bundle(random_points(12, rng), 4, 16);
    const GraphDump d = make_graph_dump(b, "s00003");
    const auto path = std::filesystem::temp_directory_path() / "cgt_graph_dump_test.json";
    write_graph_dump(d, path);
    const GraphDump back = read_graph_dump(path);
    EXPECT_EQ(back.sample_id, "s00003");
    EXPECT_EQ(back.k, 4u);
    EXPECT_EQ(back.edges.size(), 48u);
    EXPECT_EQ(back.centroids, d.centroids);
    EXPECT_EQ(back.eigenvalues, d.eigenvalues);
    EXPECT_EQ(back.markers.data, d.markers.data);
    EXPECT_EQ(graph_dump_to_string(back), graph_dump_to_string(d));
    std::filesystem::remove(path);
}

TEST(GraphDump, ParseErrorsNameTheField) {
    try {
        parse_graph_dump(R"({"format":"cgt-graph","version":1,"n":1})", "dump.json");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("sample_id"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_graph_dump("{", "x"), ParseError);
}
