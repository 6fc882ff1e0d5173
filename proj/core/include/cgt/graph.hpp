#pragma once

// k-nearest-neighbour cell graphs and normalised-Laplacian link markers.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cgt/matrix.hpp"
#include "cgt/ops.hpp"

namespace cgt {

/// Directed edge from a node to one of its nearest neighbours.
struct Edge {
    std::size_t from = 0;
    std::size_t to = 0;
    friend bool operator==(const Edge&, const Edge&) = default;
};

struct CellGraph {
    std::size_t n = 0;
    std::size_t k_requested = 0;
    /// Neighbours per node actually used: min(k_requested, n - 1).
    std::size_t k = 0;
    std::vector<Point2> centroids;
    /// D = k * n edges; node i owns rows [i*k, (i+1)*k), nearest first.
    std::vector<Edge> edges;
    /// Symmetric, zero-diagonal, n x n, entries 0/1.
    Matrix adjacency;

    std::size_t edge_count() const { return edges.size(); }
    bool linked(std::size_t i, std::size_t j) const { return adjacency(i, j) != 0.0; }
    /// Row sum of the adjacency (diagonal entry of the degree matrix).
    double degree(std::size_t i) const;
};

/// Euclidean k-NN graph; equal distances are ordered by smaller node index.
/// Throws ContractError for an empty point set or k == 0.
CellGraph build_knn_graph(std::span<const Point2> centroids, std::size_t k);

/// L = I - D^{-1/2} A D^{-1/2}; an isolated node contributes L_ii = 1.
Matrix normalized_laplacian(const CellGraph& graph);

enum class MarkerMode {
    /// Drop the first (smallest-eigenvalue) eigenvector, keep the next c_l.
    SkipTrivial,
    /// Keep eigenvectors from the first one onwards (c_l = n gives the full basis).
    FullBasis,
};

struct LinkMarkers {
    /// n x c_l; row i is node i's marker, zero-padded on the right if needed.
    Matrix markers;
    /// All n eigenvalues, ascending.
    std::vector<double> eigenvalues;
    /// n x n with column j the j-th eigenvector, each column sign-canonical.
    Matrix eigenvectors;
};

/// Full symmetric eigendecomposition of `laplacian` and marker extraction.
/// Sign convention: in each eigenvector the entry of largest magnitude is
/// positive, ties (within 1e-12) resolved towards the lowest index.
LinkMarkers link_markers(const Matrix& laplacian, std::size_t marker_dim,
                         MarkerMode mode = MarkerMode::SkipTrivial);

/// Convenience: build_knn_graph -> normalized_laplacian -> link_markers.
struct GraphBundle {
    CellGraph graph;
    LinkMarkers markers;
};
GraphBundle build_graph_bundle(std::span<const Point2> centroids, std::size_t k, std::size_t marker_dim);

// ---- graph dump (text, JSON) -----------------------------------------------

inline constexpr int kGraphDumpVersion = 1;

struct GraphDump {
    int version = kGraphDumpVersion;
    std::string sample_id;
    std::size_t n = 0;
    std::size_t k = 0;
    std::size_t k_effective = 0;
    std::vector<Point2> centroids;
    std::vector<Edge> edges;
    std::vector<double> eigenvalues;
    Matrix markers;
};

GraphDump make_graph_dump(const GraphBundle& bundle, std::string sample_id);
std::string graph_dump_to_string(const GraphDump& dump);
GraphDump parse_graph_dump(const std::string& text, const std::string& origin = "<memory>");
void write_graph_dump(const GraphDump& dump, const std::filesystem::path& path);
GraphDump read_graph_dump(const std::filesystem::path& path);

} // namespace cgt
