#include "cgt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "cgt/errors.hpp"

namespace cgt {

double CellGraph::degree(std::size_t i) const {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += adjacency(i, j);
    return d;
}

CellGraph build_knn_graph(std::span<const Point2> centroids, std::size_t k) {
    if (centroids.empty()) {
        throw ContractError("build_knn_graph: empty graph (no centroids)");
    }
    if (k == 0) {
        throw ContractError("build_knn_graph: k must be >= 1");
    }
    for (const Point2& p : centroids) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw ContractError("build_knn_graph: non-finite centroid coordinate");
        }
    }
    CellGraph g;
    g.n = centroids.size();
    g.k_requested = k;
    g.k = std::min(k, g.n - 1);
    g.centroids.assign(centroids.begin(), centroids.end());
    g.adjacency = Matrix(g.n, g.n);
    g.edges.reserve(g.n * g.k);

    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < g.n; ++j) {
            if (j == i) continue;
            const double dx = centroids[j].x - centroids[i].x;
            const double dy = centroids[j].y - centroids[i].y;
            cand.emplace_back(dx * dx + dy * dy, j);
        }
        const auto mid = cand.begin() + static_cast<std::ptrdiff_t>(g.k);
        std::partial_sort(cand.begin(), mid, cand.end());
        for (auto it = cand.begin(); it != mid; ++it) {
            g.edges.push_back(Edge{i, it->second});
            g.adjacency(i, it->second) = 1.0;
            g.adjacency(it->second, i) = 1.0;
        }
    }
    return g;
}

Matrix normalized_laplacian(const CellGraph& graph) {
    const std::size_t n = graph.n;
    std::vector<double> inv_sqrt(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = graph.degree(i);
        inv_sqrt[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
    }
    Matrix lap(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double ident = i == j ? 1.0 : 0.0;
            lap(i, j) = ident - inv_sqrt[i] * graph.adjacency(i, j) * inv_sqrt[j];
        }
    }
    return lap;
}

LinkMarkers link_markers(const Matrix& laplacian, std::size_t marker_dim, MarkerMode mode) {
    if (laplacian.rows != laplacian.cols) {
        throw DimensionError("link_markers: Laplacian must be square");
    }
    const std::size_t n = laplacian.rows;
    const auto ei = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd lap(ei, ei);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            lap(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = laplacian(i, j);
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
    if (solver.info() != Eigen::Success) {
        throw NumericError("link_markers: symmetric eigensolver did not converge (n = " + std::to_string(n) + ")");
    }
    const Eigen::VectorXd& values = solver.eigenvalues();
    Eigen::MatrixXd vectors = solver.eigenvectors();

    LinkMarkers out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Matrix(n, n);
    for (Eigen::Index col = 0; col < ei; ++col) {
        double best = 0.0;
        for (Eigen::Index r = 0; r < ei; ++r) best = std::max(best, std::abs(vectors(r, col)));
        Eigen::Index pivot = 0;
        for (Eigen::Index r = 0; r < ei; ++r) {
            if (std::abs(vectors(r, col)) >= best - 1e-12) {
                pivot = r;
                break;
            }
        }
        if (vectors(pivot, col) < 0.0) vectors.col(col) *= -1.0;
        out.eigenvalues[static_cast<std::size_t>(col)] = values(col);
        for (Eigen::Index r = 0; r < ei; ++r) {
            out.eigenvectors(static_cast<std::size_t>(r), static_cast<std::size_t>(col)) = vectors(r, col);
        }
    }

    const std::size_t first = mode == MarkerMode::SkipTrivial ? 1 : 0;
    out.markers = Matrix(n, marker_dim);
    for (std::size_t c = 0; c < marker_dim; ++c) {
        const std::size_t col = first + c;
        if (col >= n) break;
        for (std::size_t r = 0; r < n; ++r) out.markers(r, c) = out.eigenvectors(r, col);
    }
    return out;
}

GraphBundle build_graph_bundle(std::span<const Point2> centroids, std::size_t k, std::size_t marker_dim) {
    GraphBundle b;
    b.graph = build_knn_graph(centroids, k);
    b.markers = link_markers(normalized_laplacian(b.graph), marker_dim);
    return b;
}

// ---- dump ------------------------------------------------------------------

GraphDump make_graph_dump(const GraphBundle& bundle, std::string sample_id) {
    GraphDump d;
    d.sample_id = std::move(sample_id);
    d.n = bundle.graph.n;
    d.k = bundle.graph.k_requested;
    d.k_effective = bundle.graph.k;
    d.centroids = bundle.graph.centroids;
    d.edges = bundle.graph.edges;
    d.eigenvalues = bundle.markers.eigenvalues;
    d.markers = bundle.markers.markers;
    return d;
}

std::string graph_dump_to_string(const GraphDump& dump) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["format"] = "cgt-graph";
    j["version"] = dump.version;
    j["sample_id"] = dump.sample_id;
    j["n"] = dump.n;
    j["k"] = dump.k;
    j["k_effective"] = dump.k_effective;
    ordered_json cs = ordered_json::array();
    for (const Point2& p : dump.centroids) cs.push_back({p.x, p.y});
    j["centroids"] = std::move(cs);
    ordered_json es = ordered_json::array();
    for (const Edge& e : dump.edges) es.push_back({e.from, e.to});
    j["edge_list"] = std::move(es);
    j["eigenvalues"] = dump.eigenvalues;
    j["marker_dim"] = dump.markers.cols;
    ordered_json ms = ordered_json::array();
    for (std::size_t r = 0; r < dump.markers.rows; ++r) {
        ordered_json row = ordered_json::array();
        for (std::size_t c = 0; c < dump.markers.cols; ++c) row.push_back(dump.markers(r, c));
        ms.push_back(std::move(row));
    }
    j["markers"] = std::move(ms);
    return j.dump(1) + "\n";
}

GraphDump parse_graph_dump(const std::string& text, const std::string& origin) {
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(origin + ": invalid graph dump: " + e.what());
    }
    auto field = [&](const char* name) -> const json& {
        if (!j.contains(name)) throw ParseError(origin + ": missing field '" + std::string(name) + "'");
        return j.at(name);
    };
    try {
        if (field("format").get<std::string>() != "cgt-graph") {
            throw ParseError(origin + ": field 'format' is not cgt-graph");
        }
        GraphDump d;
        d.version = field("version").get<int>();
        if (d.version != kGraphDumpVersion) {
            throw ParseError(origin + ": unsupported graph dump version " + std::to_string(d.version));
        }
        d.sample_id = field("sample_id").get<std::string>();
        d.n = field("n").get<std::size_t>();
        d.k = field("k").get<std::size_t>();
        d.k_effective = field("k_effective").get<std::size_t>();
        for (const auto& c : field("centroids")) d.centroids.push_back(Point2{c.at(0).get<double>(), c.at(1).get<double>()});
        for (const auto& e : field("edge_list")) d.edges.push_back(Edge{e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()});
        d.eigenvalues = field("eigenvalues").get<std::vector<double>>();
        const std::size_t dim = field("marker_dim").get<std::size_t>();
        const auto& rows = field("markers");
        d.markers = Matrix(rows.size(), dim);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != dim) throw ParseError(origin + ": field 'markers' row " + std::to_string(r) + " has wrong width");
            for (std::size_t c = 0; c < dim; ++c) d.markers(r, c) = rows[r][c].get<double>();
        }
        if (d.centroids.size() != d.n || d.markers.rows != d.n || d.eigenvalues.size() != d.n) {
            throw ParseError(origin + ": field 'n' disagrees with centroids/markers/eigenvalues");
        }
        return d;
    } catch (const json::exception& e) {
        throw ParseError(origin + ": malformed graph dump: " + e.what());
    }
}

void write_graph_dump(const GraphDump& dump, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os << graph_dump_to_string(dump);
}

GraphDump read_graph_dump(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(path.string() + ": cannot open graph dump");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_graph_dump(ss.str(), path.string());
}

} // namespace cgt
