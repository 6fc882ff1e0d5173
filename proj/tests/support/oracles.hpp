#pragma once

// Independent reference implementations shared by unit and acceptance tests.

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cgt/data.hpp"
#include "cgt/graph.hpp"
#include "cgt/ops.hpp"
#include "cgt/params.hpp"
#include "cgt/tokenizer.hpp"

namespace cgt::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = true);
Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = true);

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst; // "input#idx analytic vs numeric"
};

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-4;
/// Relative error denominator floor: |a - n| / max(|a|, |n|, floor).
inline constexpr double kFdFloor = 1e-6;

/// Central finite differences of `loss_fn` (a scalar) with respect to the
/// values of every tensor in `inputs`. When `max_entries` > 0, at most that
/// many entries per input are checked, picked with `rng`.
GradCheck check_gradients(const std::function<Tensor()>& loss_fn, std::span<const Tensor> inputs,
                          std::size_t max_entries = 0, Rng* rng = nullptr, double h = kFdStep);

/// sum(Y * W) for a fixed random W of Y's shape: a generic scalar probe.
std::function<Tensor(const Tensor&)> random_projection(const Shape& shape, Rng& rng);

/// Exhaustive k-NN by repeated minimum scans (ties to the lower index).
std::vector<std::vector<std::size_t>> knn_oracle(std::span<const Point2> points, std::size_t k);

/// Direct scalar evaluation of the cross-entropy + focal node loss.
double node_loss_oracle(std::span<const double> probs, std::span<const int> labels, std::size_t classes,
                        std::span<const double> tau, double gamma);

/// Attention assembled from slice/matmul/softmax primitives.
Tensor composite_attention(const Tensor& qkv, std::size_t heads);

/// Tokens assembled with plain loops from the tokenizer's parameters.
struct NaiveTokens {
    std::vector<double> node; // n x 3C
    std::vector<double> edge; // D x 3C
};
NaiveTokens naive_tokens(const CellGraph& graph, const Tensor& feature_map, const LinkMarkers& markers,
                         const Tokenizer& tok);

/// Path graph 0 - 1 - ... - (n-1) as a directed edge list in both directions.
std::vector<Edge> path_edges(std::size_t n);

/// Appearance + neighbour-label naive-Bayes classifier fitted on `train`.
/// Neighbour labels are the ground-truth labels of the k nearest nuclei.
/// Returns F_avg on `test`.
double bayes_oracle_f_avg(std::span<const Sample> train, std::span<const Sample> test, std::size_t classes,
                          std::size_t k = 4);

} // namespace cgt::testing
