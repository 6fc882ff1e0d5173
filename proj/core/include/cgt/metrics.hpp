#pragma once

// Class-wise F-scores over node predictions whose centroids correspond
// one-to-one with the ground truth.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cgt {

struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::size_t> counts; // [true][pred], row-major

    explicit ConfusionMatrix(std::size_t b = 0) : classes(b), counts(b * b, 0) {}
    std::size_t operator()(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }
    /// Throws ContractError when either id is outside [0, classes).
    void add(int truth, int pred);
    void merge(const ConfusionMatrix& other);
    std::size_t total() const;
};

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels, std::size_t classes);

struct FScores {
    std::vector<double> per_class;
    double f_avg = 0.0;
};

/// Per-class F1 = 2PR / (P + R), 0 when P + R = 0; F_avg is the plain mean.
FScores fscores(const ConfusionMatrix& cm);
FScores fscores(std::span<const int> preds, std::span<const int> labels, std::size_t classes);

struct MetricsReport {
    std::string split;
    std::size_t samples = 0;
    ConfusionMatrix confusion;
    FScores scores;
    double loss = 0.0;
};

/// Structured JSON text, stable key order, trailing newline.
std::string report_to_json(const MetricsReport& report);
/// Short human-readable table.
std::string report_summary(const MetricsReport& report);

} // namespace cgt
