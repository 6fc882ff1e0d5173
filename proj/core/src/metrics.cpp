#include "cgt/metrics.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "cgt/errors.hpp"

namespace cgt {

void ConfusionMatrix::add(int truth, int pred) {
    const auto b = static_cast<long long>(classes);
    if (truth < 0 || truth >= b || pred < 0 || pred >= b) {
        throw ContractError("confusion matrix: class id pair (" + std::to_string(truth) + ", " + std::to_string(pred) +
                            ") outside [0, " + std::to_string(classes) + ")");
    }
    ++counts[static_cast<std::size_t>(truth) * classes + static_cast<std::size_t>(pred)];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes != classes) {
        throw ContractError("confusion matrix: cannot merge " + std::to_string(other.classes) + " classes into " +
                            std::to_string(classes));
    }
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

std::size_t ConfusionMatrix::total() const {
    std::size_t t = 0;
    for (std::size_t c : counts) t += c;
    return t;
}

ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels, std::size_t classes) {
    if (preds.size() != labels.size()) {
        throw ContractError("fscores: " + std::to_string(preds.size()) + " predictions for " +
                            std::to_string(labels.size()) + " labels");
    }
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < preds.size(); ++i) cm.add(labels[i], preds[i]);
    return cm;
}

FScores fscores(const ConfusionMatrix& cm) {
    const std::size_t b = cm.classes;
    FScores out;
    out.per_class.assign(b, 0.0);
    for (std::size_t c = 0; c < b; ++c) {
        const double tp = static_cast<double>(cm(c, c));
        double pred_c = 0.0, true_c = 0.0;
        for (std::size_t o = 0; o < b; ++o) {
            pred_c += static_cast<double>(cm(o, c));
            true_c += static_cast<double>(cm(c, o));
        }
        const double p = pred_c > 0.0 ? tp / pred_c : 0.0;
        const double r = true_c > 0.0 ? tp / true_c : 0.0;
        out.per_class[c] = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    double s = 0.0;
    for (double f : out.per_class) s += f;
    out.f_avg = b > 0 ? s / static_cast<double>(b) : 0.0;
    return out;
}

FScores fscores(std::span<const int> preds, std::span<const int> labels, std::size_t classes) {
    return fscores(confusion_matrix(preds, labels, classes));
}

namespace {

std::string fmt_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

} // namespace

std::string report_to_json(const MetricsReport& r) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["format"] = "cgt-metrics";
    j["version"] = 1;
    j["split"] = r.split;
    j["samples"] = r.samples;
    j["nuclei"] = r.confusion.total();
    j["loss"] = r.loss;
    ordered_json per = ordered_json::array();
    for (double f : r.scores.per_class) per.push_back(f);
    j["f_per_class"] = std::move(per);
    j["f_avg"] = r.scores.f_avg;
    ordered_json rows = ordered_json::array();
    for (std::size_t t = 0; t < r.confusion.classes; ++t) {
        ordered_json row = ordered_json::array();
        for (std::size_t p = 0; p < r.confusion.classes; ++p) row.push_back(r.confusion(t, p));
        rows.push_back(std::move(row));
    }
    j["confusion"] = std::move(rows);
    return j.dump(1) + "\n";
}

std::string report_summary(const MetricsReport& r) {
    std::ostringstream os;
    os << "split " << r.split << ": " << r.samples << " samples, " << r.confusion.total() << " nuclei\n";
    for (std::size_t c = 0; c < r.scores.per_class.size(); ++c) {
        os << "  F[" << c << "] = " << fmt_value(r.scores.per_class[c]) << "\n";
    }
    os << "  F_avg = " << fmt_value(r.scores.f_avg) << "\n";
    return os.str();
}

} // namespace cgt
