#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <unistd.h>

#include "cgt/metrics.hpp"

namespace cgt::testing {

TempDir::TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cgt_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

Tensor random_tensor(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    std::normal_distribution<double> nd(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = nd(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
    std::uniform_real_distribution<double> ud(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = ud(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

GradCheck check_gradients(const std::function<Tensor()>& loss_fn, std::span<const Tensor> inputs,
                          std::size_t max_entries, Rng* rng, double h) {
    for (const Tensor& t : inputs) {
        Tensor(t).zero_grad();
    }
    Tensor loss = loss_fn();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const Tensor& t : inputs) {
        if (t.has_grad()) {
            analytic.emplace_back(t.grad().begin(), t.grad().end());
        } else {
            analytic.emplace_back(t.numel(), 0.0);
        }
    }
    GradCheck out;
    NoGradGuard guard;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor t = inputs[k];
        std::vector<std::size_t> idx(t.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (max_entries > 0 && idx.size() > max_entries) {
            std::shuffle(idx.begin(), idx.end(), *rng);
            idx.resize(max_entries);
        }
        for (std::size_t i : idx) {
            auto v = t.values_mut();
            const double orig = v[i];
            v[i] = orig + h;
            const double fp = loss_fn().item();
            v[i] = orig - h;
            const double fm = loss_fn().item();
            v[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[k][i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kFdFloor});
            ++out.checked;
            if (rel > out.max_rel_error) {
                out.max_rel_error = rel;
                out.worst = "input " + std::to_string(k) + "[" + std::to_string(i) + "] analytic " +
                            std::to_string(a) + " numeric " + std::to_string(numeric);
            }
        }
    }
    for (const Tensor& t : inputs) Tensor(t).zero_grad();
    return out;
}

std::function<Tensor(const Tensor&)> random_projection(const Shape& shape, Rng& rng) {
    Tensor w = random_tensor(shape, rng, 1.0, false);
    return [w](const Tensor& y) { return sum(mul(y, w)); };
}

std::vector<std::vector<std::size_t>> knn_oracle(std::span<const Point2> points, std::size_t k) {
    const std::size_t n = points.size();
    const std::size_t kk = std::min(k, n == 0 ? 0 : n - 1);
    std::vector<std::vector<std::size_t>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<bool> taken(n, false);
        taken[i] = true;
        for (std::size_t r = 0; r < kk; ++r) {
            std::size_t best = n;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                if (taken[j]) continue;
                const double d = std::hypot(points[j].x - points[i].x, points[j].y - points[i].y);
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            taken[best] = true;
            out[i].push_back(best);
        }
    }
    return out;
}

double node_loss_oracle(std::span<const double> probs, std::span<const int> labels, std::size_t classes,
                        std::span<const double> tau, double gamma) {
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double ce = 0.0, focal = 0.0;
        for (std::size_t b = 0; b < classes; ++b) {
            const double y = static_cast<std::size_t>(labels[i]) == b ? 1.0 : 0.0;
            const double p = std::clamp(probs[i * classes + b], 1e-12, 1.0);
            ce += -y * std::log(p);
            focal += -tau[b] * std::pow(1.0 - p, gamma) * y * std::log(p);
        }
        total += ce + focal;
    }
    return total / static_cast<double>(labels.size());
}

Tensor composite_attention(const Tensor& qkv, std::size_t heads) {
    const std::size_t c = qkv.dim(1) / 3;
    const std::size_t dh = c / heads;
    std::vector<Tensor> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor q = slice_cols(qkv, h * dh, (h + 1) * dh);
        const Tensor k = slice_cols(qkv, c + h * dh, c + (h + 1) * dh);
        const Tensor v = slice_cols(qkv, 2 * c + h * dh, 2 * c + (h + 1) * dh);
        const Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
        outs.push_back(matmul(softmax_rows(scores), v));
    }
    return concat_cols(outs);
}

namespace {

std::vector<double> sample_map(const Tensor& map, double px, double py) {
    const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
    const double gx = std::clamp(px / 4.0, 0.0, static_cast<double>(w - 1));
    const double gy = std::clamp(py / 4.0, 0.0, static_cast<double>(h - 1));
    const auto x0 = static_cast<std::size_t>(gx), y0 = static_cast<std::size_t>(gy);
    const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = gx - static_cast<double>(x0), fy = gy - static_cast<double>(y0);
    std::vector<double> out(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        auto at = [&](std::size_t y, std::size_t x) { return map.at(ch * h * w + y * w + x); };
        out[ch] = (1 - fx) * (1 - fy) * at(y0, x0) + fx * (1 - fy) * at(y0, x1) + (1 - fx) * fy * at(y1, x0) +
                  fx * fy * at(y1, x1);
    }
    return out;
}

std::vector<double> posenc(double x, double y, std::size_t c) {
    std::vector<double> out;
    const std::size_t half = c / 2;
    for (double v : {x, y}) {
        for (std::size_t t = 0; t < half / 2; ++t) {
            const double denom = std::pow(10000.0, 2.0 * static_cast<double>(t) / static_cast<double>(half));
            out.push_back(std::sin(v / denom));
            out.push_back(std::cos(v / denom));
        }
    }
    return out;
}

std::vector<double> affine(const std::vector<double>& in, const Tensor& w, const Tensor& b) {
    const std::size_t out_dim = w.dim(1);
    std::vector<double> out(out_dim);
    for (std::size_t o = 0; o < out_dim; ++o) {
        double s = b.at(o);
        for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * w.at(i * out_dim + o);
        out[o] = s;
    }
    return out;
}

} // namespace

NaiveTokens naive_tokens(const CellGraph& graph, const Tensor& feature_map, const LinkMarkers& markers,
                         const Tokenizer& tok) {
    const std::size_t cf = feature_map.dim(0);
    const std::size_t cl = markers.markers.cols;
    NaiveTokens out;
    auto emit = [&](std::vector<double>& dst, const std::vector<double>& a, const std::vector<double>& b,
                    const Tensor& marker) {
        dst.insert(dst.end(), a.begin(), a.end());
        dst.insert(dst.end(), b.begin(), b.end());
        for (std::size_t i = 0; i < marker.numel(); ++i) dst.push_back(marker.at(i));
    };
    for (std::size_t i = 0; i < graph.n; ++i) {
        const Point2 p = graph.centroids[i];
        std::vector<double> zr = sample_map(feature_map, p.x, p.y);
        const auto pe = posenc(p.x, p.y, cf);
        zr.insert(zr.end(), pe.begin(), pe.end());
        std::vector<double> link;
        for (int rep = 0; rep < 2; ++rep) {
            for (std::size_t c = 0; c < cl; ++c) link.push_back(markers.markers(i, c));
        }
        emit(out.node, affine(zr, tok.node_proj_w, tok.node_proj_b), affine(link, tok.link_proj_w, tok.link_proj_b),
             tok.node_marker);
    }
    for (const Edge& e : graph.edges) {
        const Point2 a = graph.centroids[e.from], b = graph.centroids[e.to];
        const std::vector<double> z = sample_map(feature_map, (a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
        std::vector<double> link;
        for (std::size_t c = 0; c < cl; ++c) link.push_back(markers.markers(e.from, c));
        for (std::size_t c = 0; c < cl; ++c) link.push_back(markers.markers(e.to, c));
        emit(out.edge, affine(z, tok.edge_proj_w, tok.edge_proj_b), affine(link, tok.link_proj_w, tok.link_proj_b),
             tok.edge_marker);
    }
    return out;
}

std::vector<Edge> path_edges(std::size_t n) {
    std::vector<Edge> e;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        e.push_back(Edge{i, i + 1});
        e.push_back(Edge{i + 1, i});
    }
    return e;
}

namespace {

std::vector<std::array<double, 3>> nucleus_colours(const Sample& s) {
    std::vector<std::array<double, 3>> out;
    const std::size_t hw = s.width * s.height;
    for (const Point2& p : s.centroids) {
        std::array<double, 3> acc{0, 0, 0};
        double count = 0;
        for (std::size_t y = 0; y < s.height; ++y) {
            for (std::size_t x = 0; x < s.width; ++x) {
                if (std::hypot(static_cast<double>(x) - p.x, static_cast<double>(y) - p.y) > 1.5) continue;
                for (std::size_t ch = 0; ch < 3; ++ch) acc[ch] += s.image[ch * hw + y * s.width + x];
                ++count;
            }
        }
        for (double& a : acc) a /= std::max(count, 1.0);
        out.push_back(acc);
    }
    return out;
}

} // namespace

double bayes_oracle_f_avg(std::span<const Sample> train, std::span<const Sample> test, std::size_t classes,
                          std::size_t k) {
    std::vector<double> prior(classes, 1.0);
    std::vector<std::array<double, 3>> mean(classes, {0, 0, 0}), var(classes, {0, 0, 0});
    std::vector<std::vector<double>> nb(classes, std::vector<double>(classes, 1.0));
    std::vector<std::vector<std::array<double, 3>>> colours;
    for (const Sample& s : train) colours.push_back(nucleus_colours(s));
    for (std::size_t si = 0; si < train.size(); ++si) {
        const Sample& s = train[si];
        const auto g = build_knn_graph(s.centroids, k);
        for (std::size_t i = 0; i < s.nuclei(); ++i) {
            const auto c = static_cast<std::size_t>(s.labels[i]);
            prior[c] += 1.0;
            for (std::size_t ch = 0; ch < 3; ++ch) mean[c][ch] += colours[si][i][ch];
        }
        for (const Edge& e : g.edges) nb[static_cast<std::size_t>(s.labels[e.from])][static_cast<std::size_t>(s.labels[e.to])] += 1.0;
    }
    for (std::size_t c = 0; c < classes; ++c) {
        for (double& m : mean[c]) m /= prior[c];
    }
    for (std::size_t si = 0; si < train.size(); ++si) {
        for (std::size_t i = 0; i < train[si].nuclei(); ++i) {
            const auto c = static_cast<std::size_t>(train[si].labels[i]);
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double d = colours[si][i][ch] - mean[c][ch];
                var[c][ch] += d * d;
            }
        }
    }
    for (std::size_t c = 0; c < classes; ++c) {
        for (double& v : var[c]) v = v / prior[c] + 1e-6;
        double row = 0;
        for (double x : nb[c]) row += x;
        for (double& x : nb[c]) x = std::log(x / row);
    }
    double total = 0;
    for (double p : prior) total += p;

    std::vector<int> preds, labels;
    for (const Sample& s : test) {
        const auto col = nucleus_colours(s);
        const auto g = build_knn_graph(s.centroids, k);
        for (std::size_t i = 0; i < s.nuclei(); ++i) {
            double best = -std::numeric_limits<double>::infinity();
            int arg = 0;
            for (std::size_t c = 0; c < classes; ++c) {
                double score = std::log(prior[c] / total);
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    const double d = col[i][ch] - mean[c][ch];
                    score += -0.5 * d * d / var[c][ch] - 0.5 * std::log(var[c][ch]);
                }
                for (const Edge& e : g.edges) {
                    if (e.from == i) score += nb[c][static_cast<std::size_t>(s.labels[e.to])];
                }
                if (score > best) {
                    best = score;
                    arg = static_cast<int>(c);
                }
            }
            preds.push_back(arg);
            labels.push_back(s.labels[i]);
        }
    }
    return fscores(preds, labels, classes).f_avg;
}

} // namespace cgt::testing
