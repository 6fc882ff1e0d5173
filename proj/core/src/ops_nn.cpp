#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include <Eigen/Core>

#include "cgt/errors.hpp"
#include "cgt/ops.hpp"

namespace cgt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
    if (x.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(x.shape()));
    }
}

} // namespace

Tensor softmax_rows(const Tensor& x) {
    require_rank("softmax_rows", x, 2);
    const std::size_t m = x.dim(0), p = x.dim(1);
    const auto xv = x.values();
    std::vector<double> out(m * p);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = xv.data() + i * p;
        double* dst = out.data() + i * p;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < p; ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            dst[j] = std::exp(row[j] - mx);
            total += dst[j];
        }
        for (std::size_t j = 0; j < p; ++j) dst[j] /= total;
    }
    Tensor result = make_tensor(x.shape(), std::move(out));
    if (Tape::should_record({&x})) {
        Tape::current().record(result, {x}, [x, m, p](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = o.value.data() + i * p;
                const double* g = o.grad.data() + i * p;
                double dot = 0.0;
                for (std::size_t j = 0; j < p; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < p; ++j) gx[i * p + j] += y[j] * (g[j] - dot);
            }
        });
    }
    return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() == 0) {
        throw DimensionError("layer_norm: scalar input");
    }
    if (!(eps > 0.0)) {
        throw ConfigError("layer_norm: eps must be positive");
    }
    const std::size_t c = x.shape().back();
    if (gain.numel() != c || bias.numel() != c) {
        throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                             " for feature width " + std::to_string(c));
    }
    const std::size_t rows = c ? x.numel() / c : 0;
    const auto xv = x.values();
    const auto gv = gain.values();
    const auto bv = bias.values();
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = xv.data() + r * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += src[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (src[j] - mu) * (src[j] - mu);
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (src[j] - mu) * is;
            (*xhat)[r * c + j] = h;
            out[r * c + j] = h * gv[j] + bv[j];
        }
    }
    Tensor result = make_tensor(x.shape(), std::move(out));
    if (Tape::should_record({&x, &gain, &bias})) {
        Tape::current().record(result, {x, gain, bias}, [x, gain, bias, xhat, inv_std, rows, c](const detail::TensorImpl& o) {
            const auto gv = gain.values();
            auto gx = detail::grad_sink(x);
            auto gg = detail::grad_sink(gain);
            auto gb = detail::grad_sink(bias);
            const double inv_c = 1.0 / static_cast<double>(c);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* dy = o.grad.data() + r * c;
                const double* h = xhat->data() + r * c;
                if (!gg.empty()) for (std::size_t j = 0; j < c; ++j) gg[j] += dy[j] * h[j];
                if (!gb.empty()) for (std::size_t j = 0; j < c; ++j) gb[j] += dy[j];
                if (gx.empty()) continue;
                double s1 = 0.0, s2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dh = dy[j] * gv[j];
                    s1 += dh;
                    s2 += dh * h[j];
                }
                const double is = (*inv_std)[r];
                for (std::size_t j = 0; j < c; ++j) {
                    const double dh = dy[j] * gv[j];
                    gx[r * c + j] += is * (dh - inv_c * s1 - h[j] * inv_c * s2);
                }
            }
        });
    }
    return result;
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride, std::size_t pad) {
    require_rank("conv2d input", x, 3);
    require_rank("conv2d kernels", kernels, 4);
    const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    if (kernels.dim(1) != cin) {
        throw DimensionError("conv2d: kernels " + shape_str(kernels.shape()) + " for input " + shape_str(x.shape()));
    }
    if (kh % 2 == 0 || kw % 2 == 0) {
        throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(kh) + "x" + std::to_string(kw));
    }
    if (stride == 0) {
        throw ConfigError("conv2d: stride must be >= 1");
    }
    if (h + 2 * pad < kh || w + 2 * pad < kw) {
        throw ConfigError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
    }
    if (bias.defined() && bias.numel() != cout) {
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(cout) + " outputs");
    }
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
    const std::size_t kdim = cin * kh * kw;
    const std::size_t npix = ho * wo;

    // im2col: [kdim x npix]
    auto cols = std::make_shared<std::vector<double>>(kdim * npix, 0.0);
    const auto xv = x.values();
    for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                double* row = cols->data() + ((ci * kh + ky) * kw + kx) * npix;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        row[oy * wo + ox] = xv[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
    std::vector<double> out(cout * npix, 0.0);
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    MapMat(out.data(), ei(cout), ei(npix)).noalias() =
        ConstMapMat(kernels.values().data(), ei(cout), ei(kdim)) * ConstMapMat(cols->data(), ei(kdim), ei(npix));
    if (bias.defined()) {
        const auto bv = bias.values();
        for (std::size_t co = 0; co < cout; ++co) {
            for (std::size_t p = 0; p < npix; ++p) out[co * npix + p] += bv[co];
        }
    }
    Tensor result = make_tensor(Shape{cout, ho, wo}, std::move(out));
    if (Tape::should_record({&x, &kernels, &bias})) {
        std::vector<Tensor> inputs{x, kernels};
        if (bias.defined()) inputs.push_back(bias);
        Tape::current().record(result, inputs, [=](const detail::TensorImpl& o) {
            ConstMapMat g(o.grad.data(), ei(cout), ei(npix));
            auto gk = detail::grad_sink(kernels);
            if (!gk.empty()) {
                MapMat(gk.data(), ei(cout), ei(kdim)).noalias() += g * ConstMapMat(cols->data(), ei(kdim), ei(npix)).transpose();
            }
            if (bias.defined()) {
                auto gb = detail::grad_sink(bias);
                for (std::size_t co = 0; co < gb.size(); ++co) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < npix; ++p) s += o.grad[co * npix + p];
                    gb[co] += s;
                }
            }
            auto gx = detail::grad_sink(x);
            if (gx.empty()) return;
            RowMat dcols = ConstMapMat(kernels.values().data(), ei(cout), ei(kdim)).transpose() * g;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const double* row = dcols.data() + ((ci * kh + ky) * kw + kx) * npix;
                        for (std::size_t oy = 0; oy < ho; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                gx[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        });
    }
    return result;
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
    require_rank("max_pool2d", x, 3);
    if (window == 0) {
        throw ConfigError("max_pool2d: window must be >= 1");
    }
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t ho = h / window, wo = w / window;
    if (ho == 0 || wo == 0) {
        throw ConfigError("max_pool2d: window larger than input " + shape_str(x.shape()));
    }
    const auto xv = x.values();
    std::vector<double> out(c * ho * wo);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                std::size_t best = (ch * h + oy * window) * w + ox * window;
                for (std::size_t dy = 0; dy < window; ++dy) {
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        const std::size_t idx = (ch * h + oy * window + dy) * w + ox * window + dx;
                        if (xv[idx] > xv[best]) best = idx;
                    }
                }
                const std::size_t o = (ch * ho + oy) * wo + ox;
                out[o] = xv[best];
                (*argmax)[o] = best;
            }
        }
    }
    Tensor result = make_tensor(Shape{c, ho, wo}, std::move(out));
    if (Tape::should_record({&x})) {
        Tape::current().record(result, {x}, [x, argmax](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (std::size_t i = 0; i < o.grad.size(); ++i) gx[(*argmax)[i]] += o.grad[i];
        });
    }
    return result;
}

Tensor upsample_nearest2d(const Tensor& x, std::size_t factor) {
    require_rank("upsample_nearest2d", x, 3);
    if (factor == 0) {
        throw ConfigError("upsample_nearest2d: factor must be >= 1");
    }
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t ho = h * factor, wo = w * factor;
    const auto xv = x.values();
    std::vector<double> out(c * ho * wo);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t xx = 0; xx < wo; ++xx) {
                out[(ch * ho + y) * wo + xx] = xv[(ch * h + y / factor) * w + xx / factor];
            }
        }
    }
    Tensor result = make_tensor(Shape{c, ho, wo}, std::move(out));
    if (Tape::should_record({&x})) {
        Tape::current().record(result, {x}, [x, c, h, w, ho, wo, factor](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t y = 0; y < ho; ++y) {
                    for (std::size_t xx = 0; xx < wo; ++xx) {
                        gx[(ch * h + y / factor) * w + xx / factor] += o.grad[(ch * ho + y) * wo + xx];
                    }
                }
            }
        });
    }
    return result;
}

Tensor grid_sample_bilinear(const Tensor& map, std::span<const Point2> grid_points) {
    require_rank("grid_sample_bilinear", map, 3);
    const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
    if (h == 0 || w == 0) {
        throw DimensionError("grid_sample_bilinear: empty map " + shape_str(map.shape()));
    }
    struct Tap {
        std::size_t idx[4];
        double wt[4];
    };
    auto taps = std::make_shared<std::vector<Tap>>(grid_points.size());
    const auto mv = map.values();
    const std::size_t plane = h * w;
    std::vector<double> out(grid_points.size() * c);
    for (std::size_t n = 0; n < grid_points.size(); ++n) {
        const double gx = std::clamp(grid_points[n].x, 0.0, static_cast<double>(w - 1));
        const double gy = std::clamp(grid_points[n].y, 0.0, static_cast<double>(h - 1));
        const std::size_t x0 = std::min(static_cast<std::size_t>(std::floor(gx)), w - 1);
        const std::size_t y0 = std::min(static_cast<std::size_t>(std::floor(gy)), h - 1);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fx = gx - static_cast<double>(x0);
        const double fy = gy - static_cast<double>(y0);
        Tap& t = (*taps)[n];
        t.idx[0] = y0 * w + x0;
        t.idx[1] = y0 * w + x1;
        t.idx[2] = y1 * w + x0;
        t.idx[3] = y1 * w + x1;
        t.wt[0] = (1.0 - fx) * (1.0 - fy);
        t.wt[1] = fx * (1.0 - fy);
        t.wt[2] = (1.0 - fx) * fy;
        t.wt[3] = fx * fy;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* p = mv.data() + ch * plane;
            out[n * c + ch] = t.wt[0] * p[t.idx[0]] + t.wt[1] * p[t.idx[1]] + t.wt[2] * p[t.idx[2]] + t.wt[3] * p[t.idx[3]];
        }
    }
    Tensor result = make_tensor(Shape{grid_points.size(), c}, std::move(out));
    if (Tape::should_record({&map})) {
        Tape::current().record(result, {map}, [map, taps, c, plane](const detail::TensorImpl& o) {
            auto gm = detail::grad_sink(map);
            for (std::size_t n = 0; n < taps->size(); ++n) {
                const Tap& t = (*taps)[n];
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double g = o.grad[n * c + ch];
                    double* p = gm.data() + ch * plane;
                    for (int k = 0; k < 4; ++k) p[t.idx[k]] += t.wt[k] * g;
                }
            }
        });
    }
    return result;
}

Tensor multi_head_attention(const Tensor& qkv, std::size_t heads, AttentionProbe* probe) {
    require_rank("multi_head_attention", qkv, 2);
    const std::size_t t = qkv.dim(0);
    if (heads == 0 || qkv.dim(1) % (3 * heads) != 0) {
        throw DimensionError("multi_head_attention: packed width " + std::to_string(qkv.dim(1)) +
                             " not divisible into 3 x " + std::to_string(heads) + " heads");
    }
    const std::size_t c = qkv.dim(1) / 3;
    const std::size_t dh = c / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
    const Eigen::OuterStride<> in_stride(ei(3 * c));
    const Eigen::OuterStride<> out_stride(ei(c));

    auto probs = std::make_shared<std::vector<RowMat>>(heads);
    std::vector<double> out(t * c, 0.0);
    const double* base = qkv.values().data();
    for (std::size_t hd = 0; hd < heads; ++hd) {
        ConstStridedMap q(base + hd * dh, ei(t), ei(dh), in_stride);
        ConstStridedMap k(base + c + hd * dh, ei(t), ei(dh), in_stride);
        ConstStridedMap v(base + 2 * c + hd * dh, ei(t), ei(dh), in_stride);
        RowMat s = (q * k.transpose()) * scale;
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            const double mx = s.row(i).maxCoeff();
            s.row(i) = (s.row(i).array() - mx).exp();
            s.row(i) /= s.row(i).sum();
        }
        StridedMap(out.data() + hd * dh, ei(t), ei(dh), out_stride).noalias() = s * v;
        (*probs)[hd] = std::move(s);
    }
    if (probe) {
        probe->tokens = t;
        probe->heads = heads;
        probe->probs.clear();
        probe->probs.reserve(heads * t * t);
        for (const RowMat& p : *probs) probe->probs.insert(probe->probs.end(), p.data(), p.data() + p.size());
    }
    Tensor result = make_tensor(Shape{t, c}, std::move(out));
    if (Tape::should_record({&qkv})) {
        Tape::current().record(result, {qkv}, [=](const detail::TensorImpl& o) {
            auto gq = detail::grad_sink(qkv);
            const double* base = qkv.values().data();
            for (std::size_t hd = 0; hd < heads; ++hd) {
                const RowMat& p = (*probs)[hd];
                ConstStridedMap q(base + hd * dh, ei(t), ei(dh), in_stride);
                ConstStridedMap k(base + c + hd * dh, ei(t), ei(dh), in_stride);
                ConstStridedMap v(base + 2 * c + hd * dh, ei(t), ei(dh), in_stride);
                ConstStridedMap go(o.grad.data() + hd * dh, ei(t), ei(dh), out_stride);
                StridedMap dq(gq.data() + hd * dh, ei(t), ei(dh), in_stride);
                StridedMap dk(gq.data() + c + hd * dh, ei(t), ei(dh), in_stride);
                StridedMap dv(gq.data() + 2 * c + hd * dh, ei(t), ei(dh), in_stride);
                dv.noalias() += p.transpose() * go;
                RowMat dp = go * v.transpose();
                const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
                dp = (p.array() * (dp.array().colwise() - rowdot.array())) * scale;
                dq.noalias() += dp * k;
                dk.noalias() += dp.transpose() * q;
            }
        });
    }
    return result;
}

Tensor softmax_aggregate(const Tensor& messages, std::span<const std::size_t> targets, std::size_t nodes,
                         std::vector<double>* weights_out) {
    require_rank("softmax_aggregate", messages, 2);
    const std::size_t e = messages.dim(0), c = messages.dim(1);
    if (targets.size() != e) {
        throw DimensionError("softmax_aggregate: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(e) + " messages");
    }
    for (std::size_t tgt : targets) {
        if (tgt >= nodes) {
            throw ContractError("softmax_aggregate: target " + std::to_string(tgt) + " >= node count " +
                                std::to_string(nodes));
        }
    }
    const auto mv = messages.values();
    std::vector<double> mx(nodes * c, -std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < e; ++k) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double& m = mx[targets[k] * c + ch];
            m = std::max(m, mv[k * c + ch]);
        }
    }
    auto weights = std::make_shared<std::vector<double>>(e * c);
    std::vector<double> denom(nodes * c, 0.0);
    for (std::size_t k = 0; k < e; ++k) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double z = std::exp(mv[k * c + ch] - mx[targets[k] * c + ch]);
            (*weights)[k * c + ch] = z;
            denom[targets[k] * c + ch] += z;
        }
    }
    std::vector<double> out(nodes * c, 0.0);
    for (std::size_t k = 0; k < e; ++k) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double& wt = (*weights)[k * c + ch];
            wt /= denom[targets[k] * c + ch];
            out[targets[k] * c + ch] += wt * mv[k * c + ch];
        }
    }
    if (weights_out) *weights_out = *weights;
    Tensor result = make_tensor(Shape{nodes, c}, std::move(out));
    if (Tape::should_record({&messages})) {
        std::vector<std::size_t> tg(targets.begin(), targets.end());
        Tape::current().record(result, {messages}, [messages, weights, tg = std::move(tg), e, c](const detail::TensorImpl& o) {
            auto gm = detail::grad_sink(messages);
            const auto mv = messages.values();
            for (std::size_t k = 0; k < e; ++k) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t oi = tg[k] * c + ch;
                    const double wt = (*weights)[k * c + ch];
                    gm[k * c + ch] += o.grad[oi] * wt * (1.0 + mv[k * c + ch] - o.value[oi]);
                }
            }
        });
    }
    return result;
}

} // namespace cgt
