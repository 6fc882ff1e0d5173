#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "cgt/errors.hpp"
#include "cgt/ops.hpp"

namespace cgt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_rank2(const char* op, const Tensor& x) {
    if (x.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
    }
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& x, Fwd fwd, Bwd dfdx) {
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    Tensor result = make_tensor(x.shape(), std::move(out));
    if (Tape::should_record({&x})) {
        Tape::current().record(result, {x}, [x, dfdx](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            if (gx.empty()) return;
            const auto xv = x.values();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * dfdx(xv[i], o.value[i]);
        });
    }
    return result;
}

} // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    Tensor result = make_tensor(a.shape(), std::move(out));
    if (Tape::should_record({&a, &b})) {
        Tape::current().record(result, {a, b}, [a, b](const detail::TensorImpl& o) {
            for (const Tensor* t : {&a, &b}) {
                auto g = detail::grad_sink(*t);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
            }
        });
    }
    return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    Tensor result = make_tensor(a.shape(), std::move(out));
    if (Tape::should_record({&a, &b})) {
        Tape::current().record(result, {a, b}, [a, b](const detail::TensorImpl& o) {
            auto ga = detail::grad_sink(a);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
            auto gb = detail::grad_sink(b);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= o.grad[i];
        });
    }
    return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    Tensor result = make_tensor(a.shape(), std::move(out));
    if (Tape::should_record({&a, &b})) {
        Tape::current().record(result, {a, b}, [a, b](const detail::TensorImpl& o) {
            const auto av = a.values();
            const auto bv = b.values();
            auto ga = detail::grad_sink(a);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * bv[i];
            auto gb = detail::grad_sink(b);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * av[i];
        });
    }
    return result;
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape("div", a, b);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
    Tensor result = make_tensor(a.shape(), std::move(out));
    if (Tape::should_record({&a, &b})) {
        Tape::current().record(result, {a, b}, [a, b](const detail::TensorImpl& o) {
            const auto bv = b.values();
            auto ga = detail::grad_sink(a);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] / bv[i];
            auto gb = detail::grad_sink(b);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= o.grad[i] * o.value[i] / bv[i];
        });
    }
    return result;
}

Tensor scale(const Tensor& x, double factor) {
    return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
    return unary(x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
    // relu'(0) = 0
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor pow(const Tensor& x, double exponent) {
    return unary(
        x, [exponent](double v) { return std::pow(v, exponent); },
        [exponent](double v, double) {
            if (exponent == 0.0) return 0.0;
            return exponent * std::pow(v, exponent - 1.0);
        });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    return unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    Tensor result = make_tensor(Shape{}, {total});
    if (Tape::should_record({&x})) {
        Tape::current().record(result, {x}, [x](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (double& g : gx) g += o.grad[0];
        });
    }
    return result;
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) {
        throw DimensionError("mean of an empty tensor");
    }
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_rows(const Tensor& x) {
    require_rank2("sum_rows", x);
    const std::size_t m = x.dim(0), p = x.dim(1);
    const auto xv = x.values();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) out[i] += xv[i * p + j];
    }
    Tensor result = make_tensor(Shape{m}, std::move(out));
    if (Tape::should_record({&x})) {
        Tape::current().record(result, {x}, [x, m, p](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < p; ++j) gx[i * p + j] += o.grad[i];
            }
        });
    }
    return result;
}

Tensor sum_cols(const Tensor& x) {
    require_rank2("sum_cols", x);
    const std::size_t m = x.dim(0), p = x.dim(1);
    const auto xv = x.values();
    std::vector<double> out(p, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) out[j] += xv[i * p + j];
    }
    Tensor result = make_tensor(Shape{p}, std::move(out));
    if (Tape::should_record({&x})) {
        Tape::current().record(result, {x}, [x, m, p](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < p; ++j) gx[i * p + j] += o.grad[j];
            }
        });
    }
    return result;
}

// ---- linear algebra and shape ----------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const Eigen::Index m = static_cast<Eigen::Index>(a.dim(0));
    const Eigen::Index k = static_cast<Eigen::Index>(a.dim(1));
    const Eigen::Index p = static_cast<Eigen::Index>(b.dim(1));
    std::vector<double> out(static_cast<std::size_t>(m * p), 0.0);
    if (m > 0 && p > 0 && k > 0) {
        MapMat(out.data(), m, p).noalias() = ConstMapMat(a.values().data(), m, k) * ConstMapMat(b.values().data(), k, p);
    }
    Tensor result = make_tensor(Shape{a.dim(0), b.dim(1)}, std::move(out));
    if (Tape::should_record({&a, &b})) {
        Tape::current().record(result, {a, b}, [a, b, m, k, p](const detail::TensorImpl& o) {
            if (m == 0 || k == 0 || p == 0) return;
            ConstMapMat g(o.grad.data(), m, p);
            auto ga = detail::grad_sink(a);
            if (!ga.empty()) {
                MapMat(ga.data(), m, k).noalias() += g * ConstMapMat(b.values().data(), k, p).transpose();
            }
            auto gb = detail::grad_sink(b);
            if (!gb.empty()) {
                MapMat(gb.data(), k, p).noalias() += ConstMapMat(a.values().data(), m, k).transpose() * g;
            }
        });
    }
    return result;
}

Tensor transpose(const Tensor& x) {
    require_rank2("transpose", x);
    const std::size_t m = x.dim(0), p = x.dim(1);
    const auto xv = x.values();
    std::vector<double> out(m * p);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) out[j * m + i] = xv[i * p + j];
    }
    Tensor result = make_tensor(Shape{p, m}, std::move(out));
    if (Tape::should_record({&x})) {
        Tape::current().record(result, {x}, [x, m, p](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < p; ++j) gx[i * p + j] += o.grad[j * m + i];
            }
        });
    }
    return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    Tensor result = make_tensor(std::move(shape), std::move(out));
    if (Tape::should_record({&x})) {
        Tape::current().record(result, {x}, [x](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
        });
    }
    return result;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_rank2("add_bias", x);
    const std::size_t m = x.dim(0), p = x.dim(1);
    if (bias.numel() != p) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " for input " + shape_str(x.shape()));
    }
    const auto xv = x.values();
    const auto bv = bias.values();
    std::vector<double> out(m * p);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) out[i * p + j] = xv[i * p + j] + bv[j];
    }
    Tensor result = make_tensor(x.shape(), std::move(out));
    if (Tape::should_record({&x, &bias})) {
        Tape::current().record(result, {x, bias}, [x, bias, m, p](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
            auto gb = detail::grad_sink(bias);
            if (!gb.empty()) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < p; ++j) gb[j] += o.grad[i * p + j];
                }
            }
        });
    }
    return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_bias(y, bias) : y;
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) {
        throw DimensionError("concat_cols: no inputs");
    }
    const std::size_t m = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Tensor& t : parts) {
        if (t.rank() != 2 || t.dim(0) != m) {
            throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                                 shape_str(t.shape()));
        }
        widths.push_back(t.dim(1));
        total += t.dim(1);
    }
    std::vector<double> out(m * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto v = parts[k].values();
        const std::size_t w = widths[k];
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                        out.begin() + static_cast<std::ptrdiff_t>(i * total + offset));
        }
        offset += w;
    }
    Tensor result = make_tensor(Shape{m, total}, std::move(out));
    if (Tape::should_record(parts)) {
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        Tape::current().record(result, inputs, [inputs, widths, m, total](const detail::TensorImpl& o) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                const std::size_t w = widths[k];
                auto g = detail::grad_sink(inputs[k]);
                if (!g.empty()) {
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < w; ++j) g[i * w + j] += o.grad[i * total + offset + j];
                    }
                }
                offset += w;
            }
        });
    }
    return result;
}

Tensor concat_cols(std::initializer_list<Tensor> parts) {
    return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) {
        throw DimensionError("concat_rows: no inputs");
    }
    const std::size_t p = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
    std::size_t rows = 0;
    for (const Tensor& t : parts) {
        if (t.rank() != 2 || t.dim(1) != p) {
            throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                                 shape_str(t.shape()));
        }
        rows += t.dim(0);
    }
    std::vector<double> out;
    out.reserve(rows * p);
    for (const Tensor& t : parts) out.insert(out.end(), t.values().begin(), t.values().end());
    Tensor result = make_tensor(Shape{rows, p}, std::move(out));
    if (Tape::should_record(parts)) {
        std::vector<Tensor> inputs(parts.begin(), parts.end());
        Tape::current().record(result, inputs, [inputs](const detail::TensorImpl& o) {
            std::size_t offset = 0;
            for (const Tensor& t : inputs) {
                auto g = detail::grad_sink(t);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[offset + i];
                offset += t.numel();
            }
        });
    }
    return result;
}

Tensor concat_rows(std::initializer_list<Tensor> parts) {
    return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank2("slice_cols", x);
    const std::size_t m = x.dim(0), p = x.dim(1);
    if (begin > end || end > p) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") out of range for " + shape_str(x.shape()));
    }
    const std::size_t w = end - begin;
    const auto xv = x.values();
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * p + begin + j];
    }
    Tensor result = make_tensor(Shape{m, w}, std::move(out));
    if (Tape::should_record({&x})) {
        Tape::current().record(result, {x}, [x, m, p, w, begin](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < w; ++j) gx[i * p + begin + j] += o.grad[i * w + j];
            }
        });
    }
    return result;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank2("slice_rows", x);
    const std::size_t m = x.dim(0), p = x.dim(1);
    if (begin > end || end > m) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") out of range for " + shape_str(x.shape()));
    }
    const auto xv = x.values();
    std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * p),
                            xv.begin() + static_cast<std::ptrdiff_t>(end * p));
    Tensor result = make_tensor(Shape{end - begin, p}, std::move(out));
    if (Tape::should_record({&x})) {
        Tape::current().record(result, {x}, [x, begin, p](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (std::size_t i = 0; i < o.grad.size(); ++i) gx[begin * p + i] += o.grad[i];
        });
    }
    return result;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_rank2("gather_rows", x);
    const std::size_t m = x.dim(0), p = x.dim(1);
    const auto xv = x.values();
    std::vector<double> out(rows.size() * p);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= m) {
            throw ContractError("gather_rows: index " + std::to_string(rows[r]) + " out of range for " +
                                shape_str(x.shape()));
        }
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[r] * p), p,
                    out.begin() + static_cast<std::ptrdiff_t>(r * p));
    }
    Tensor result = make_tensor(Shape{rows.size(), p}, std::move(out));
    if (Tape::should_record({&x})) {
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        Tape::current().record(result, {x}, [x, idx = std::move(idx), p](const detail::TensorImpl& o) {
            auto gx = detail::grad_sink(x);
            for (std::size_t r = 0; r < idx.size(); ++r) {
                for (std::size_t j = 0; j < p; ++j) gx[idx[r] * p + j] += o.grad[r * p + j];
            }
        });
    }
    return result;
}

Tensor repeat_rows(const Tensor& row, std::size_t count) {
    const bool ok = (row.rank() == 1) || (row.rank() == 2 && row.dim(0) == 1);
    if (!ok) {
        throw DimensionError("repeat_rows: expected [p] or [1 x p], got " + shape_str(row.shape()));
    }
    const std::size_t p = row.numel();
    const auto rv = row.values();
    std::vector<double> out(count * p);
    for (std::size_t i = 0; i < count; ++i) std::copy(rv.begin(), rv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * p));
    Tensor result = make_tensor(Shape{count, p}, std::move(out));
    if (Tape::should_record({&row})) {
        Tape::current().record(result, {row}, [row, count, p](const detail::TensorImpl& o) {
            auto g = detail::grad_sink(row);
            for (std::size_t i = 0; i < count; ++i) {
                for (std::size_t j = 0; j < p; ++j) g[j] += o.grad[i * p + j];
            }
        });
    }
    return result;
}

} // namespace cgt
