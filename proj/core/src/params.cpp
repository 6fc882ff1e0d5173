#include "cgt/params.hpp"

#include <algorithm>
#include <cmath>

#include "cgt/errors.hpp"

namespace cgt {

void ParamSet::add(std::string name, const Tensor& tensor) {
    if (find(name)) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    items_.push_back(NamedParam{std::move(name), tensor});
}

void ParamSet::append(const ParamSet& other) {
    for (const auto& p : other.items()) add(p.name, p.tensor);
}

const Tensor* ParamSet::find(const std::string& name) const {
    for (const auto& p : items_) {
        if (p.name == name) return &p.tensor;
    }
    return nullptr;
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.numel();
    return n;
}

void ParamSet::zero_grad() const {
    for (const auto& p : items_) {
        Tensor t = p.tensor;
        t.zero_grad();
    }
}

void ParamSet::scale_grad(double factor) const {
    for (const auto& p : items_) {
        Tensor t = p.tensor;
        if (!t.has_grad()) continue;
        for (double& g : t.grad_mut()) g *= factor;
    }
}

std::size_t ParamSet::copy_values_from(const ParamSet& source, const std::string& prefix) const {
    std::size_t copied = 0;
    for (const auto& p : items_) {
        if (p.name.rfind(prefix, 0) != 0) continue;
        const Tensor* src = source.find(p.name);
        if (!src) continue;
        if (src->shape() != p.tensor.shape()) {
            throw ConfigError("parameter '" + p.name + "': shape " + shape_str(src->shape()) + " does not match " +
                              shape_str(p.tensor.shape()));
        }
        Tensor dst = p.tensor;
        auto out = dst.values_mut();
        auto in = src->values();
        std::copy(in.begin(), in.end(), out.begin());
        ++copied;
    }
    return copied;
}

Tensor init_uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), true);
}

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), true);
}

Tensor init_constant(Shape shape, double value) { return Tensor::full(std::move(shape), value, true); }

Adam::Adam(ParamSet params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_.items()) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const auto items = params_.items();
    for (std::size_t k = 0; k < items.size(); ++k) {
        Tensor t = items[k].tensor;
        const bool has = t.has_grad();
        auto g = t.grad();
        auto val = t.values_mut();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            val[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

} // namespace cgt
