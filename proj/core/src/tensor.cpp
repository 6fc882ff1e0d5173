#include "cgt/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "cgt/errors.hpp"

namespace cgt {

namespace {

thread_local bool g_grad_enabled = true;

const detail::TensorImpl& checked(const detail::TensorImpl* impl) {
    if (!impl) {
        throw ContractError("use of an undefined tensor");
    }
    return *impl;
}

} // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad)
    : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
    if (values.size() != shape_numel(shape)) {
        throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                             std::to_string(values.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->value = std::move(values);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return Tensor(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(Shape{}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
    const std::size_t m = rows.size();
    const std::size_t p = m ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(m * p);
    for (const auto& row : rows) {
        if (row.size() != p) {
            throw DimensionError("ragged matrix literal");
        }
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(Shape{m, p}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return checked(impl_.get()).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_.get()).value.size(); }

std::span<const double> Tensor::values() const { return checked(impl_.get()).value; }

std::span<double> Tensor::values_mut() {
    checked(impl_.get());
    return impl_->value;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->value[0];
}

double Tensor::at(std::size_t i) const { return values()[i]; }

double Tensor::at(std::size_t i, std::size_t j) const {
    if (rank() != 2) {
        throw DimensionError("at(i,j) on tensor of shape " + shape_str(shape()));
    }
    return impl_->value[i * impl_->shape[1] + j];
}

bool Tensor::requires_grad() const { return checked(impl_.get()).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    checked(impl_.get());
    impl_->requires_grad = flag;
}

bool Tensor::has_grad() const { return !checked(impl_.get()).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(impl_.get()).grad; }

std::span<double> Tensor::grad_mut() {
    checked(impl_.get());
    if (impl_->grad.empty()) {
        impl_->grad.assign(impl_->value.size(), 0.0);
    }
    return impl_->grad;
}

void Tensor::zero_grad() {
    checked(impl_.get());
    impl_->grad.clear();
}

Tensor Tensor::detach() const {
    const auto& src = checked(impl_.get());
    return Tensor(src.shape, src.value, false);
}

Tensor make_tensor(Shape shape, std::vector<double> values) {
    return Tensor(std::move(shape), std::move(values), false);
}

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

bool Tape::should_record(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : inputs) {
        if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

bool Tape::should_record(std::span<const Tensor> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor& t : inputs) {
        if (t.defined() && t.requires_grad()) return true;
    }
    return false;
}

void Tape::record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn) {
    output.impl_->requires_grad = true;
    entries_.push_back(Entry{output.impl_, std::move(inputs), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        clear();
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        clear();
        return;
    }
    auto& seed = loss.impl_->grad;
    if (seed.empty()) seed.assign(1, 0.0);
    seed[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        it->fn(*it->output);
    }
    clear();
}

void Tape::clear() { entries_.clear(); }

void backward(const Tensor& loss) { Tape::current().backward(loss); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace detail {

std::span<double> grad_sink(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) return {};
    auto* impl = t.impl();
    if (impl->grad.empty()) impl->grad.assign(impl->value.size(), 0.0);
    return impl->grad;
}

} // namespace detail

} // namespace cgt
