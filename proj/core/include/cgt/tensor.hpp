#pragma once

// Dense float64 tensors with a thread-local reverse-mode tape.
//
// A Tensor is a shared handle: copies alias the same storage. Operations in
// ops.hpp record themselves on the calling thread's Tape whenever gradient
// mode is enabled and at least one input requires a gradient. backward()
// walks the tape in exact reverse recording order, which is a valid
// topological order because every op's inputs exist before the op runs.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cgt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until a gradient reaches this tensor
    bool requires_grad = false;
};

} // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    /// Writable view of the storage. Only leaves (parameters, inputs) may be
    /// mutated, and never while a recorded op still refers to them.
    std::span<double> values_mut();
    double item() const;
    double at(std::size_t i) const;
    double at(std::size_t i, std::size_t j) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const double> grad() const;
    /// Gradient buffer, allocated as zeros on first access.
    std::span<double> grad_mut();
    void zero_grad();

    /// Value copy with no tape linkage and requires_grad = false.
    Tensor detach() const;

    detail::TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend class Tape;
    friend Tensor make_tensor(Shape shape, std::vector<double> values);
};

/// Wraps freshly computed values into a new (non-recorded) tensor.
Tensor make_tensor(Shape shape, std::vector<double> values);

class Tape {
public:
    /// Receives the finished output; reads its grad and pushes into inputs.
    using BackwardFn = std::function<void(const detail::TensorImpl& out)>;

    /// The tape of the calling thread.
    static Tape& current();

    /// True when some input requires a gradient and gradient mode is on.
    static bool should_record(std::initializer_list<const Tensor*> inputs);
    static bool should_record(std::span<const Tensor> inputs);

    /// Appends an op. Marks `output` as requiring a gradient.
    void record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn);

    /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule in
    /// reverse order, then clears the tape. Gradients accumulate additively.
    void backward(const Tensor& loss);

    void clear();
    std::size_t size() const { return entries_.size(); }

private:
    struct Entry {
        std::shared_ptr<detail::TensorImpl> output;
        std::vector<Tensor> inputs;
        BackwardFn fn;
    };
    std::vector<Entry> entries_;
};

/// Runs Tape::current().backward(loss).
void backward(const Tensor& loss);

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

namespace detail {

/// Gradient buffer of `t` if it participates in differentiation, else empty.
std::span<double> grad_sink(const Tensor& t);

} // namespace detail

} // namespace cgt
