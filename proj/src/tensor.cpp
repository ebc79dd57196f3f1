#include "qser/tensor.hpp"

#include <atomic>
#include <sstream>

namespace qser {

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape)
        n *= d;
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorStorage<T>>())
{
    for (auto d : shape)
        if (d == 0)
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorStorage<T>>())
{
    if (shape_numel(shape) != values.size())
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data.assign(values.begin(), values.end());
}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> values) : impl_(std::make_shared<TensorStorage<T>>())
{
    if (shape_numel(shape) != values.size())
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

template <typename T>
T Tensor<T>::item() const
{
    if (numel() != 1)
        throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const
{
    Tensor out(impl_->shape, impl_->data);
    out.impl_->requires_grad = impl_->requires_grad;
    return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), impl_->data);
}

template class Tensor<float>;
template class Tensor<double>;

namespace {
thread_local GradTape* current_tape = nullptr;
std::atomic<std::uint64_t> next_session{1};
}  // namespace

GradTape::GradTape() : previous_(current_tape), session_(next_session++) { current_tape = this; }

GradTape::~GradTape() { current_tape = previous_; }

GradTape* GradTape::active() noexcept { return current_tape; }

void GradTape::clear() noexcept
{
    entries_.clear();
    session_ = next_session++;
}

void GradTape::replay()
{
    // Entries were appended in execution order, which is a topological order
    // of the graph; the reverse visits every node once after all consumers.
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
        (*it)();
    clear();
}

NoGradGuard::NoGradGuard() : saved_(current_tape) { current_tape = nullptr; }

NoGradGuard::~NoGradGuard() { current_tape = saved_; }

}  // namespace qser
