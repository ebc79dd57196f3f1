#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "qser/errors.hpp"

namespace qser {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class GradTape;

// Vectorised reductions peel a prefix up to the first aligned element, so
// their summation order depends on the buffer address. A fixed alignment
// keeps results bit-identical from run to run.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }
    bool operator==(const AlignedAllocator&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct TensorStorage {
    Shape shape;
    Buffer<T> data;
    Buffer<T> grad;  // empty until a gradient flows in
    bool requires_grad = false;
    std::uint64_t tape_session = 0;  // recording session of the producing op

    Buffer<T>& grad_buffer()
    {
        if (grad.empty())
            grad.assign(data.size(), T(0));
        return grad;
    }
};

/// Dense row-major array with shared ownership. Copies alias the same
/// storage; use clone() for a deep copy.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);
    Tensor(Shape shape, Buffer<T> values);

    bool defined() const noexcept { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    Buffer<T>& values() { return impl_->data; }
    const Buffer<T>& values() const { return impl_->data; }
    T item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool flag = true)
    {
        impl_->requires_grad = flag;
        return *this;
    }
    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient values; zeros if nothing has flowed in yet.
    std::span<const T> grad() const { return impl_->grad_buffer(); }
    std::span<T> grad_mut() { return impl_->grad_buffer(); }
    void zero_grad() { impl_->grad.clear(); }

    Tensor clone() const;
    /// Same values, new shape with equal element count; not recorded.
    Tensor reshaped(Shape shape) const;

    TensorStorage<T>& storage() const { return *impl_; }
    const std::shared_ptr<TensorStorage<T>>& handle() const { return impl_; }

private:
    std::shared_ptr<TensorStorage<T>> impl_;
};

/// Records differentiable operations executed on the current thread while it
/// is alive, then replays them in reverse to accumulate gradients.
///
/// Tapes nest: the innermost live tape is the active one. Each thread has its
/// own stack, so independent training contexts can run concurrently.
class GradTape {
public:
    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    /// Populates grad() of every requires_grad tensor reachable from loss.
    /// loss must be a single-element tensor recorded on this tape. The tape
    /// is cleared afterwards.
    template <typename T>
    void backward(const Tensor<T>& loss);

    std::size_t size() const noexcept { return entries_.size(); }
    void clear() noexcept;

    static GradTape* active() noexcept;
    void push(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
    /// Identifies the current recording; changes once the tape is consumed.
    std::uint64_t session() const noexcept { return session_; }

private:
    void replay();

    std::vector<std::function<void()>> entries_;
    GradTape* previous_;
    std::uint64_t session_;
};

/// Suspends recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    GradTape* saved_;
};

template <typename T>
void GradTape::backward(const Tensor<T>& loss)
{
    if (!loss.defined() || loss.numel() != 1)
        throw UsageError("backward() needs a single-element loss tensor");
    if (loss.storage().tape_session != session_)
        throw UsageError("backward() called on a tensor not recorded by this tape (or tape already consumed)");
    loss.storage().grad_buffer()[0] = T(1);
    replay();
}

namespace detail {
/// Marks out as differentiable and records fn if a tape is active and any
/// input requires a gradient. Returns whether recording happened.
template <typename T>
bool record(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, std::function<void()> fn)
{
    GradTape* tape = GradTape::active();
    if (tape == nullptr)
        return false;
    bool any = false;
    for (const auto* in : inputs)
        any = any || (in != nullptr && in->defined() && in->requires_grad());
    if (!any)
        return false;
    out.storage().requires_grad = true;
    out.storage().tape_session = tape->session();
    tape->push(std::move(fn));
    return true;
}
}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace qser
