#pragma once

#include <memory>
#include <string>
#include <vector>

#include "qser/ops.hpp"
#include "qser/rng.hpp"
#include "qser/tensor.hpp"

/// Real-valued layers with named, checkpointable state.
namespace qser::nn {

using ops::Pair;

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;  // false for running statistics
};

/// Per-forward switches shared by every layer of a model.
struct Context {
    bool training = false;
    Rng* rng = nullptr;  // required by dropout in training mode
};

template <typename T>
class Module {
public:
    virtual ~Module() = default;

    /// Appends this module's tensors under prefix (e.g. "encoder.conv1.").
    virtual void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) = 0;

    std::vector<NamedTensor<T>> named_tensors(const std::string& prefix = "");
    /// Trainable tensors only.
    std::vector<NamedTensor<T>> parameters(const std::string& prefix = "");
    std::size_t parameter_count();
    void set_requires_grad(bool flag);
};

template <typename T>
class Layer : public Module<T> {
public:
    virtual Tensor<T> forward(const Tensor<T>& x, Context& ctx) = 0;
};

/// Glorot/Xavier uniform limit sqrt(6 / (fan_in + fan_out)).
double glorot_limit(std::size_t fan_in, std::size_t fan_out);
template <typename T>
void fill_uniform(Tensor<T>& t, double limit, Rng& rng);

template <typename T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, Pair kernel, Pair stride, Pair padding,
           bool bias, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x, Context& ctx) override;
    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

    Tensor<T> weight;  // [out, in, kh, kw]
    Tensor<T> bias;    // [out] or undefined
    Pair stride, padding;
};

template <typename T>
class ConvTranspose2d final : public Layer<T> {
public:
    ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, Pair kernel, Pair stride,
                    Pair padding, Pair output_padding, bool bias, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x, Context& ctx) override;
    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

    Tensor<T> weight;  // [in, out, kh, kw]
    Tensor<T> bias;
    Pair stride, padding, output_padding;
};

template <typename T>
class Dense final : public Layer<T> {
public:
    Dense(std::size_t in_features, std::size_t out_features, bool bias, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x, Context& ctx) override;
    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

    Tensor<T> weight;  // [out, in]
    Tensor<T> bias;
};

/// Per-channel batch norm; on quaternion tensors this is the split form.
template <typename T>
class BatchNorm final : public Layer<T> {
public:
    explicit BatchNorm(std::size_t channels, double momentum = 0.1, double eps = 1e-5);
    Tensor<T> forward(const Tensor<T>& x, Context& ctx) override;
    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

    Tensor<T> gamma, beta, running_mean, running_var;
    double momentum, eps;
};

template <typename T>
class ReLU final : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x, Context&) override { return ops::relu(x); }
    void collect(const std::string&, std::vector<NamedTensor<T>>&) override {}
};

template <typename T>
class Sigmoid final : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x, Context&) override { return ops::sigmoid(x); }
    void collect(const std::string&, std::vector<NamedTensor<T>>&) override {}
};

template <typename T>
class MaxPool final : public Layer<T> {
public:
    MaxPool(Pair window, Pair stride, Pair padding = {0, 0})
        : window(window), stride(stride), padding(padding)
    {
    }
    Tensor<T> forward(const Tensor<T>& x, Context&) override
    {
        return ops::maxpool2d(x, window, stride, padding);
    }
    void collect(const std::string&, std::vector<NamedTensor<T>>&) override {}

    Pair window, stride, padding;
};

template <typename T>
class AdaptiveAvgPool final : public Layer<T> {
public:
    explicit AdaptiveAvgPool(Pair out) : out(out) {}
    Tensor<T> forward(const Tensor<T>& x, Context&) override { return ops::adaptive_avg_pool2d(x, out); }
    void collect(const std::string&, std::vector<NamedTensor<T>>&) override {}

    Pair out;
};

/// Flattens [N,...] to [N,F]; the quaternion form keeps quaternion
/// components adjacent.
template <typename T>
class Flatten final : public Layer<T> {
public:
    explicit Flatten(bool quaternion = false) : quaternion(quaternion) {}
    Tensor<T> forward(const Tensor<T>& x, Context&) override
    {
        return quaternion ? ops::quat_flatten(x) : ops::flatten(x);
    }
    void collect(const std::string&, std::vector<NamedTensor<T>>&) override {}

    bool quaternion;
};

template <typename T>
class Dropout final : public Layer<T> {
public:
    explicit Dropout(double rate) : rate(rate) {}
    Tensor<T> forward(const Tensor<T>& x, Context& ctx) override;
    void collect(const std::string&, std::vector<NamedTensor<T>>&) override {}

    double rate;
};

/// Ordered chain of named layers.
template <typename T>
class Sequential final : public Layer<T> {
public:
    Layer<T>& add(std::string name, std::unique_ptr<Layer<T>> layer);
    template <typename L, typename... Args>
    L& emplace(std::string name, Args&&... args)
    {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        add(std::move(name), std::move(layer));
        return ref;
    }

    Tensor<T> forward(const Tensor<T>& x, Context& ctx) override;
    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

    std::size_t size() const { return layers_.size(); }
    Layer<T>& at(std::size_t i) { return *layers_.at(i).second; }
    const std::string& name_at(std::size_t i) const { return layers_.at(i).first; }

private:
    std::vector<std::pair<std::string, std::unique_ptr<Layer<T>>>> layers_;
};

}  // namespace qser::nn
