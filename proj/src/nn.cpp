#include "qser/nn.hpp"

#include <cmath>

namespace qser::nn {

template <typename T>
std::vector<NamedTensor<T>> Module<T>::named_tensors(const std::string& prefix)
{
    std::vector<NamedTensor<T>> out;
    collect(prefix, out);
    return out;
}

template <typename T>
std::vector<NamedTensor<T>> Module<T>::parameters(const std::string& prefix)
{
    std::vector<NamedTensor<T>> out;
    for (auto& nt : named_tensors(prefix))
        if (nt.trainable)
            out.push_back(std::move(nt));
    return out;
}

template <typename T>
std::size_t Module<T>::parameter_count()
{
    std::size_t n = 0;
    for (const auto& p : parameters())
        n += p.tensor.numel();
    return n;
}

template <typename T>
void Module<T>::set_requires_grad(bool flag)
{
    for (auto& p : parameters())
        p.tensor.set_requires_grad(flag);
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out)
{
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename T>
void fill_uniform(Tensor<T>& t, double limit, Rng& rng)
{
    for (auto& v : t.data())
        v = static_cast<T>(rng.uniform(-limit, limit));
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, Pair kernel, Pair stride,
                  Pair padding, bool with_bias, Rng& rng)
    : weight({out_channels, in_channels, kernel.h, kernel.w}), stride(stride), padding(padding)
{
    const std::size_t taps = kernel.h * kernel.w;
    fill_uniform(weight, glorot_limit(in_channels * taps, out_channels * taps), rng);
    weight.set_requires_grad();
    if (with_bias)
        bias = Tensor<T>({out_channels}).set_requires_grad();
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Context&)
{
    return ops::conv2d(x, weight, bias, stride, padding);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out)
{
    out.push_back({prefix + "weight", weight, true});
    if (bias.defined())
        out.push_back({prefix + "bias", bias, true});
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, Pair kernel,
                                    Pair stride, Pair padding, Pair output_padding, bool with_bias,
                                    Rng& rng)
    : weight({in_channels, out_channels, kernel.h, kernel.w}),
      stride(stride),
      padding(padding),
      output_padding(output_padding)
{
    const std::size_t taps = kernel.h * kernel.w;
    fill_uniform(weight, glorot_limit(in_channels * taps, out_channels * taps), rng);
    weight.set_requires_grad();
    if (with_bias)
        bias = Tensor<T>({out_channels}).set_requires_grad();
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x, Context&)
{
    return ops::conv_transpose2d(x, weight, bias, stride, padding, output_padding);
}

template <typename T>
void ConvTranspose2d<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out)
{
    out.push_back({prefix + "weight", weight, true});
    if (bias.defined())
        out.push_back({prefix + "bias", bias, true});
}

template <typename T>
Dense<T>::Dense(std::size_t in_features, std::size_t out_features, bool with_bias, Rng& rng)
    : weight({out_features, in_features})
{
    fill_uniform(weight, glorot_limit(in_features, out_features), rng);
    weight.set_requires_grad();
    if (with_bias)
        bias = Tensor<T>({out_features}).set_requires_grad();
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x, Context&)
{
    return ops::dense(x, weight, bias);
}

template <typename T>
void Dense<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out)
{
    out.push_back({prefix + "weight", weight, true});
    if (bias.defined())
        out.push_back({prefix + "bias", bias, true});
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, double momentum, double eps)
    : gamma({channels}, T(1)),
      beta({channels}, T(0)),
      running_mean({channels}, T(0)),
      running_var({channels}, T(1)),
      momentum(momentum),
      eps(eps)
{
    gamma.set_requires_grad();
    beta.set_requires_grad();
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Context& ctx)
{
    return ops::batchnorm(x, gamma, beta, running_mean, running_var, ctx.training, momentum, eps);
}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out)
{
    out.push_back({prefix + "gamma", gamma, true});
    out.push_back({prefix + "beta", beta, true});
    out.push_back({prefix + "running_mean", running_mean, false});
    out.push_back({prefix + "running_var", running_var, false});
}

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, Context& ctx)
{
    if (!ctx.training || rate == 0.0)
        return x;
    if (ctx.rng == nullptr)
        throw UsageError("dropout in training mode needs a random generator in the context");
    return ops::dropout(x, rate, true, *ctx.rng);
}

template <typename T>
Layer<T>& Sequential<T>::add(std::string name, std::unique_ptr<Layer<T>> layer)
{
    layers_.emplace_back(std::move(name), std::move(layer));
    return *layers_.back().second;
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Context& ctx)
{
    Tensor<T> h = x;
    for (auto& [name, layer] : layers_)
        h = layer->forward(h, ctx);
    return h;
}

template <typename T>
void Sequential<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out)
{
    for (auto& [name, layer] : layers_)
        layer->collect(prefix + name + ".", out);
}

#define QSER_NN_INSTANTIATE(T)                                  \
    template class Module<T>;                                   \
    template class Conv2d<T>;                                   \
    template class ConvTranspose2d<T>;                          \
    template class Dense<T>;                                    \
    template class BatchNorm<T>;                                \
    template class Dropout<T>;                                  \
    template class Sequential<T>;                               \
    template void fill_uniform<T>(Tensor<T>&, double, Rng&);

QSER_NN_INSTANTIATE(float)
QSER_NN_INSTANTIATE(double)

}  // namespace qser::nn
