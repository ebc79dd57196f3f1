#include "qser/qnn.hpp"

#include <string>

namespace qser::qnn {

namespace {

void require_divisible(std::size_t channels, const char* what)
{
    if (channels % 4 != 0)
        throw ShapeError(std::string(what) + ": channel count " + std::to_string(channels) +
                         " is not divisible by 4");
}

template <typename T>
void init_components(Components<T>& w, const Shape& shape, std::size_t fan_in, std::size_t fan_out,
                     Rng& rng)
{
    // Glorot on the assembled real fan keeps the block matrix variance in
    // line with a real layer of the same real shape.
    const double limit = nn::glorot_limit(fan_in, fan_out);
    for (auto& bank : w.banks) {
        bank = Tensor<T>(shape);
        nn::fill_uniform(bank, limit, rng);
        bank.set_requires_grad();
    }
}

template <typename T>
void collect_components(const std::string& prefix, const Components<T>& w, const Tensor<T>& bias,
                        std::vector<NamedTensor<T>>& out)
{
    static const char* names[4] = {"weight_r", "weight_i", "weight_j", "weight_k"};
    for (std::size_t c = 0; c < 4; ++c)
        out.push_back({prefix + names[c], w[c], true});
    if (bias.defined())
        out.push_back({prefix + "bias", bias, true});
}

}  // namespace

template <typename T>
QuatConv2d<T>::QuatConv2d(std::size_t in_q, std::size_t out_q, Pair kernel, Pair stride, Pair padding,
                          bool with_bias, Rng& rng)
    : in_q(in_q), out_q(out_q), stride(stride), padding(padding)
{
    const std::size_t taps = kernel.h * kernel.w;
    init_components(weight, {out_q, in_q, kernel.h, kernel.w}, 4 * in_q * taps, 4 * out_q * taps, rng);
    if (with_bias)
        bias = Tensor<T>({4 * out_q}).set_requires_grad();
}

template <typename T>
Tensor<T> QuatConv2d<T>::assemble_block_weights() const
{
    return ops::assemble_quaternion_blocks(weight[0], weight[1], weight[2], weight[3], false);
}

template <typename T>
Tensor<T> QuatConv2d<T>::forward(const Tensor<T>& x, Context&)
{
    if (x.rank() != 4)
        throw ShapeError("quat_conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
    require_divisible(x.dim(1), "quat_conv2d");
    if (x.dim(1) != 4 * in_q)
        throw ShapeError("quat_conv2d: expected " + std::to_string(4 * in_q) + " channels, got " +
                         std::to_string(x.dim(1)));
    return ops::conv2d(x, assemble_block_weights(), bias, stride, padding);
}

template <typename T>
void QuatConv2d<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out)
{
    collect_components(prefix, weight, bias, out);
}

template <typename T>
QuatConvTranspose2d<T>::QuatConvTranspose2d(std::size_t in_q, std::size_t out_q, Pair kernel,
                                            Pair stride, Pair padding, Pair output_padding,
                                            bool with_bias, Rng& rng)
    : in_q(in_q), out_q(out_q), stride(stride), padding(padding), output_padding(output_padding)
{
    const std::size_t taps = kernel.h * kernel.w;
    init_components(weight, {in_q, out_q, kernel.h, kernel.w}, 4 * in_q * taps, 4 * out_q * taps, rng);
    if (with_bias)
        bias = Tensor<T>({4 * out_q}).set_requires_grad();
}

template <typename T>
Tensor<T> QuatConvTranspose2d<T>::assemble_block_weights() const
{
    return ops::assemble_quaternion_blocks(weight[0], weight[1], weight[2], weight[3], true);
}

template <typename T>
Tensor<T> QuatConvTranspose2d<T>::forward(const Tensor<T>& x, Context&)
{
    if (x.rank() != 4)
        throw ShapeError("quat_conv_transpose2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
    require_divisible(x.dim(1), "quat_conv_transpose2d");
    if (x.dim(1) != 4 * in_q)
        throw ShapeError("quat_conv_transpose2d: expected " + std::to_string(4 * in_q) +
                         " channels, got " + std::to_string(x.dim(1)));
    return ops::conv_transpose2d(x, assemble_block_weights(), bias, stride, padding, output_padding);
}

template <typename T>
void QuatConvTranspose2d<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out)
{
    collect_components(prefix, weight, bias, out);
}

template <typename T>
QuatDense<T>::QuatDense(std::size_t in_q, std::size_t out_q, bool with_bias, Rng& rng)
    : in_q(in_q), out_q(out_q)
{
    init_components(weight, {out_q, in_q}, 4 * in_q, 4 * out_q, rng);
    if (with_bias)
        bias = Tensor<T>({4 * out_q}).set_requires_grad();
}

template <typename T>
Tensor<T> QuatDense<T>::assemble_block_weights() const
{
    return ops::assemble_quaternion_blocks(weight[0], weight[1], weight[2], weight[3], false);
}

template <typename T>
Tensor<T> QuatDense<T>::forward(const Tensor<T>& x, Context&)
{
    if (x.rank() != 2 || x.dim(1) != 4 * in_q)
        throw ShapeError("quat_dense: expected [N," + std::to_string(4 * in_q) + "] input, got " +
                         shape_str(x.shape()));
    return ops::dense(x, assemble_block_weights(), bias);
}

template <typename T>
void QuatDense<T>::collect(const std::string& prefix, std::vector<NamedTensor<T>>& out)
{
    collect_components(prefix, weight, bias, out);
}

template <typename T>
Tensor<T> split_mean(const Tensor<T>& x)
{
    if (x.rank() != 4 || x.dim(1) != 4)
        throw ShapeError("split_mean: expected a single quaternion channel [N,4,H,W], got " +
                         shape_str(x.shape()));
    return ops::channel_mean(x);
}

std::size_t layer_weight_count(const LayerShape& s)
{
    const std::size_t real = s.in_channels * s.out_channels * s.kh * s.kw;
    if (!s.quaternion)
        return real;
    require_divisible(s.in_channels, "quaternion layer input");
    require_divisible(s.out_channels, "quaternion layer output");
    return real / 4;
}

std::size_t layer_param_count(const LayerShape& s)
{
    return layer_weight_count(s) + (s.bias ? s.out_channels : 0);
}

#define QSER_QNN_INSTANTIATE(T)                \
    template class QuatConv2d<T>;              \
    template class QuatConvTranspose2d<T>;     \
    template class QuatDense<T>;               \
    template Tensor<T> split_mean(const Tensor<T>&);

QSER_QNN_INSTANTIATE(float)
QSER_QNN_INSTANTIATE(double)

}  // namespace qser::qnn
