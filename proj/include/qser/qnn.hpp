#pragma once

#include <array>
#include <cstddef>

#include "qser/nn.hpp"

/// Quaternion-valued layers. A quaternion tensor is a real [N, 4Q, H, W]
/// tensor whose channels 4q..4q+3 hold the (r, i, j, k) planes of
/// quaternion channel q. Every layer keeps four real component banks and
/// assembles the Hamilton-product block weight before running the real op,
/// so one component value is reused at four places of the real kernel.
namespace qser::qnn {

using nn::Context;
using nn::NamedTensor;
using nn::Pair;

/// Four component banks of a quaternion weight, in (r, i, j, k) order.
template <typename T>
struct Components {
    std::array<Tensor<T>, 4> banks;

    Tensor<T>& operator[](std::size_t c) { return banks[c]; }
    const Tensor<T>& operator[](std::size_t c) const { return banks[c]; }
};

template <typename T>
class QuatConv2d final : public nn::Layer<T> {
public:
    QuatConv2d(std::size_t in_q, std::size_t out_q, Pair kernel, Pair stride, Pair padding, bool bias,
               Rng& rng);

    /// Real bank [4·out_q, 4·in_q, kh, kw] with rows
    /// (W0,-W1,-W2,-W3 / W1,W0,-W3,W2 / W2,W3,W0,-W1 / W3,-W2,W1,W0).
    Tensor<T> assemble_block_weights() const;
    Tensor<T> forward(const Tensor<T>& x, Context& ctx) override;
    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

    std::size_t in_q, out_q;
    Components<T> weight;  // each [out_q, in_q, kh, kw]
    Tensor<T> bias;        // [4·out_q] real, or undefined
    Pair stride, padding;
};

/// Transposed quaternion convolution. Each tap applies the Hamilton product
/// of the filter quaternion with the input quaternion, so a 1×1, stride-1
/// layer matches QuatConv2d.
template <typename T>
class QuatConvTranspose2d final : public nn::Layer<T> {
public:
    QuatConvTranspose2d(std::size_t in_q, std::size_t out_q, Pair kernel, Pair stride, Pair padding,
                        Pair output_padding, bool bias, Rng& rng);

    /// Real bank [4·in_q, 4·out_q, kh, kw] in transposed-convolution layout.
    Tensor<T> assemble_block_weights() const;
    Tensor<T> forward(const Tensor<T>& x, Context& ctx) override;
    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

    std::size_t in_q, out_q;
    Components<T> weight;  // each [in_q, out_q, kh, kw]
    Tensor<T> bias;
    Pair stride, padding, output_padding;
};

/// Fully connected quaternion layer on [N, 4·in_q] inputs whose quaternion
/// units occupy adjacent quartets.
template <typename T>
class QuatDense final : public nn::Layer<T> {
public:
    QuatDense(std::size_t in_q, std::size_t out_q, bool bias, Rng& rng);

    Tensor<T> assemble_block_weights() const;
    Tensor<T> forward(const Tensor<T>& x, Context& ctx) override;
    void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;

    std::size_t in_q, out_q;
    Components<T> weight;  // each [out_q, in_q]
    Tensor<T> bias;
};

/// Split batch norm: independent statistics per real channel.
template <typename T>
using SplitBatchNorm = nn::BatchNorm<T>;

/// Pixelwise mean of the four components of a single quaternion channel:
/// [N,4,H,W] -> [N,1,H,W].
template <typename T>
Tensor<T> split_mean(const Tensor<T>& x);

/// Shape of a convolution or dense layer for parameter accounting. Channel
/// counts are real channels; kernel 1×1 describes a dense layer.
struct LayerShape {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kh = 1;
    std::size_t kw = 1;
    bool bias = true;
    bool quaternion = false;
};

/// Trainable weight scalars only.
std::size_t layer_weight_count(const LayerShape& shape);
/// Weights plus bias.
std::size_t layer_param_count(const LayerShape& shape);
/// Trainable scale and shift of a (split) batch norm.
inline std::size_t batchnorm_param_count(std::size_t channels) { return 2 * channels; }

}  // namespace qser::qnn
