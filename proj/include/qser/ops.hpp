#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "qser/rng.hpp"
#include "qser/tensor.hpp"

/// Differentiable tensor operations. Every function records its backward
/// pass on the active GradTape when any input requires a gradient.
///
/// Image tensors are [N, C, H, W]; matrices are [N, features].
namespace qser::ops {

struct Pair {
    std::size_t h = 1;
    std::size_t w = 1;
    friend constexpr bool operator==(const Pair&, const Pair&) = default;
};

/// While alive on a thread, folds the branch every piecewise op takes (ReLU
/// sign, max-pool winner, log-loss clamp) into a digest. Finite-difference
/// checks compare digests on both sides of a step to see whether it crossed
/// a kink, where the central difference says nothing about the derivative.
class BranchProbe {
public:
    BranchProbe();
    ~BranchProbe();
    BranchProbe(const BranchProbe&) = delete;
    BranchProbe& operator=(const BranchProbe&) = delete;

    std::uint64_t digest() const noexcept { return digest_; }
    void mix(std::uint64_t v) noexcept { digest_ = (digest_ ^ v) * 0x100000001b3ull; }
    static BranchProbe* active() noexcept;

private:
    std::uint64_t digest_ = 0xcbf29ce484222325ull;
    BranchProbe* outer_;
};

/// Cross-correlation of x [N,C,H,W] with w [F,C,kh,kw] plus optional bias [F].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Pair stride = {1, 1},
                 Pair padding = {0, 0});

/// Adjoint of conv2d with respect to its input. x is [N,Cin,H,W], w is
/// [Cin,Cout,kh,kw]; output extent is (H-1)*s - 2p + k + output_padding.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           Pair stride = {1, 1}, Pair padding = {0, 0},
                           Pair output_padding = {0, 0});

/// Max over windows; padded cells never win.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, Pair window, Pair stride, Pair padding = {0, 0});
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, Pair window) { return maxpool2d(x, window, window); }

/// Average over the bins [floor(i*H/out), ceil((i+1)*H/out)).
template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, Pair out);

/// x [N,in] times w [out,in] transposed, plus optional bias [out].
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// Softmax along the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

/// Inverted dropout: survivors are scaled by 1/(1-rate) in training mode,
/// identity otherwise.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng);

/// Per-channel batch normalization of [N,C,H,W] or [N,C]. Training mode uses
/// biased batch statistics and updates the running buffers in place
/// (unbiased variance); inference mode uses the running buffers.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                    double momentum, double eps);

/// Mean over the channel axis: [N,C,H,W] -> [N,1,H,W].
template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x);

/// Clamp used before every logarithm in the log losses.
inline constexpr double log_loss_epsilon = 1e-7;

/// Mean binary cross-entropy. Predictions and targets must lie in [0,1];
/// predictions are clamped to [eps, 1-eps]. Target receives no gradient.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Mean categorical cross-entropy of probabilities [N,K] against class ids.
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& probs, std::span<const int> labels);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// [N, ...] -> [N, prod(...)].
template <typename T>
Tensor<T> flatten(const Tensor<T>& x);
/// [N,C,H,W] -> [N,1,H,W] holding channel c.
template <typename T>
Tensor<T> select_channel(const Tensor<T>& x, std::size_t c);
/// [N,4Q,H,W] -> [N, Q*H*W*4] with each quaternion's four components
/// adjacent, so dense quaternion layers see whole quaternions.
template <typename T>
Tensor<T> quat_flatten(const Tensor<T>& x);

/// Build the real weight bank of a quaternion layer from its four component
/// banks (each [A,B,...]). Result is [4A,4B,...] where block (a,b) carries
/// the matrix form of the component quaternion. With transposed_blocks the
/// 4×4 blocks are transposed, for banks laid out [in,out,...].
template <typename T>
Tensor<T> assemble_quaternion_blocks(const Tensor<T>& w_r, const Tensor<T>& w_i,
                                     const Tensor<T>& w_j, const Tensor<T>& w_k,
                                     bool transposed_blocks = false);

}  // namespace qser::ops
