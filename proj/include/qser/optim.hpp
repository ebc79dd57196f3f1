#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qser/nn.hpp"

namespace qser::optim {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over a fixed list of named parameters. A parameter whose gradient
/// buffer is empty is treated as having a zero gradient.
template <typename T>
class Adam {
public:
    Adam(std::vector<nn::NamedTensor<T>> params, AdamOptions options);

    void step();
    void zero_grad();

    double lr() const { return options_.lr; }
    void set_lr(double lr) { options_.lr = lr; }
    std::uint64_t steps() const { return t_; }
    const std::vector<nn::NamedTensor<T>>& params() const { return params_; }

    /// Moment buffers as "adam.m.<name>" / "adam.v.<name>" plus a one-element
    /// "adam.step" tensor, for checkpointing.
    std::vector<nn::NamedTensor<T>> state() const;
    /// Restores buffers written by state(); throws ShapeError on a mismatch.
    void load_state(const std::vector<nn::NamedTensor<T>>& state);

private:
    std::vector<nn::NamedTensor<T>> params_;
    std::vector<Buffer<T>> m_, v_;
    AdamOptions options_;
    std::uint64_t t_ = 0;
};

}  // namespace qser::optim
