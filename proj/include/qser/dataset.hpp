#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qser/rng.hpp"
#include "qser/tensor.hpp"

namespace qser::data {

inline constexpr std::array<const char*, 4> class_names = {"neutral", "angry", "happy", "sad"};

struct EmotionTarget {
    int discrete = 0;  // index into class_names
    int valence = 0;   // 0 low, 1 high
    int arousal = 0;
    int dominance = 0;

    bool operator==(const EmotionTarget&) const = default;
};

/// Throws DataError unless the class is in [0,4) and the binaries in {0,1}.
void validate(const EmotionTarget& t);

/// Equal-shape items stored back to back with their labels.
struct LabeledSet {
    Shape item_shape;  // e.g. {1, 512, 128}
    std::vector<float> values;
    std::vector<EmotionTarget> targets;

    std::size_t size() const { return targets.size(); }
    std::size_t item_numel() const { return shape_numel(item_shape); }
    std::span<const float> item(std::size_t i) const;
    std::span<float> item(std::size_t i);
    void push(std::span<const float> item, const EmotionTarget& target);
    LabeledSet subset(std::span<const std::size_t> indices) const;
};

/// Stacks the selected items into a [B, ...item_shape] tensor.
template <typename T>
Tensor<T> gather(const LabeledSet& set, std::span<const std::size_t> indices);

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle then 70/20/10 cut. Test and validation sizes are rounded
/// to nearest; training takes the remainder.
SplitIndices split_70_20_10(std::size_t n, std::uint64_t seed);

/// Batch index lists covering [0, n) in a seeded order (one epoch).
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng* shuffle);

}  // namespace qser::data
