#include "qser/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qser/errors.hpp"

namespace qser::data {

void validate(const EmotionTarget& t)
{
    if (t.discrete < 0 || t.discrete >= static_cast<int>(class_names.size()))
        throw DataError("emotion class " + std::to_string(t.discrete) + " is outside [0,4)");
    for (int b : {t.valence, t.arousal, t.dominance})
        if (b != 0 && b != 1)
            throw DataError("valence/arousal/dominance labels must be 0 or 1, got " + std::to_string(b));
}

std::span<const float> LabeledSet::item(std::size_t i) const
{
    const std::size_t n = item_numel();
    return std::span<const float>(values).subspan(i * n, n);
}

std::span<float> LabeledSet::item(std::size_t i)
{
    const std::size_t n = item_numel();
    return std::span<float>(values).subspan(i * n, n);
}

void LabeledSet::push(std::span<const float> item, const EmotionTarget& target)
{
    if (item.size() != item_numel())
        throw ShapeError("item has " + std::to_string(item.size()) + " values, expected " +
                         shape_str(item_shape));
    validate(target);
    values.insert(values.end(), item.begin(), item.end());
    targets.push_back(target);
}

LabeledSet LabeledSet::subset(std::span<const std::size_t> indices) const
{
    LabeledSet out;
    out.item_shape = item_shape;
    out.values.reserve(indices.size() * item_numel());
    for (std::size_t i : indices) {
        if (i >= size())
            throw ShapeError("subset index " + std::to_string(i) + " out of range");
        auto it = item(i);
        out.values.insert(out.values.end(), it.begin(), it.end());
        out.targets.push_back(targets[i]);
    }
    return out;
}

template <typename T>
Tensor<T> gather(const LabeledSet& set, std::span<const std::size_t> indices)
{
    if (indices.empty())
        throw ShapeError("gather: empty batch");
    Shape shape{indices.size()};
    shape.insert(shape.end(), set.item_shape.begin(), set.item_shape.end());
    Tensor<T> out(shape);
    const std::size_t n = set.item_numel();
    auto dst = out.data();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        auto src = set.item(indices[b]);
        std::transform(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(b * n),
                       [](float v) { return static_cast<T>(v); });
    }
    return out;
}

template Tensor<float> gather(const LabeledSet&, std::span<const std::size_t>);
template Tensor<double> gather(const LabeledSet&, std::span<const std::size_t>);

SplitIndices split_70_20_10(std::size_t n, std::uint64_t seed)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    const auto n_test = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
    SplitIndices s;
    const auto train_end = order.begin() + static_cast<std::ptrdiff_t>(n - n_val - n_test);
    const auto val_end = train_end + static_cast<std::ptrdiff_t>(n_val);
    s.train.assign(order.begin(), train_end);
    s.val.assign(train_end, val_end);
    s.test.assign(val_end, order.end());
    return s;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng* shuffle)
{
    if (batch_size == 0)
        throw ConfigError("batch size must be positive");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle)
        shuffle->shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
    return batches;
}

}  // namespace qser::data
