#include "qser/optim.hpp"

#include <cmath>
#include <map>

#include "qser/errors.hpp"

namespace qser::optim {

template <typename T>
Adam<T>::Adam(std::vector<nn::NamedTensor<T>> params, AdamOptions options)
    : params_(std::move(params)), options_(options)
{
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), T(0));
        v_.emplace_back(p.tensor.numel(), T(0));
    }
}

template <typename T>
void Adam<T>::step()
{
    ++t_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const T lr_t = static_cast<T>(options_.lr * std::sqrt(c2) / c1);
    const T eps_t = static_cast<T>(options_.eps * std::sqrt(c2));
    const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
    const T ob1 = static_cast<T>(1.0 - b1), ob2 = static_cast<T>(1.0 - b2);

    for (std::size_t p = 0; p < params_.size(); ++p) {
        auto& storage = params_[p].tensor.storage();
        auto& w = storage.data;
        auto& m = m_[p];
        auto& v = v_[p];
        if (storage.grad.empty()) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] *= tb1;
                v[i] *= tb2;
                w[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps_t);
            }
            continue;
        }
        const auto& g = storage.grad;
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = tb1 * m[i] + ob1 * g[i];
            v[i] = tb2 * v[i] + ob2 * g[i] * g[i];
            w[i] -= lr_t * m[i] / (std::sqrt(v[i]) + eps_t);
        }
    }
}

template <typename T>
void Adam<T>::zero_grad()
{
    for (auto& p : params_)
        p.tensor.zero_grad();
}

template <typename T>
std::vector<nn::NamedTensor<T>> Adam<T>::state() const
{
    std::vector<nn::NamedTensor<T>> out;
    for (std::size_t p = 0; p < params_.size(); ++p) {
        out.push_back({"adam.m." + params_[p].name, Tensor<T>(params_[p].tensor.shape(), m_[p]), false});
        out.push_back({"adam.v." + params_[p].name, Tensor<T>(params_[p].tensor.shape(), v_[p]), false});
    }
    // float32 holds integers exactly only up to 2^24; that is plenty of steps.
    out.push_back({"adam.step", Tensor<T>({1}, std::vector<T>{static_cast<T>(t_)}), false});
    return out;
}

template <typename T>
void Adam<T>::load_state(const std::vector<nn::NamedTensor<T>>& state)
{
    std::map<std::string, const Tensor<T>*> by_name;
    for (const auto& nt : state)
        by_name[nt.name] = &nt.tensor;
    auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<T>& {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw ShapeError("optimizer state is missing " + name);
        if (it->second->shape() != shape)
            throw ShapeError("optimizer state " + name + " has shape " + shape_str(it->second->shape()) +
                             ", expected " + shape_str(shape));
        return *it->second;
    };
    for (std::size_t p = 0; p < params_.size(); ++p) {
        const auto& shape = params_[p].tensor.shape();
        m_[p] = fetch("adam.m." + params_[p].name, shape).values();
        v_[p] = fetch("adam.v." + params_[p].name, shape).values();
    }
    t_ = static_cast<std::uint64_t>(fetch("adam.step", {1}).item());
}

template class Adam<float>;
template class Adam<double>;

}  // namespace qser::optim
