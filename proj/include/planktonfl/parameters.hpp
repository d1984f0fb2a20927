#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "planktonfl/model_spec.hpp"
#include "planktonfl/rng.hpp"
#include "planktonfl/tensor.hpp"

namespace planktonfl {

/// Weights of one parameterized layer.
/// conv: weight 3 x 3 x C x F, bias F. dense: weight D x U, bias U.
template <typename T>
struct ParamBlock {
    std::size_t layer = 0; // index into ModelSpec::layers
    BasicTensor<T> weight;
    BasicTensor<T> bias;

    friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

template <typename T>
struct BasicParameterSet {
    std::vector<ParamBlock<T>> blocks;

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& b : blocks) n += b.weight.size() + b.bias.size();
        return n;
    }

    template <typename U>
    BasicParameterSet<U> cast() const {
        BasicParameterSet<U> out;
        for (const auto& b : blocks) out.blocks.push_back({b.layer, b.weight.template cast<U>(), b.bias.template cast<U>()});
        return out;
    }

    friend bool operator==(const BasicParameterSet&, const BasicParameterSet&) = default;
};

/// Same layout as the parameter set it was computed against.
template <typename T>
struct BasicGradients {
    std::vector<ParamBlock<T>> blocks;
};

using ParameterSet = BasicParameterSet<float>;
using Gradients = BasicGradients<float>;

/// Visits every (parameter tensor) in canonical order: per block, weight then bias.
template <typename Blocks, typename Fn>
void for_each_tensor(Blocks& blocks, Fn&& fn) {
    for (auto& b : blocks) {
        fn(b.weight);
        fn(b.bias);
    }
}

template <typename T>
bool same_layout(const std::vector<ParamBlock<T>>& a, const std::vector<ParamBlock<T>>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].layer != b[i].layer || a[i].weight.shape() != b[i].weight.shape() ||
            a[i].bias.shape() != b[i].bias.shape())
            return false;
    }
    return true;
}

/// Bitwise equality, distinguishing -0 from +0 and NaN payloads.
template <typename T>
bool bit_identical(const BasicParameterSet<T>& a, const BasicParameterSet<T>& b) {
    if (!same_layout(a.blocks, b.blocks)) return false;
    for (std::size_t i = 0; i < a.blocks.size(); ++i) {
        const auto& x = a.blocks[i];
        const auto& y = b.blocks[i];
        if (std::memcmp(x.weight.data(), y.weight.data(), x.weight.size() * sizeof(T)) != 0) return false;
        if (std::memcmp(x.bias.data(), y.bias.data(), x.bias.size() * sizeof(T)) != 0) return false;
    }
    return true;
}

/// Zero tensors with the weight and bias shapes of every layer in `spec`.
template <typename T = float>
std::vector<ParamBlock<T>> zero_blocks(const ModelSpec& spec) {
    const auto shapes = layer_output_shapes(spec);
    std::vector<ParamBlock<T>> blocks;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& layer = spec.layers[i];
        const Shape& in = i == 0 ? spec.input : shapes[i - 1];
        if (layer.kind == LayerKind::conv) {
            blocks.push_back({i, BasicTensor<T>({kKernelSide, kKernelSide, in[2], layer.units}),
                              BasicTensor<T>({layer.units})});
        } else if (layer.kind == LayerKind::dense) {
            blocks.push_back({i, BasicTensor<T>({in[0], layer.units}), BasicTensor<T>({layer.units})});
        }
    }
    return blocks;
}

/// Fan-in of a weight tensor: everything but the last (output) axis.
template <typename T>
std::size_t fan_in(const BasicTensor<T>& weight) {
    return weight.size() / weight.shape().back();
}

/// Weights uniform in +-sqrt(6 / fan_in), biases zero.
template <typename T = float>
BasicParameterSet<T> init_parameters(const ModelSpec& spec, std::uint64_t seed) {
    BasicParameterSet<T> params{zero_blocks<T>(spec)};
    Rng rng(derive_seed(seed, Stream::init));
    for (auto& b : params.blocks) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in(b.weight)));
        for (auto& w : b.weight.values()) {
            w = static_cast<T>(limit * (2.0 * rng.uniform() - 1.0));
        }
    }
    return params;
}

/// Plain SGD: w <- w - lr * g for every scalar.
template <typename T>
BasicParameterSet<T> sgd_step(BasicParameterSet<T> params, const BasicGradients<T>& grads, double lr) {
    if (!same_layout(params.blocks, grads.blocks)) throw ShapeError("gradients do not match parameter layout");
    const T step = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        auto apply = [step](BasicTensor<T>& w, const BasicTensor<T>& g) {
            T* wp = w.data();
            const T* gp = g.data();
            for (std::size_t j = 0; j < w.size(); ++j) wp[j] -= step * gp[j];
        };
        apply(params.blocks[i].weight, grads.blocks[i].weight);
        apply(params.blocks[i].bias, grads.blocks[i].bias);
    }
    return params;
}

} // namespace planktonfl
