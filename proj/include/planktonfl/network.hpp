#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "planktonfl/error.hpp"
#include "planktonfl/layers.hpp"
#include "planktonfl/model_spec.hpp"
#include "planktonfl/parameters.hpp"
#include "planktonfl/rng.hpp"
#include "planktonfl/tensor.hpp"

namespace planktonfl {

enum class Mode { train, eval };

inline constexpr double kProbabilityFloor = 1e-12;

/// Activations kept by forward for the backward pass.
template <typename T>
struct ForwardCache {
    // activations[i] is the input of layer i; activations.back() the probabilities.
    std::vector<BasicTensor<T>> activations;
    std::vector<std::vector<std::uint32_t>> pool_argmax; // indexed by layer
    std::vector<BasicTensor<T>> dropout_masks;           // indexed by layer
};

template <typename T>
struct ForwardResult {
    BasicTensor<T> probabilities; // N x classes
    ForwardCache<T> cache;
};

namespace detail {

template <typename T>
std::vector<const ParamBlock<T>*> blocks_by_layer(const ModelSpec& spec, const std::vector<ParamBlock<T>>& blocks) {
    std::vector<const ParamBlock<T>*> lookup(spec.layers.size(), nullptr);
    for (const auto& b : blocks) {
        if (b.layer >= spec.layers.size() || !spec.layers[b.layer].has_parameters())
            throw ShapeError("parameter block refers to layer " + std::to_string(b.layer) +
                             " which has no parameters");
        lookup[b.layer] = &b;
    }
    return lookup;
}

inline Shape batched(std::size_t n, const Shape& sample) {
    Shape s{n};
    s.insert(s.end(), sample.begin(), sample.end());
    return s;
}

} // namespace detail

/// Runs the model on a batch (N x H x W x C). Dropout is active only in train
/// mode, where `rng` must be provided. With keep_cache=false only the
/// probabilities are returned.
template <typename T>
ForwardResult<T> forward(const ModelSpec& spec, const BasicParameterSet<T>& params, const BasicTensor<T>& batch,
                         Mode mode, Rng* rng = nullptr, bool keep_cache = true) {
    if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != spec.input)
        throw ShapeError("batch shape " + to_string(batch.shape()) + " does not match model input " +
                         to_string(spec.input));
    if (mode == Mode::train && !rng) throw ConfigError("train-mode forward needs an RNG for dropout");
    const auto shapes = layer_output_shapes(spec);
    const auto lookup = detail::blocks_by_layer(spec, params.blocks);
    const std::size_t n = batch.dim(0);

    ForwardResult<T> result;
    auto& cache = result.cache;
    cache.pool_argmax.resize(spec.layers.size());
    cache.dropout_masks.resize(spec.layers.size());

    BasicTensor<T> x = batch;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& layer = spec.layers[i];
        BasicTensor<T> y;
        switch (layer.kind) {
        case LayerKind::conv:
        case LayerKind::dense: {
            const auto* block = lookup[i];
            if (!block) throw ShapeError("missing parameters for layer " + std::to_string(i));
            y = layer.kind == LayerKind::conv ? layers::conv2d(x, block->weight, block->bias)
                                              : layers::dense(x, block->weight, block->bias);
            break;
        }
        case LayerKind::maxpool:
            y = layers::maxpool2(x, keep_cache ? &cache.pool_argmax[i] : nullptr);
            break;
        case LayerKind::relu:
            y = layers::relu(x);
            break;
        case LayerKind::dropout:
            if (mode == Mode::train && layer.rate > 0.0) {
                auto mask = layers::dropout_mask<T>(x.shape(), layer.rate, *rng);
                y = layers::multiply(x, mask);
                if (keep_cache) cache.dropout_masks[i] = std::move(mask);
            } else {
                y = x;
            }
            break;
        case LayerKind::flatten:
            y = x;
            y.reshape({n, shapes[i][0]});
            break;
        case LayerKind::softmax:
            y = layers::softmax(x);
            break;
        }
        if (!y.all_finite()) throw NumericFault(i, std::string("non-finite ") + to_string(layer.kind) + " output");
        if (keep_cache) cache.activations.push_back(std::move(x));
        x = std::move(y);
    }
    result.probabilities = std::move(x);
    return result;
}

/// Backpropagates d(loss)/d(logits) (N x classes, the input gradient of the
/// final softmax) through every layer below it.
template <typename T>
BasicGradients<T> backward(const ModelSpec& spec, const BasicParameterSet<T>& params, const ForwardCache<T>& cache,
                           BasicTensor<T> grad_logits) {
    BasicGradients<T> grads{zero_blocks<T>(spec)};
    const auto lookup = detail::blocks_by_layer(spec, params.blocks);
    std::vector<ParamBlock<T>*> grad_lookup(spec.layers.size(), nullptr);
    for (auto& b : grads.blocks) grad_lookup[b.layer] = &b;

    BasicTensor<T> g = std::move(grad_logits);
    // the last layer is softmax; its gradient has already been folded in
    for (std::size_t i = spec.layers.size() - 1; i-- > 0;) {
        const auto& layer = spec.layers[i];
        const auto& input = cache.activations[i];
        switch (layer.kind) {
        case LayerKind::conv:
            g = layers::conv2d_backward(input, lookup[i]->weight, g, grad_lookup[i]->weight, grad_lookup[i]->bias,
                                        i > 0);
            break;
        case LayerKind::dense:
            g = layers::dense_backward(input, lookup[i]->weight, g, grad_lookup[i]->weight, grad_lookup[i]->bias);
            break;
        case LayerKind::maxpool:
            g = layers::maxpool2_backward(input.shape(), cache.pool_argmax[i], g);
            break;
        case LayerKind::relu:
            g = layers::relu_backward(input, std::move(g));
            break;
        case LayerKind::dropout:
            if (!cache.dropout_masks[i].empty()) g = layers::multiply(std::move(g), cache.dropout_masks[i]);
            break;
        case LayerKind::flatten:
            g.reshape(input.shape());
            break;
        case LayerKind::softmax:
            throw ConfigError("softmax may only appear as the final layer");
        }
    }
    return grads;
}

/// Mean categorical cross-entropy with probabilities floored at 1e-12.
template <typename T>
double cross_entropy(const BasicTensor<T>& probabilities, std::span<const int> labels) {
    const std::size_t n = probabilities.dim(0);
    const std::size_t k = probabilities.size() / n;
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        const double p = std::max(static_cast<double>(probabilities[s * k + labels[s]]), kProbabilityFloor);
        total -= std::log(p);
    }
    return total / static_cast<double>(n);
}

template <typename T>
struct LossAndGrad {
    double loss = 0.0;
    BasicGradients<T> grads;
};

/// Train-mode loss and gradients for one batch.
template <typename T>
LossAndGrad<T> loss_and_grad(const ModelSpec& spec, const BasicParameterSet<T>& params, const BasicTensor<T>& batch,
                             std::span<const int> labels, Rng& rng) {
    const std::size_t n = batch.dim(0);
    if (labels.size() != n) throw ShapeError("label count does not match batch size");
    for (int label : labels)
        if (label < 0 || static_cast<std::size_t>(label) >= spec.classes)
            throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(spec.classes) + ")");

    auto fwd = forward(spec, params, batch, Mode::train, &rng);
    LossAndGrad<T> out;
    out.loss = cross_entropy(fwd.probabilities, labels);

    BasicTensor<T> grad_logits = fwd.probabilities;
    const std::size_t k = spec.classes;
    const T inv_n = static_cast<T>(1.0 / static_cast<double>(n));
    for (std::size_t s = 0; s < n; ++s) {
        grad_logits[s * k + labels[s]] -= T{1};
        for (std::size_t j = 0; j < k; ++j) grad_logits[s * k + j] *= inv_n;
    }
    out.grads = backward(spec, params, fwd.cache, std::move(grad_logits));
    return out;
}

/// Index of the largest entry in each row; ties resolve to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& probabilities) {
    const std::size_t n = probabilities.dim(0);
    const std::size_t k = probabilities.size() / n;
    std::vector<int> out(n);
    for (std::size_t s = 0; s < n; ++s) {
        const T* row = probabilities.data() + s * k;
        out[s] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

/// Stacks selected records (anything with `.pixels` and `.label`) into a batch.
template <typename Records, typename Index>
std::pair<Tensor, std::vector<int>> make_batch(const Records& records, std::span<const Index> indices) {
    if (indices.empty()) throw DataError("cannot build an empty batch");
    const auto& first = records[static_cast<std::size_t>(indices[0])].pixels;
    Tensor batch(detail::batched(indices.size(), first.shape()));
    std::vector<int> labels;
    labels.reserve(indices.size());
    float* dst = batch.data();
    for (auto idx : indices) {
        const auto& rec = records[static_cast<std::size_t>(idx)];
        if (rec.pixels.shape() != first.shape()) throw ShapeError("records in a batch differ in shape");
        dst = std::copy(rec.pixels.data(), rec.pixels.data() + rec.pixels.size(), dst);
        labels.push_back(rec.label);
    }
    return {std::move(batch), std::move(labels)};
}

struct Evaluation {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

inline constexpr std::size_t kEvalBatch = 32;

/// Eval-mode accuracy and mean loss over the records picked by `indices`.
template <typename Records, typename Index>
Evaluation evaluate(const ModelSpec& spec, const ParameterSet& params, const Records& records,
                    std::span<const Index> indices) {
    if (indices.empty()) throw DataError("cannot evaluate on an empty dataset");
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < indices.size(); start += kEvalBatch) {
        const auto chunk = indices.subspan(start, std::min(kEvalBatch, indices.size() - start));
        auto [batch, labels] = make_batch(records, chunk);
        const auto probs = forward(spec, params, batch, Mode::eval, nullptr, false).probabilities;
        const auto predicted = argmax_rows(probs);
        for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
        loss_sum += cross_entropy(probs, std::span<const int>(labels)) * static_cast<double>(labels.size());
    }
    const auto n = static_cast<double>(indices.size());
    return {static_cast<double>(correct) / n, loss_sum / n};
}

template <typename Records>
Evaluation evaluate(const ModelSpec& spec, const ParameterSet& params, const Records& records) {
    std::vector<std::size_t> all(records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return evaluate(spec, params, records, std::span<const std::size_t>(all));
}

} // namespace planktonfl
