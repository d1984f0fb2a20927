#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "planktonfl/error.hpp"
#include "planktonfl/model_spec.hpp"
#include "planktonfl/rng.hpp"
#include "planktonfl/tensor.hpp"

// Batched layer kernels. Image tensors are N x H x W x C, vectors N x D.
namespace planktonfl::layers {

/// 3x3 stride-1 convolution with SAME zero padding.
/// kernels: 3 x 3 x C x F, bias: F.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias) {
    if (input.rank() != 4) throw ShapeError("conv2d expects N x H x W x C input, got " + to_string(input.shape()));
    if (kernels.rank() != 4 || kernels.dim(0) != kKernelSide || kernels.dim(1) != kKernelSide)
        throw ShapeError("conv2d expects 3 x 3 x C x F kernels, got " + to_string(kernels.shape()));
    const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    if (kernels.dim(2) != c)
        throw ShapeError("conv2d channel mismatch: input has " + std::to_string(c) + ", kernels expect " +
                         std::to_string(kernels.dim(2)));
    const std::size_t f = kernels.dim(3);
    if (bias.size() != f) throw ShapeError("conv2d bias length must equal filter count");

    BasicTensor<T> out({n, h, w, f});
    const T* in = input.data();
    const T* k = kernels.data();
    const T* b = bias.data();
    T* o = out.data();
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                T* op = o + ((s * h + y) * w + x) * f;
                std::copy(b, b + f, op);
                for (std::size_t ky = 0; ky < kKernelSide; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < kKernelSide; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - 1;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        const T* ip = in + ((s * h + iy) * w + ix) * c;
                        const T* kp = k + (ky * kKernelSide + kx) * c * f;
                        for (std::size_t ci = 0; ci < c; ++ci) {
                            const T v = ip[ci];
                            if (v == T{0}) continue;
                            const T* kc = kp + ci * f;
                            for (std::size_t fi = 0; fi < f; ++fi) op[fi] += v * kc[fi];
                        }
                    }
                }
            }
        }
    }
    return out;
}

/// Accumulates kernel/bias gradients and returns the input gradient.
template <typename T>
BasicTensor<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                               const BasicTensor<T>& grad_out, BasicTensor<T>& grad_kernels,
                               BasicTensor<T>& grad_bias, bool need_input_grad = true) {
    const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    const std::size_t f = kernels.dim(3);
    BasicTensor<T> grad_in;
    if (need_input_grad) grad_in = BasicTensor<T>(input.shape());
    const T* in = input.data();
    const T* k = kernels.data();
    const T* go = grad_out.data();
    T* gk = grad_kernels.data();
    T* gb = grad_bias.data();
    T* gi = need_input_grad ? grad_in.data() : nullptr;
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const T* g = go + ((s * h + y) * w + x) * f;
                for (std::size_t fi = 0; fi < f; ++fi) gb[fi] += g[fi];
                for (std::size_t ky = 0; ky < kKernelSide; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < kKernelSide; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - 1;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        const std::size_t in_off = ((s * h + iy) * w + ix) * c;
                        const std::size_t k_off = (ky * kKernelSide + kx) * c * f;
                        for (std::size_t ci = 0; ci < c; ++ci) {
                            const T v = in[in_off + ci];
                            T* gkc = gk + k_off + ci * f;
                            if (v != T{0})
                                for (std::size_t fi = 0; fi < f; ++fi) gkc[fi] += v * g[fi];
                            if (gi) {
                                const T* kc = k + k_off + ci * f;
                                T acc{0};
                                for (std::size_t fi = 0; fi < f; ++fi) acc += kc[fi] * g[fi];
                                gi[in_off + ci] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    return grad_in;
}

/// 2x2 stride-2 max pool (floor). `argmax` receives, for every output cell,
/// the flat input index that won; ties go to the first cell in row-major order.
template <typename T>
BasicTensor<T> maxpool2(const BasicTensor<T>& input, std::vector<std::uint32_t>* argmax = nullptr) {
    if (input.rank() != 4) throw ShapeError("maxpool2 expects N x H x W x C input");
    const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    if (h < 2 || w < 2) throw ShapeError("maxpool2 input smaller than 2x2");
    const std::size_t oh = h / 2, ow = w / 2;
    BasicTensor<T> out({n, oh, ow, c});
    if (argmax) argmax->assign(out.size(), 0);
    const T* in = input.data();
    T* o = out.data();
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x)
                for (std::size_t ci = 0; ci < c; ++ci) {
                    std::size_t best = ((s * h + 2 * y) * w + 2 * x) * c + ci;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = ((s * h + 2 * y + dy) * w + 2 * x + dx) * c + ci;
                            if (in[idx] > in[best]) best = idx;
                        }
                    const std::size_t out_idx = ((s * oh + y) * ow + x) * c + ci;
                    o[out_idx] = in[best];
                    if (argmax) (*argmax)[out_idx] = static_cast<std::uint32_t>(best);
                }
    return out;
}

template <typename T>
BasicTensor<T> maxpool2_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                                 const BasicTensor<T>& grad_out) {
    BasicTensor<T> grad_in(input_shape);
    for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[argmax[i]] += grad_out[i];
    return grad_in;
}

template <typename T>
BasicTensor<T> relu(BasicTensor<T> x) {
    for (auto& v : x.values()) v = v > T{0} ? v : T{0};
    return x;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, BasicTensor<T> grad) {
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(input[i] > T{0})) grad[i] = T{0};
    return grad;
}

/// Inverted dropout: kept units are scaled by 1 / (1 - rate). Returns the
/// mask (0 or the scale) so backward can reuse it.
template <typename T>
BasicTensor<T> dropout_mask(const Shape& shape, double rate, Rng& rng) {
    BasicTensor<T> mask(shape);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& m : mask.values()) m = rng.uniform() < rate ? T{0} : keep_scale;
    return mask;
}

template <typename T>
BasicTensor<T> multiply(BasicTensor<T> x, const BasicTensor<T>& mask) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
    return x;
}

/// input N x D, weight D x U, bias U.
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    const std::size_t n = input.dim(0);
    const std::size_t d = input.size() / n;
    if (weight.rank() != 2 || weight.dim(0) != d)
        throw ShapeError("dense weight " + to_string(weight.shape()) + " does not accept input width " +
                         std::to_string(d));
    const std::size_t u = weight.dim(1);
    BasicTensor<T> out({n, u});
    for (std::size_t s = 0; s < n; ++s) {
        T* op = out.data() + s * u;
        std::copy(bias.data(), bias.data() + u, op);
        const T* x = input.data() + s * d;
        for (std::size_t i = 0; i < d; ++i) {
            const T v = x[i];
            if (v == T{0}) continue;
            const T* wr = weight.data() + i * u;
            for (std::size_t j = 0; j < u; ++j) op[j] += v * wr[j];
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> dense_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& grad_out,
                              BasicTensor<T>& grad_weight, BasicTensor<T>& grad_bias) {
    const std::size_t n = input.dim(0);
    const std::size_t d = weight.dim(0), u = weight.dim(1);
    BasicTensor<T> grad_in(input.shape());
    for (std::size_t s = 0; s < n; ++s) {
        const T* g = grad_out.data() + s * u;
        const T* x = input.data() + s * d;
        T* gx = grad_in.data() + s * d;
        for (std::size_t j = 0; j < u; ++j) grad_bias[j] += g[j];
        for (std::size_t i = 0; i < d; ++i) {
            const T* wr = weight.data() + i * u;
            T* gw = grad_weight.data() + i * u;
            T acc{0};
            for (std::size_t j = 0; j < u; ++j) {
                gw[j] += x[i] * g[j];
                acc += wr[j] * g[j];
            }
            gx[i] = acc;
        }
    }
    return grad_in;
}

/// Row-wise softmax over N x K logits, max-shifted for stability.
template <typename T>
BasicTensor<T> softmax(BasicTensor<T> logits) {
    const std::size_t n = logits.dim(0);
    const std::size_t k = logits.size() / n;
    for (std::size_t s = 0; s < n; ++s) {
        T* row = logits.data() + s * k;
        const T peak = *std::max_element(row, row + k);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            row[j] = static_cast<T>(std::exp(static_cast<double>(row[j] - peak)));
            total += row[j];
        }
        for (std::size_t j = 0; j < k; ++j) row[j] = static_cast<T>(row[j] / total);
    }
    return logits;
}

} // namespace planktonfl::layers
