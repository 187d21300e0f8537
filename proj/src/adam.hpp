#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace umurl {

// Adam with decoupled weight decay. Moment buffers are kept per parameter in
// registration order; the step counter is shared.
template <typename T>
struct AdamState {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    void init(const std::vector<std::size_t>& sizes) {
        m.assign(sizes.size(), {});
        v.assign(sizes.size(), {});
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            m[i].assign(sizes[i], T{0});
            v[i].assign(sizes[i], T{0});
        }
        step = 0;
    }
};

template <typename T>
void adam_step(std::vector<TensorData<T>*>& params, const std::vector<const std::vector<T>*>& grads,
               AdamState<T>& state) {
    require(params.size() == grads.size(), "adam_step: param/grad count mismatch");
    require(params.size() == state.m.size() && params.size() == state.v.size(),
            "adam_step: state size mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        TensorData<T>& param = *params[p];
        const std::vector<T>& grad = *grads[p];
        require(param.numel() == grad.size(), "adam_step: param/grad shape mismatch");
        require(param.numel() == state.m[p].size(), "adam_step: moment shape mismatch");
        std::vector<T>& m = state.m[p];
        std::vector<T>& v = state.v[p];
        for (std::size_t i = 0; i < grad.size(); ++i) {
            const double g = static_cast<double>(grad[i]);
            const double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * g;
            const double vi =
                state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            double x = static_cast<double>(param.data[i]);
            x -= state.lr * state.weight_decay * x;
            x -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
            param.data[i] = static_cast<T>(x);
        }
    }
}

}  // namespace umurl
