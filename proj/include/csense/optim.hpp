#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "csense/rng.hpp"
#include "csense/tensor.hpp"

namespace csense::nn {

// A trainable tensor with its gradient and Adam moment estimates.
template <typename T>
struct ParamT {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;
    TensorT<T> adam_m;
    TensorT<T> adam_v;
    int64_t step_count = 0;

    ParamT() = default;
    ParamT(std::string n, TensorT<T> v)
        : name(std::move(n)),
          value(std::move(v)),
          grad(TensorT<T>::zeros(value.shape)),
          adam_m(TensorT<T>::zeros(value.shape)),
          adam_v(TensorT<T>::zeros(value.shape)) {}

    void zero_grad() {
        for (T& g : grad.data) g = T(0);
    }
};

using Param = ParamT<float>;

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam update; increments each parameter's step count.
template <typename T>
void adam_step(const std::vector<ParamT<T>*>& params, const AdamConfig& cfg = {}) {
    for (ParamT<T>* p : params) {
        const int64_t t = ++p->step_count;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        T* w = p->value.ptr();
        const T* g = p->grad.ptr();
        T* m = p->adam_m.ptr();
        T* v = p->adam_v.ptr();
        for (int64_t i = 0, n = p->value.numel(); i < n; ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            w[i] = static_cast<T>(static_cast<double>(w[i]) -
                                  cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

// fan-in scaled uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)]
template <typename T>
TensorT<T> uniform_init(std::vector<int64_t> shape, int64_t fan_in, SplitMix64& rng) {
    TensorT<T> t(std::move(shape));
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (T& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

}  // namespace csense::nn
