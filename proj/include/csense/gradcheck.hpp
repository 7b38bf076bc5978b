#pragma once

// Finite-difference gradient checking. Always runs in double: central
// differences at h=1e-3 have an absolute truncation floor around 1e-7,
// which 32-bit arithmetic would bury.

#include <algorithm>
#include <cmath>

#include "csense/autograd.hpp"

namespace csense::nn {

// Compares the reverse-mode gradient of fn (a Var<double> -> scalar Var
// builder) against central differences evaluated elementwise at x. Returns
// the largest relative error, with the denominator floored at 1e-3 so that
// finite-difference noise near zero-gradient coordinates does not dominate.
template <typename Fn>
double grad_check(Fn&& fn, const DTensor& x, double h = 1e-3) {
    auto vx = make_leaf<double>(x, /*requires_grad=*/true);
    auto loss = fn(vx);
    if (loss->value.numel() != 1) throw ShapeMismatch("grad_check: fn must return a scalar");
    backward(loss);
    DTensor analytic = vx->grad.numel() ? vx->grad : DTensor::zeros(x.shape);

    DTensor xp = x;
    double max_rel = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = xp.data[static_cast<size_t>(i)];
        xp.data[static_cast<size_t>(i)] = orig + h;
        const double fp = fn(make_leaf<double>(xp, false))->value.data[0];
        xp.data[static_cast<size_t>(i)] = orig - h;
        const double fm = fn(make_leaf<double>(xp, false))->value.data[0];
        xp.data[static_cast<size_t>(i)] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = analytic.data[static_cast<size_t>(i)];
        const double denom = std::max({std::abs(a), std::abs(fd), 1e-3});
        max_rel = std::max(max_rel, std::abs(a - fd) / denom);
    }
    return max_rel;
}

}  // namespace csense::nn
