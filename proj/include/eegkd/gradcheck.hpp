#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "eegkd/tensor.hpp"

namespace eegkd {

// Central finite-difference check of reverse-mode gradients.
//
// f must be a pure scalar-valued function of x (evaluated several times per
// coordinate). Returns the worst relative error across coordinates, with
// denominator max(|analytic|, |numeric|, 1e-8).
inline float grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                        float step = 1e-3f) {
    std::vector<float> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        x.set_requires_grad(true);
        x.zero_grad();
        Tensor y = f(x);
        tape.backward(y);
        analytic = x.grad();
        x.zero_grad();
    }

    float worst = 0.0f;
    float* xd = x.data();
    const std::int64_t n = x.numel();
    NoGradScope no_grad;
    for (std::int64_t i = 0; i < n; ++i) {
        const float orig = xd[i];
        xd[i] = orig + step;
        const double fp = f(x).item();
        xd[i] = orig - step;
        const double fm = f(x).item();
        xd[i] = orig;
        const double numeric = (fp - fm) / (2.0 * static_cast<double>(step));
        const double a = analytic[static_cast<std::size_t>(i)];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, static_cast<float>(std::abs(a - numeric) / denom));
    }
    return worst;
}

}  // namespace eegkd
