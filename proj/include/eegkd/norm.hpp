#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "eegkd/tensor.hpp"

namespace eegkd {

// Batch normalization over (N,H,W) per channel of an (N,C,H,W) tensor.
// Training mode normalizes with batch statistics and updates the running
// buffers in place (running variance stored unbiased). Evaluation mode
// normalizes with the running buffers and touches nothing.
inline Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           Tensor& running_mean, Tensor& running_var, bool training,
                           float momentum = 0.1f, float eps = 1e-5f) {
    if (x.rank() != 4) throw DimensionError("batch_norm2d input must be (N,C,H,W), got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c || running_var.numel() != c)
        throw DimensionError("batch_norm2d parameter size must equal channel count " + std::to_string(c));

    const std::int64_t plane = h * w;
    const std::int64_t m = n * plane;
    Tensor out(x.shape());
    const float* xd = x.data();
    const float* gd = gamma.data();
    const float* bd = beta.data();
    float* od = out.data();

    auto mean_c = std::make_shared<std::vector<float>>(static_cast<std::size_t>(c));
    auto invstd_c = std::make_shared<std::vector<float>>(static_cast<std::size_t>(c));

    if (training) {
        float* rm = running_mean.data();
        float* rv = running_var.data();
        for (std::int64_t ch = 0; ch < c; ++ch) {
            double sum = 0.0;
            for (std::int64_t b = 0; b < n; ++b) {
                const float* row = xd + (b * c + ch) * plane;
                for (std::int64_t i = 0; i < plane; ++i) sum += row[i];
            }
            const double mu = sum / static_cast<double>(m);
            double var = 0.0;
            for (std::int64_t b = 0; b < n; ++b) {
                const float* row = xd + (b * c + ch) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d = row[i] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            (*mean_c)[static_cast<std::size_t>(ch)] = static_cast<float>(mu);
            (*invstd_c)[static_cast<std::size_t>(ch)] = static_cast<float>(1.0 / std::sqrt(var + eps));
            const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
            rm[ch] = (1.0f - momentum) * rm[ch] + momentum * static_cast<float>(mu);
            rv[ch] = (1.0f - momentum) * rv[ch] + momentum * static_cast<float>(unbiased);
        }
    } else {
        const float* rm = running_mean.data();
        const float* rv = running_var.data();
        for (std::int64_t ch = 0; ch < c; ++ch) {
            (*mean_c)[static_cast<std::size_t>(ch)] = rm[ch];
            (*invstd_c)[static_cast<std::size_t>(ch)] = 1.0f / std::sqrt(rv[ch] + eps);
        }
    }

    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const float mu = (*mean_c)[static_cast<std::size_t>(ch)];
            const float is = (*invstd_c)[static_cast<std::size_t>(ch)];
            const float gv = gd[ch], bv = bd[ch];
            const float* row = xd + (b * c + ch) * plane;
            float* orow = od + (b * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) orow[i] = gv * (row[i] - mu) * is + bv;
        }
    }

    if (detail::wants_grad({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(),
                               mean_c, invstd_c, n, c, plane, training] {
            if (oi->grad.empty()) return;
            const float* g = oi->grad.data();
            const float* xd = xi->data.data();
            const float* gd = gi->data.data();
            const bool need_dx = xi->requires_grad;
            const bool need_dg = gi->requires_grad;
            const bool need_db = bi->requires_grad;
            if (!need_dx && !need_dg && !need_db) return;
            if (need_dx) xi->ensure_grad();
            if (need_dg) gi->ensure_grad();
            if (need_db) bi->ensure_grad();
            const std::int64_t m = n * plane;

            for (std::int64_t ch = 0; ch < c; ++ch) {
                const float mu = (*mean_c)[static_cast<std::size_t>(ch)];
                const float is = (*invstd_c)[static_cast<std::size_t>(ch)];
                double gsum = 0.0, gxhat = 0.0;
                for (std::int64_t b = 0; b < n; ++b) {
                    const float* grow = g + (b * c + ch) * plane;
                    const float* xrow = xd + (b * c + ch) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        gsum += grow[i];
                        gxhat += static_cast<double>(grow[i]) * ((xrow[i] - mu) * is);
                    }
                }
                if (need_dg) gi->grad[static_cast<std::size_t>(ch)] += static_cast<float>(gxhat);
                if (need_db) bi->grad[static_cast<std::size_t>(ch)] += static_cast<float>(gsum);
                if (!need_dx) continue;
                const float gv = gd[ch];
                if (training) {
                    const float mean_g = static_cast<float>(gsum / static_cast<double>(m));
                    const float mean_gx = static_cast<float>(gxhat / static_cast<double>(m));
                    for (std::int64_t b = 0; b < n; ++b) {
                        const float* grow = g + (b * c + ch) * plane;
                        const float* xrow = xd + (b * c + ch) * plane;
                        float* dxrow = xi->grad.data() + (b * c + ch) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) {
                            const float xhat = (xrow[i] - mu) * is;
                            dxrow[i] += gv * is * (grow[i] - mean_g - xhat * mean_gx);
                        }
                    }
                } else {
                    const float scale = gv * is;
                    for (std::int64_t b = 0; b < n; ++b) {
                        const float* grow = g + (b * c + ch) * plane;
                        float* dxrow = xi->grad.data() + (b * c + ch) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) dxrow[i] += scale * grow[i];
                    }
                }
            }
        });
    }
    return out;
}

// Layer normalization over the last axis.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f) {
    const std::int64_t d = x.dim(x.rank() - 1);
    if (gamma.numel() != d || beta.numel() != d)
        throw DimensionError("layer_norm parameters must match last axis " + std::to_string(d));
    const std::int64_t lanes = x.numel() / d;

    Tensor out(x.shape());
    const float* xd = x.data();
    const float* gd = gamma.data();
    const float* bd = beta.data();
    float* od = out.data();

    auto mean_l = std::make_shared<std::vector<float>>(static_cast<std::size_t>(lanes));
    auto invstd_l = std::make_shared<std::vector<float>>(static_cast<std::size_t>(lanes));

    for (std::int64_t l = 0; l < lanes; ++l) {
        const float* row = xd + l * d;
        double sum = 0.0;
        for (std::int64_t i = 0; i < d; ++i) sum += row[i];
        const double mu = sum / static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t i = 0; i < d; ++i) {
            const double diff = row[i] - mu;
            var += diff * diff;
        }
        var /= static_cast<double>(d);
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*mean_l)[static_cast<std::size_t>(l)] = static_cast<float>(mu);
        (*invstd_l)[static_cast<std::size_t>(l)] = is;
        float* orow = od + l * d;
        for (std::int64_t i = 0; i < d; ++i)
            orow[i] = gd[i] * (row[i] - static_cast<float>(mu)) * is + bd[i];
    }

    if (detail::wants_grad({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(),
                               mean_l, invstd_l, lanes, d] {
            if (oi->grad.empty()) return;
            const float* g = oi->grad.data();
            const float* xd = xi->data.data();
            const float* gd = gi->data.data();
            const bool need_dx = xi->requires_grad;
            const bool need_dg = gi->requires_grad;
            const bool need_db = bi->requires_grad;
            if (!need_dx && !need_dg && !need_db) return;
            if (need_dx) xi->ensure_grad();
            if (need_dg) gi->ensure_grad();
            if (need_db) bi->ensure_grad();

            for (std::int64_t l = 0; l < lanes; ++l) {
                const float mu = (*mean_l)[static_cast<std::size_t>(l)];
                const float is = (*invstd_l)[static_cast<std::size_t>(l)];
                const float* grow = g + l * d;
                const float* xrow = xd + l * d;
                if (need_dg || need_db) {
                    for (std::int64_t i = 0; i < d; ++i) {
                        const float xhat = (xrow[i] - mu) * is;
                        if (need_dg) gi->grad[static_cast<std::size_t>(i)] += grow[i] * xhat;
                        if (need_db) bi->grad[static_cast<std::size_t>(i)] += grow[i];
                    }
                }
                if (!need_dx) continue;
                double s1 = 0.0, s2 = 0.0;  // sums of g*gamma and g*gamma*xhat
                for (std::int64_t i = 0; i < d; ++i) {
                    const float gg = grow[i] * gd[i];
                    const float xhat = (xrow[i] - mu) * is;
                    s1 += gg;
                    s2 += static_cast<double>(gg) * xhat;
                }
                const float m1 = static_cast<float>(s1 / static_cast<double>(d));
                const float m2 = static_cast<float>(s2 / static_cast<double>(d));
                float* dxrow = xi->grad.data() + l * d;
                for (std::int64_t i = 0; i < d; ++i) {
                    const float gg = grow[i] * gd[i];
                    const float xhat = (xrow[i] - mu) * is;
                    dxrow[i] += is * (gg - m1 - xhat * m2);
                }
            }
        });
    }
    return out;
}

// Weight normalization: W = g * v / ||v|| per output channel (axis 0).
// Rescaling v by any positive constant leaves W unchanged.
inline Tensor weight_norm(const Tensor& v, const Tensor& g) {
    if (v.rank() < 2) throw DimensionError("weight_norm expects rank >= 2, got " + shape_str(v.shape()));
    const std::int64_t cout = v.dim(0);
    if (g.numel() != cout)
        throw DimensionError("weight_norm gain must have one entry per output channel");
    const std::int64_t row = v.numel() / cout;

    Tensor out(v.shape());
    const float* vd = v.data();
    const float* gd = g.data();
    float* od = out.data();
    auto norms = std::make_shared<std::vector<float>>(static_cast<std::size_t>(cout));

    for (std::int64_t o = 0; o < cout; ++o) {
        const float* vrow = vd + o * row;
        double sq = 0.0;
        for (std::int64_t i = 0; i < row; ++i) sq += static_cast<double>(vrow[i]) * vrow[i];
        const float norm = static_cast<float>(std::sqrt(sq));
        if (!(norm > 0.0f)) throw NumericError("weight_norm: direction vector has zero norm");
        (*norms)[static_cast<std::size_t>(o)] = norm;
        const float scale = gd[o] / norm;
        float* orow = od + o * row;
        for (std::int64_t i = 0; i < row; ++i) orow[i] = vrow[i] * scale;
    }

    if (detail::wants_grad({&v, &g})) {
        out.set_requires_grad(true);
        active_tape()->record([vi = v.impl(), gi = g.impl(), oi = out.impl(), norms, cout, row] {
            if (oi->grad.empty()) return;
            const float* gw = oi->grad.data();
            const float* vd = vi->data.data();
            const float* gd = gi->data.data();
            const bool need_dv = vi->requires_grad;
            const bool need_dg = gi->requires_grad;
            if (!need_dv && !need_dg) return;
            if (need_dv) vi->ensure_grad();
            if (need_dg) gi->ensure_grad();

            for (std::int64_t o = 0; o < cout; ++o) {
                const float norm = (*norms)[static_cast<std::size_t>(o)];
                const float* vrow = vd + o * row;
                const float* grow = gw + o * row;
                double dot = 0.0;  // <dW, v/||v||>
                for (std::int64_t i = 0; i < row; ++i)
                    dot += static_cast<double>(grow[i]) * (vrow[i] / norm);
                if (need_dg) gi->grad[static_cast<std::size_t>(o)] += static_cast<float>(dot);
                if (need_dv) {
                    const float scale = gd[o] / norm;
                    const float fd = static_cast<float>(dot);
                    float* dvrow = vi->grad.data() + o * row;
                    for (std::int64_t i = 0; i < row; ++i)
                        dvrow[i] += scale * (grow[i] - fd * (vrow[i] / norm));
                }
            }
        });
    }
    return out;
}

}  // namespace eegkd
