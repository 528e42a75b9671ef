#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "eegkd/tensor.hpp"

namespace eegkd {

struct Stride2 {
    std::int64_t h = 1, w = 1;
};
struct Pad2 {
    std::int64_t h = 0, w = 0;
};

namespace detail {

struct Conv2dDims {
    std::int64_t n, cin, h, w;
    std::int64_t cout, cin_g, kh, kw;
    std::int64_t sh, sw, ph, pw;
    std::int64_t groups;
    std::int64_t oh, ow;
};

inline Conv2dDims conv2d_dims(const Tensor& x, const Tensor& weight, const Tensor& bias, Stride2 stride,
                              Pad2 padding, std::int64_t groups) {
    if (x.rank() != 4) throw DimensionError("conv2d input must be (N,C,H,W), got " + shape_str(x.shape()));
    if (weight.rank() != 4)
        throw DimensionError("conv2d weight must be (Cout,Cin/groups,Kh,Kw), got " + shape_str(weight.shape()));
    if (stride.h < 1 || stride.w < 1) throw ConfigError("conv2d stride must be >= 1");
    if (padding.h < 0 || padding.w < 0) throw ConfigError("conv2d padding must be >= 0");
    if (groups < 1) throw ConfigError("conv2d groups must be >= 1");

    Conv2dDims d;
    d.n = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.cout = weight.dim(0);
    d.cin_g = weight.dim(1);
    d.kh = weight.dim(2);
    d.kw = weight.dim(3);
    d.sh = stride.h;
    d.sw = stride.w;
    d.ph = padding.h;
    d.pw = padding.w;
    d.groups = groups;

    if (d.cin % groups != 0 || d.cout % groups != 0)
        throw DimensionError("conv2d channels not divisible by groups");
    if (d.cin_g != d.cin / groups)
        throw DimensionError("conv2d weight expects " + std::to_string(d.cin / groups) +
                             " input channels per group, got " + std::to_string(d.cin_g));
    if (d.h + 2 * d.ph < d.kh || d.w + 2 * d.pw < d.kw)
        throw DimensionError("conv2d kernel " + std::to_string(d.kh) + "x" + std::to_string(d.kw) +
                             " larger than padded input " + std::to_string(d.h + 2 * d.ph) + "x" +
                             std::to_string(d.w + 2 * d.pw));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.cout))
        throw DimensionError("conv2d bias must be (Cout)");

    d.oh = (d.h + 2 * d.ph - d.kh) / d.sh + 1;
    d.ow = (d.w + 2 * d.pw - d.kw) / d.sw + 1;
    return d;
}

// Valid output-column range for a kernel column: iw = ow*sw + kw - pw in [0, W).
inline std::pair<std::int64_t, std::int64_t> conv_col_range(std::int64_t kw, std::int64_t pw,
                                                            std::int64_t sw, std::int64_t w,
                                                            std::int64_t ow_count) {
    const std::int64_t num = pw - kw;
    const std::int64_t lo = num <= 0 ? 0 : (num + sw - 1) / sw;
    std::int64_t hi = (w - 1 + pw - kw) / sw;
    if (hi > ow_count - 1) hi = ow_count - 1;
    return {lo, hi};
}

}  // namespace detail

// 2-D cross-correlation with stride, zero padding and grouping. Bias is
// optional (pass a default-constructed Tensor for none).
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Stride2 stride = {},
                     Pad2 padding = {}, std::int64_t groups = 1) {
    const auto d = detail::conv2d_dims(x, weight, bias, stride, padding, groups);
    Tensor out(Shape{d.n, d.cout, d.oh, d.ow});

    const float* xd = x.data();
    const float* wd = weight.data();
    const float* bd = bias.defined() ? bias.data() : nullptr;
    float* od = out.data();
    const std::int64_t cout_g = d.cout / d.groups;

    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t co = 0; co < d.cout; ++co) {
            const std::int64_t g = co / cout_g;
            float* oplane = od + (n * d.cout + co) * d.oh * d.ow;
            if (bd) {
                const float b = bd[co];
                for (std::int64_t i = 0; i < d.oh * d.ow; ++i) oplane[i] = b;
            }
            for (std::int64_t ci = 0; ci < d.cin_g; ++ci) {
                const std::int64_t cx = g * d.cin_g + ci;
                const float* xplane = xd + (n * d.cin + cx) * d.h * d.w;
                const float* wbase = wd + ((co * d.cin_g + ci) * d.kh) * d.kw;
                for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                    for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                        const float wv = wbase[kh * d.kw + kw];
                        const auto [wlo, whi] = detail::conv_col_range(kw, d.pw, d.sw, d.w, d.ow);
                        const std::int64_t col0 = kw - d.pw;
                        for (std::int64_t oh = 0; oh < d.oh; ++oh) {
                            const std::int64_t ih = oh * d.sh - d.ph + kh;
                            if (ih < 0 || ih >= d.h) continue;
                            const float* xrow = xplane + ih * d.w;
                            float* orow = oplane + oh * d.ow;
                            for (std::int64_t ow = wlo; ow <= whi; ++ow)
                                orow[ow] += wv * xrow[ow * d.sw + col0];
                        }
                    }
                }
            }
        }
    }

    if (detail::wants_grad({&x, &weight, &bias})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), wi = weight.impl(),
                               bimpl = bias.defined() ? bias.impl() : TensorImplPtr{}, oi = out.impl(), d] {
            if (oi->grad.empty()) return;
            const float* g = oi->grad.data();
            const float* xd = xi->data.data();
            const float* wd = wi->data.data();
            const bool need_dx = xi->requires_grad;
            const bool need_dw = wi->requires_grad;
            const bool need_db = bimpl && bimpl->requires_grad;
            if (!need_dx && !need_dw && !need_db) return;
            if (need_dx) xi->ensure_grad();
            if (need_dw) wi->ensure_grad();
            if (need_db) bimpl->ensure_grad();
            float* dx = need_dx ? xi->grad.data() : nullptr;
            float* dw = need_dw ? wi->grad.data() : nullptr;
            float* db = need_db ? bimpl->grad.data() : nullptr;
            const std::int64_t cout_g = d.cout / d.groups;

            for (std::int64_t n = 0; n < d.n; ++n) {
                for (std::int64_t co = 0; co < d.cout; ++co) {
                    const std::int64_t gi = co / cout_g;
                    const float* gplane = g + (n * d.cout + co) * d.oh * d.ow;
                    if (db) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < d.oh * d.ow; ++i) acc += gplane[i];
                        db[co] += static_cast<float>(acc);
                    }
                    if (!need_dx && !need_dw) continue;
                    for (std::int64_t ci = 0; ci < d.cin_g; ++ci) {
                        const std::int64_t cx = gi * d.cin_g + ci;
                        const float* xplane = xd + (n * d.cin + cx) * d.h * d.w;
                        float* dxplane = dx ? dx + (n * d.cin + cx) * d.h * d.w : nullptr;
                        const std::int64_t wbase = (co * d.cin_g + ci) * d.kh * d.kw;
                        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                                const float wv = wd[wbase + kh * d.kw + kw];
                                const auto [wlo, whi] = detail::conv_col_range(kw, d.pw, d.sw, d.w, d.ow);
                                const std::int64_t col0 = kw - d.pw;
                                double wacc = 0.0;
                                for (std::int64_t oh = 0; oh < d.oh; ++oh) {
                                    const std::int64_t ih = oh * d.sh - d.ph + kh;
                                    if (ih < 0 || ih >= d.h) continue;
                                    const float* grow = gplane + oh * d.ow;
                                    const float* xrow = xplane + ih * d.w;
                                    if (dw)
                                        for (std::int64_t ow = wlo; ow <= whi; ++ow)
                                            wacc += static_cast<double>(grow[ow]) * xrow[ow * d.sw + col0];
                                    if (dxplane) {
                                        float* dxrow = dxplane + ih * d.w;
                                        for (std::int64_t ow = wlo; ow <= whi; ++ow)
                                            dxrow[ow * d.sw + col0] += wv * grow[ow];
                                    }
                                }
                                if (dw) dw[wbase + kh * d.kw + kw] += static_cast<float>(wacc);
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Causal dilated 1-D cross-correlation. Left-pads with (K-1)*dilation zeros
// so the output has the input's length and out[t] depends only on x[<=t].
inline Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                            std::int64_t dilation = 1) {
    if (x.rank() != 3) throw DimensionError("causal_conv1d input must be (N,C,T), got " + shape_str(x.shape()));
    if (weight.rank() != 3)
        throw DimensionError("causal_conv1d weight must be (Cout,Cin,K), got " + shape_str(weight.shape()));
    if (dilation < 1) throw ConfigError("causal_conv1d dilation must be >= 1");
    const std::int64_t n = x.dim(0), cin = x.dim(1), t = x.dim(2);
    const std::int64_t cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != cin)
        throw DimensionError("causal_conv1d weight expects " + std::to_string(cin) +
                             " input channels, got " + std::to_string(weight.dim(1)));
    if (k < 1) throw DimensionError("causal_conv1d kernel must have K >= 1");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
        throw DimensionError("causal_conv1d bias must be (Cout)");

    Tensor out(Shape{n, cout, t});
    const float* xd = x.data();
    const float* wd = weight.data();
    const float* bd = bias.defined() ? bias.data() : nullptr;
    float* od = out.data();

    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t co = 0; co < cout; ++co) {
            float* orow = od + (b * cout + co) * t;
            const float bv = bd ? bd[co] : 0.0f;
            for (std::int64_t i = 0; i < t; ++i) orow[i] = bv;
            for (std::int64_t ci = 0; ci < cin; ++ci) {
                const float* xrow = xd + (b * cin + ci) * t;
                const float* wrow = wd + (co * cin + ci) * k;
                for (std::int64_t tap = 0; tap < k; ++tap) {
                    const std::int64_t shift = (k - 1 - tap) * dilation;
                    if (shift >= t) continue;
                    const float wv = wrow[tap];
                    for (std::int64_t i = shift; i < t; ++i) orow[i] += wv * xrow[i - shift];
                }
            }
        }
    }

    if (detail::wants_grad({&x, &weight, &bias})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), wi = weight.impl(),
                               bimpl = bias.defined() ? bias.impl() : TensorImplPtr{}, oi = out.impl(), n,
                               cin, t, cout, k, dilation] {
            if (oi->grad.empty()) return;
            const float* g = oi->grad.data();
            const float* xd = xi->data.data();
            const float* wd = wi->data.data();
            const bool need_dx = xi->requires_grad;
            const bool need_dw = wi->requires_grad;
            const bool need_db = bimpl && bimpl->requires_grad;
            if (!need_dx && !need_dw && !need_db) return;
            if (need_dx) xi->ensure_grad();
            if (need_dw) wi->ensure_grad();
            if (need_db) bimpl->ensure_grad();
            float* dx = need_dx ? xi->grad.data() : nullptr;
            float* dw = need_dw ? wi->grad.data() : nullptr;
            float* db = need_db ? bimpl->grad.data() : nullptr;

            for (std::int64_t b = 0; b < n; ++b) {
                for (std::int64_t co = 0; co < cout; ++co) {
                    const float* grow = g + (b * cout + co) * t;
                    if (db) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < t; ++i) acc += grow[i];
                        db[co] += static_cast<float>(acc);
                    }
                    if (!need_dx && !need_dw) continue;
                    for (std::int64_t ci = 0; ci < cin; ++ci) {
                        const float* xrow = xd + (b * cin + ci) * t;
                        float* dxrow = dx ? dx + (b * cin + ci) * t : nullptr;
                        const std::int64_t wbase = (co * cin + ci) * k;
                        for (std::int64_t tap = 0; tap < k; ++tap) {
                            const std::int64_t shift = (k - 1 - tap) * dilation;
                            if (shift >= t) continue;
                            const float wv = wd[wbase + tap];
                            if (dw) {
                                double acc = 0.0;
                                for (std::int64_t i = shift; i < t; ++i)
                                    acc += static_cast<double>(grow[i]) * xrow[i - shift];
                                dw[wbase + tap] += static_cast<float>(acc);
                            }
                            if (dxrow)
                                for (std::int64_t i = shift; i < t; ++i) dxrow[i - shift] += wv * grow[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace eegkd
