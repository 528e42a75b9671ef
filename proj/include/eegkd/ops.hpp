#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <vector>

#include "eegkd/tensor.hpp"

namespace eegkd {

namespace detail {

inline std::vector<std::int64_t> natural_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size());
    std::int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[static_cast<std::size_t>(i)] = acc;
        acc *= s[static_cast<std::size_t>(i)];
    }
    return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) +
                                 " are not broadcast-compatible");
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `s` viewed inside the broadcast result `out`; 0 along expanded axes.
inline std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<std::int64_t> st(out.size(), 0);
    const auto nat = natural_strides(s);
    const std::size_t off = out.size() - s.size();
    for (std::size_t i = 0; i < s.size(); ++i)
        st[off + i] = (s[i] == 1 && out[off + i] != 1) ? 0 : nat[i];
    return st;
}

// Walks the index space of `out` in ascending linear order, handing the
// callback matching linear offsets into two strided operands.
template <class Cb>
inline void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa,
                               const std::vector<std::int64_t>& sb, Cb&& cb) {
    const std::int64_t n = shape_numel(out);
    const int r = static_cast<int>(out.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t lin = 0; lin < n; ++lin) {
        cb(static_cast<std::size_t>(lin), static_cast<std::size_t>(oa), static_cast<std::size_t>(ob));
        for (int ax = r - 1; ax >= 0; --ax) {
            auto uax = static_cast<std::size_t>(ax);
            ++idx[uax];
            oa += sa[uax];
            ob += sb[uax];
            if (idx[uax] < out[uax]) break;
            oa -= sa[uax] * out[uax];
            ob -= sb[uax] * out[uax];
            idx[uax] = 0;
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary arithmetic with NumPy-style broadcasting.
// ---------------------------------------------------------------------------

enum class BinOp { Add, Sub, Mul, Div };

inline Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
    const bool same = a.shape() == b.shape();
    const Shape out_shape = same ? a.shape() : detail::broadcast_shape(a.shape(), b.shape());
    Tensor out(out_shape);
    const float* ad = a.data();
    const float* bd = b.data();
    float* od = out.data();

    auto fwd = [op](float x, float y) {
        switch (op) {
            case BinOp::Add: return x + y;
            case BinOp::Sub: return x - y;
            case BinOp::Mul: return x * y;
            default: return x / y;
        }
    };

    std::vector<std::int64_t> sa, sb;
    if (same) {
        const std::int64_t n = out.numel();
        for (std::int64_t i = 0; i < n; ++i) od[i] = fwd(ad[i], bd[i]);
    } else {
        sa = detail::broadcast_strides(a.shape(), out_shape);
        sb = detail::broadcast_strides(b.shape(), out_shape);
        detail::for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            od[o] = fwd(ad[ia], bd[ib]);
        });
    }

    if (detail::wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), op, same,
                               out_shape, sa = std::move(sa), sb = std::move(sb)] {
            if (oi->grad.empty()) return;
            const float* g = oi->grad.data();
            const float* av = ai->data.data();
            const float* bv = bi->data.data();
            const bool ga = ai->requires_grad;
            const bool gb = bi->requires_grad;
            if (ga) ai->ensure_grad();
            if (gb) bi->ensure_grad();
            float* da = ga ? ai->grad.data() : nullptr;
            float* db = gb ? bi->grad.data() : nullptr;
            auto accum = [&](std::size_t o, std::size_t ia, std::size_t ib) {
                const float gv = g[o];
                switch (op) {
                    case BinOp::Add:
                        if (da) da[ia] += gv;
                        if (db) db[ib] += gv;
                        break;
                    case BinOp::Sub:
                        if (da) da[ia] += gv;
                        if (db) db[ib] -= gv;
                        break;
                    case BinOp::Mul:
                        if (da) da[ia] += gv * bv[ib];
                        if (db) db[ib] += gv * av[ia];
                        break;
                    case BinOp::Div:
                        if (da) da[ia] += gv / bv[ib];
                        if (db) db[ib] -= gv * av[ia] / (bv[ib] * bv[ib]);
                        break;
                }
            };
            if (same) {
                const std::int64_t n = static_cast<std::int64_t>(oi->data.size());
                for (std::int64_t i = 0; i < n; ++i) accum(static_cast<std::size_t>(i),
                                                          static_cast<std::size_t>(i),
                                                          static_cast<std::size_t>(i));
            } else {
                detail::for_each_broadcast(out_shape, sa, sb, accum);
            }
        });
    }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }
inline Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div); }

inline Tensor add_scalar(const Tensor& x, float c) {
    Tensor out(x.shape());
    const float* xd = x.data();
    float* od = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) od[i] = xd[i] + c;
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl()] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

inline Tensor mul_scalar(const Tensor& x, float c) {
    Tensor out(x.shape());
    const float* xd = x.data();
    float* od = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) od[i] = xd[i] * c;
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl(), c] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += c * oi->grad[i];
        });
    }
    return out;
}

inline Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0f); }

// Stops gradient flow: a constant copy of x.
inline Tensor detach(const Tensor& x) { return x.clone(); }

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    const float* xd = x.data();
    float* od = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) od[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl()] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                if (xi->data[i] > 0.0f) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

inline Tensor silu(const Tensor& x) {
    Tensor out(x.shape());
    const float* xd = x.data();
    float* od = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-xd[i]));
        od[i] = xd[i] * s;
    }
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl()] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                const float v = xi->data[i];
                const float s = 1.0f / (1.0f + std::exp(-v));
                xi->grad[i] += oi->grad[i] * s * (1.0f + v * (1.0f - s));
            }
        });
    }
    return out;
}

inline Tensor gelu(const Tensor& x) {
    constexpr float kInvSqrt2 = 0.7071067811865476f;
    constexpr float kInvSqrt2Pi = 0.3989422804014327f;
    Tensor out(x.shape());
    const float* xd = x.data();
    float* od = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i)
        od[i] = 0.5f * xd[i] * (1.0f + std::erf(xd[i] * kInvSqrt2));
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl()] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                const float v = xi->data[i];
                const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
                const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
                xi->grad[i] += oi->grad[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax family. Numerically stabilized by max subtraction.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_axis(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(x.shape()));
}

// Decomposes the index space around `axis` into (outer, axis length, inner).
struct LaneSplit {
    std::int64_t outer, len, inner;
};

inline LaneSplit lane_split(const Shape& s, int axis) {
    LaneSplit ls{1, s[static_cast<std::size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) ls.outer *= s[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) ls.inner *= s[static_cast<std::size_t>(i)];
    return ls;
}

}  // namespace detail

inline Tensor softmax(const Tensor& x, int axis) {
    detail::check_axis(x, axis);
    const auto ls = detail::lane_split(x.shape(), axis);
    Tensor out(x.shape());
    const float* xd = x.data();
    float* od = out.data();
    for (std::int64_t o = 0; o < ls.outer; ++o) {
        for (std::int64_t in = 0; in < ls.inner; ++in) {
            const std::int64_t base = o * ls.len * ls.inner + in;
            float mx = xd[base];
            for (std::int64_t k = 1; k < ls.len; ++k)
                mx = std::max(mx, xd[base + k * ls.inner]);
            double denom = 0.0;
            for (std::int64_t k = 0; k < ls.len; ++k) {
                const float e = std::exp(xd[base + k * ls.inner] - mx);
                od[base + k * ls.inner] = e;
                denom += e;
            }
            const float inv = static_cast<float>(1.0 / denom);
            for (std::int64_t k = 0; k < ls.len; ++k) od[base + k * ls.inner] *= inv;
        }
    }
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl(), ls] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            const float* y = oi->data.data();
            const float* g = oi->grad.data();
            for (std::int64_t o = 0; o < ls.outer; ++o) {
                for (std::int64_t in = 0; in < ls.inner; ++in) {
                    const std::int64_t base = o * ls.len * ls.inner + in;
                    double dot = 0.0;
                    for (std::int64_t k = 0; k < ls.len; ++k) {
                        const std::int64_t p = base + k * ls.inner;
                        dot += static_cast<double>(g[p]) * y[p];
                    }
                    const float d = static_cast<float>(dot);
                    for (std::int64_t k = 0; k < ls.len; ++k) {
                        const std::int64_t p = base + k * ls.inner;
                        xi->grad[p] += (g[p] - d) * y[p];
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor log_softmax(const Tensor& x, int axis) {
    detail::check_axis(x, axis);
    const auto ls = detail::lane_split(x.shape(), axis);
    Tensor out(x.shape());
    const float* xd = x.data();
    float* od = out.data();
    for (std::int64_t o = 0; o < ls.outer; ++o) {
        for (std::int64_t in = 0; in < ls.inner; ++in) {
            const std::int64_t base = o * ls.len * ls.inner + in;
            float mx = xd[base];
            for (std::int64_t k = 1; k < ls.len; ++k)
                mx = std::max(mx, xd[base + k * ls.inner]);
            double denom = 0.0;
            for (std::int64_t k = 0; k < ls.len; ++k)
                denom += std::exp(static_cast<double>(xd[base + k * ls.inner]) - mx);
            const float lse = mx + static_cast<float>(std::log(denom));
            for (std::int64_t k = 0; k < ls.len; ++k) {
                const std::int64_t p = base + k * ls.inner;
                od[p] = xd[p] - lse;
            }
        }
    }
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl(), ls] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            const float* y = oi->data.data();
            const float* g = oi->grad.data();
            for (std::int64_t o = 0; o < ls.outer; ++o) {
                for (std::int64_t in = 0; in < ls.inner; ++in) {
                    const std::int64_t base = o * ls.len * ls.inner + in;
                    double gsum = 0.0;
                    for (std::int64_t k = 0; k < ls.len; ++k)
                        gsum += g[base + k * ls.inner];
                    const float gs = static_cast<float>(gsum);
                    for (std::int64_t k = 0; k < ls.len; ++k) {
                        const std::int64_t p = base + k * ls.inner;
                        xi->grad[p] += g[p] - std::exp(y[p]) * gs;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions. Accumulation runs in double for stability; iteration order is
// fixed (ascending input index) so results are bit-reproducible.
// ---------------------------------------------------------------------------

namespace detail {

struct ReducePlan {
    Shape out_shape;                    // result shape
    std::vector<std::int64_t> out_stride;  // per input axis: stride into result (0 if reduced)
    std::int64_t count = 1;             // number of elements folded into each output slot
};

inline ReducePlan make_reduce_plan(const Shape& in, std::vector<int> axes, bool keepdims) {
    std::vector<bool> reduced(in.size(), false);
    for (int a : axes) {
        if (a < 0 || a >= static_cast<int>(in.size()))
            throw DimensionError("reduce axis " + std::to_string(a) + " out of range for shape " +
                                 shape_str(in));
        reduced[static_cast<std::size_t>(a)] = true;
    }
    ReducePlan plan;
    Shape kept;
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (reduced[i]) {
            plan.count *= in[i];
            if (keepdims) kept.push_back(1);
        } else {
            kept.push_back(in[i]);
        }
    }
    if (kept.empty()) kept.push_back(1);
    plan.out_shape = kept;

    // Strides into the result for each *input* axis.
    plan.out_stride.assign(in.size(), 0);
    std::int64_t acc = 1;
    for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
        const auto ui = static_cast<std::size_t>(i);
        if (!reduced[ui]) {
            plan.out_stride[ui] = acc;
            acc *= in[ui];
        }
    }
    return plan;
}

// Walks input linearly, producing the matching output offset per element.
template <class Cb>
inline void for_each_reduce(const Shape& in, const ReducePlan& plan, Cb&& cb) {
    const std::int64_t n = shape_numel(in);
    const int r = static_cast<int>(in.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t off = 0;
    for (std::int64_t lin = 0; lin < n; ++lin) {
        cb(static_cast<std::size_t>(lin), static_cast<std::size_t>(off));
        for (int ax = r - 1; ax >= 0; --ax) {
            const auto uax = static_cast<std::size_t>(ax);
            ++idx[uax];
            off += plan.out_stride[uax];
            if (idx[uax] < in[uax]) break;
            off -= plan.out_stride[uax] * in[uax];
            idx[uax] = 0;
        }
    }
}

}  // namespace detail

inline Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdims = false) {
    const auto plan = detail::make_reduce_plan(x.shape(), axes, keepdims);
    std::vector<double> acc(static_cast<std::size_t>(shape_numel(plan.out_shape)), 0.0);
    const float* xd = x.data();
    detail::for_each_reduce(x.shape(), plan, [&](std::size_t i, std::size_t o) { acc[o] += xd[i]; });
    Tensor out(plan.out_shape);
    float* od = out.data();
    for (std::size_t i = 0; i < acc.size(); ++i) od[i] = static_cast<float>(acc[i]);
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl(), plan, in_shape = x.shape()] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            const float* g = oi->grad.data();
            float* dx = xi->grad.data();
            detail::for_each_reduce(in_shape, plan, [&](std::size_t i, std::size_t o) { dx[i] += g[o]; });
        });
    }
    return out;
}

inline Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdims = false) {
    const auto plan = detail::make_reduce_plan(x.shape(), axes, keepdims);
    const double scale = 1.0 / static_cast<double>(plan.count);
    std::vector<double> acc(static_cast<std::size_t>(shape_numel(plan.out_shape)), 0.0);
    const float* xd = x.data();
    detail::for_each_reduce(x.shape(), plan, [&](std::size_t i, std::size_t o) { acc[o] += xd[i]; });
    Tensor out(plan.out_shape);
    float* od = out.data();
    for (std::size_t i = 0; i < acc.size(); ++i) od[i] = static_cast<float>(acc[i] * scale);
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        const float fscale = static_cast<float>(scale);
        active_tape()->record([xi = x.impl(), oi = out.impl(), plan, fscale, in_shape = x.shape()] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            const float* g = oi->grad.data();
            float* dx = xi->grad.data();
            detail::for_each_reduce(in_shape, plan,
                                    [&](std::size_t i, std::size_t o) { dx[i] += g[o] * fscale; });
        });
    }
    return out;
}

inline Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    const float* xd = x.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) acc += xd[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl()] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            const float g = oi->grad[0];
            for (auto& v : xi->grad) v += g;
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& x) {
    double acc = 0.0;
    const float* xd = x.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) acc += xd[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        const float scale = 1.0f / static_cast<float>(n);
        active_tape()->record([xi = x.impl(), oi = out.impl(), scale] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            const float g = oi->grad[0] * scale;
            for (auto& v : xi->grad) v += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation.
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(new_shape) +
                             ": element count differs");
    Tensor out(std::move(new_shape), x.storage());
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl()] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

inline Tensor permute(const Tensor& x, const std::vector<int>& order) {
    const int r = x.rank();
    if (static_cast<int>(order.size()) != r)
        throw DimensionError("permute order has " + std::to_string(order.size()) +
                             " entries for rank-" + std::to_string(r) + " tensor");
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    Shape out_shape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const int ax = order[static_cast<std::size_t>(i)];
        if (ax < 0 || ax >= r || seen[static_cast<std::size_t>(ax)])
            throw DimensionError("invalid permute order");
        seen[static_cast<std::size_t>(ax)] = true;
        out_shape[static_cast<std::size_t>(i)] = x.dim(ax);
    }
    const auto in_strides = detail::natural_strides(x.shape());
    std::vector<std::int64_t> src_stride(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
        src_stride[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];

    Tensor out(out_shape);
    const float* xd = x.data();
    float* od = out.data();
    const std::int64_t n = x.numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t src = 0;
    for (std::int64_t lin = 0; lin < n; ++lin) {
        od[lin] = xd[src];
        for (int ax = r - 1; ax >= 0; --ax) {
            const auto uax = static_cast<std::size_t>(ax);
            ++idx[uax];
            src += src_stride[uax];
            if (idx[uax] < out_shape[uax]) break;
            src -= src_stride[uax] * out_shape[uax];
            idx[uax] = 0;
        }
    }
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl(), out_shape, src_stride, r] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            const float* g = oi->grad.data();
            float* dx = xi->grad.data();
            const std::int64_t n = static_cast<std::int64_t>(oi->data.size());
            std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
            std::int64_t src = 0;
            for (std::int64_t lin = 0; lin < n; ++lin) {
                dx[src] += g[lin];
                for (int ax = r - 1; ax >= 0; --ax) {
                    const auto uax = static_cast<std::size_t>(ax);
                    ++idx[uax];
                    src += src_stride[uax];
                    if (idx[uax] < out_shape[uax]) break;
                    src -= src_stride[uax] * out_shape[uax];
                    idx[uax] = 0;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix products.
// ---------------------------------------------------------------------------

namespace detail {

// C += A (m x k) * B (k x n). ikj order keeps the inner loop contiguous.
inline void mm_acc(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        float* crow = c + i * n;
        const float* arow = a + i * k;
        for (std::int64_t t = 0; t < k; ++t) {
            const float av = arow[t];
            const float* brow = b + t * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// dA += G (m x n) * B^T, dB += A^T * G; either pointer may be null.
inline void mm_backward(const float* a, const float* b, const float* g, float* da, float* db,
                        std::int64_t m, std::int64_t k, std::int64_t n) {
    if (da) {
        // dA[i,t] = sum_j G[i,j] * B[t,j]; transpose B once for contiguity.
        std::vector<float> bt(static_cast<std::size_t>(k * n));
        for (std::int64_t t = 0; t < k; ++t)
            for (std::int64_t j = 0; j < n; ++j) bt[j * k + t] = b[t * n + j];
        mm_acc(g, bt.data(), da, m, n, k);
    }
    if (db) {
        for (std::int64_t i = 0; i < m; ++i) {
            const float* arow = a + i * k;
            const float* grow = g + i * n;
            for (std::int64_t t = 0; t < k; ++t) {
                const float av = arow[t];
                float* dbrow = db + t * n;
                for (std::int64_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
            }
        }
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out(Shape{m, n});
    detail::mm_acc(a.data(), b.data(), out.data(), m, k, n);
    if (detail::wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
            if (oi->grad.empty()) return;
            float* da = nullptr;
            float* db = nullptr;
            if (ai->requires_grad) {
                ai->ensure_grad();
                da = ai->grad.data();
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                db = bi->grad.data();
            }
            detail::mm_backward(ai->data.data(), bi->data.data(), oi->grad.data(), da, db, m, k, n);
        });
    }
    return out;
}

// Batched matmul: (B, m, k) x (B, k, n) -> (B, m, n).
inline Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw DimensionError("bmm expects (B,m,k) x (B,k,n), got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const std::int64_t nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor out(Shape{nb, m, n});
    for (std::int64_t c = 0; c < nb; ++c)
        detail::mm_acc(a.data() + c * m * k, b.data() + c * k * n, out.data() + c * m * n, m, k, n);
    if (detail::wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), nb, m, k, n] {
            if (oi->grad.empty()) return;
            float* da = nullptr;
            float* db = nullptr;
            if (ai->requires_grad) {
                ai->ensure_grad();
                da = ai->grad.data();
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                db = bi->grad.data();
            }
            for (std::int64_t c = 0; c < nb; ++c)
                detail::mm_backward(ai->data.data() + c * m * k, bi->data.data() + c * k * n,
                                    oi->grad.data() + c * m * n, da ? da + c * m * k : nullptr,
                                    db ? db + c * k * n : nullptr, m, k, n);
        });
    }
    return out;
}

// y = x W + b for row-major weights (in x out). Bias may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    if (b.defined()) y = add(y, b);
    return y;
}

// ---------------------------------------------------------------------------
// Dropout with inverted scaling: evaluation mode is the identity.
// ---------------------------------------------------------------------------

inline Tensor dropout(const Tensor& x, float rate, bool training, Rng* rng) {
    if (rate < 0.0f || rate >= 1.0f)
        throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0f) return x;
    if (!rng) throw ContractError("dropout in training mode needs an RNG");
    const float keep = 1.0f - rate;
    const float scale = 1.0f / keep;
    auto mask = std::make_shared<std::vector<float>>(static_cast<std::size_t>(x.numel()));
    Tensor out(x.shape());
    const float* xd = x.data();
    float* od = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const float m = uniform01(*rng) < keep ? scale : 0.0f;
        (*mask)[static_cast<std::size_t>(i)] = m;
        od[i] = xd[i] * m;
    }
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([xi = x.impl(), oi = out.impl(), mask] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                xi->grad[i] += oi->grad[i] * (*mask)[i];
        });
    }
    return out;
}

}  // namespace eegkd
