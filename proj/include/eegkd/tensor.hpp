#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eegkd/common.hpp"

namespace eegkd {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (std::int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

// Running totals of float storage created on this thread. The attention
// complexity tests use these to assert that no n-by-n buffer is ever
// materialized on the separable path.
struct AllocStats {
    std::uint64_t floats_allocated = 0;
    std::uint64_t largest_block = 0;
};

namespace detail {
inline thread_local AllocStats g_alloc_stats;
}

inline AllocStats& alloc_stats() { return detail::g_alloc_stats; }
inline void reset_alloc_stats() { detail::g_alloc_stats = AllocStats{}; }

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;

    TensorImpl(Shape s, float fill) : shape(std::move(s)) {
        const std::int64_t n = checked_numel(shape);
        data.assign(static_cast<std::size_t>(n), fill);
        track();
    }
    TensorImpl(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
        if (checked_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        track();
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }

  private:
    static std::int64_t checked_numel(const Shape& s) {
        if (s.empty()) throw DimensionError("tensor shape must have at least one axis");
        for (std::int64_t d : s)
            if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(s));
        return shape_numel(s);
    }
    void track() {
        auto& st = alloc_stats();
        st.floats_allocated += data.size();
        st.largest_block = std::max<std::uint64_t>(st.largest_block, data.size());
    }
};

using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Value-semantic handle to a float32 array with shape metadata and an
// optional gradient buffer. Copies share storage; tensors are treated as
// immutable once produced by an op, except for gradient accumulation.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f)
        : impl_(std::make_shared<TensorImpl>(std::move(shape), fill)) {}
    Tensor(Shape shape, std::vector<float> values)
        : impl_(std::make_shared<TensorImpl>(std::move(shape), std::move(values))) {}

    static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::int64_t dim(int axis) const { return impl_->shape[static_cast<std::size_t>(axis)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::span<const float> values() const { return {impl_->data.data(), impl_->data.size()}; }
    const std::vector<float>& storage() const { return impl_->data; }

    float item() const {
        if (numel() != 1) throw ContractError("item() requires a scalar tensor, shape is " + shape_str(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        impl_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::vector<float>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    const std::vector<float>& grad_ref() const { return impl_->grad; }
    void zero_grad() {
        if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
    }

    // Deep copy of the values. The copy is a leaf with no grad buffer.
    Tensor clone() const {
        Tensor t(impl_->shape, impl_->data);
        return t;
    }

    bool all_finite() const {
        for (float v : impl_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    TensorImplPtr impl() const { return impl_; }

  private:
    TensorImplPtr impl_;
};

// Ordered record of executed primitive operations. Execution order is a
// topological order by construction: an op's inputs always exist before it
// runs. Backward replays the records newest-first, visiting each exactly once.
class Tape {
  public:
    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
    std::size_t size() const { return ops_.size(); }
    void clear() { ops_.clear(); }

    // Seeds d(root)/d(root) = 1 and replays every record in reverse order.
    // Returns the number of ops visited.
    std::size_t backward(const Tensor& root) {
        if (!root.defined() || root.numel() != 1)
            throw ContractError("backward root must be a defined scalar tensor");
        if (!root.requires_grad())
            throw ContractError("backward root does not require grad; nothing to differentiate");
        root.impl()->ensure_grad();
        root.impl()->grad[0] += 1.0f;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        return ops_.size();
    }

  private:
    std::vector<std::function<void()>> ops_;
};

namespace detail {
inline thread_local Tape* g_active_tape = nullptr;
}

inline Tape* active_tape() { return detail::g_active_tape; }

// Makes `tape` the recording target for ops on this thread.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape) : prev_(std::exchange(detail::g_active_tape, &tape)) {}
    ~TapeScope() { detail::g_active_tape = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

// Disables recording (inference / constant computation).
class NoGradScope {
  public:
    NoGradScope() : prev_(std::exchange(detail::g_active_tape, nullptr)) {}
    ~NoGradScope() { detail::g_active_tape = prev_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

  private:
    Tape* prev_;
};

namespace detail {

inline bool wants_grad(std::initializer_list<const Tensor*> inputs) {
    if (!active_tape()) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

}  // namespace detail

}  // namespace eegkd
