#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "eegkd/bench.hpp"
#include "eegkd/data.hpp"
#include "eegkd/model.hpp"
#include "eegkd/ops.hpp"

namespace eegkd {

// Distillation hyperparameters.
struct KDConfig {
    float temperature = 20.0f;
    float lambda = 0.9f;
    std::int64_t epochs = 15;
    std::int64_t batch_size = 64;
    float lr = 1e-3f;
    float weight_decay = 0.3f;
    std::int64_t scheduler_step = 6;
    float scheduler_gamma = 0.1f;
    std::uint32_t seed = 0;
};

inline void validate(const KDConfig& cfg) {
    if (!(cfg.temperature > 0.0f)) throw ConfigError("temperature must be > 0");
    if (cfg.lambda < 0.0f || cfg.lambda > 1.0f) throw ConfigError("lambda must lie in [0,1]");
    if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.scheduler_step < 1)
        throw ConfigError("epochs, batch_size and scheduler_step must be >= 1");
}

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

// Mean squared error over all B x 2 entries.
inline Tensor true_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw DimensionError("true_loss shapes differ: " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    Tensor diff = sub(pred, target);
    return mean_all(mul(diff, diff));
}

// T^2-scaled KL divergence between temperature-softened outputs. The teacher
// side is detached: no gradient ever reaches it.
inline Tensor distill_loss(const Tensor& student_out, const Tensor& teacher_out, float temperature) {
    if (!(temperature > 0.0f)) throw ConfigError("distillation temperature must be > 0");
    if (student_out.rank() != 2 || student_out.shape() != teacher_out.shape())
        throw DimensionError("distill_loss expects matching (B,K) outputs");
    const float inv_t = 1.0f / temperature;
    Tensor p, log_p;
    {
        NoGradScope no_grad;
        Tensor soft = mul_scalar(detach(teacher_out), inv_t);
        p = softmax(soft, 1);
        log_p = log_softmax(soft, 1);
    }
    Tensor log_q = log_softmax(mul_scalar(student_out, inv_t), 1);
    Tensor per_sample = sum(mul(p, sub(log_p, log_q)), {1});
    return mul_scalar(mean_all(per_sample), temperature * temperature);
}

// (1 - lambda) * true loss + lambda * distillation loss.
inline Tensor kd_loss(const Tensor& student_out, const Tensor& teacher_out, const Tensor& target,
                      const KDConfig& cfg) {
    validate(cfg);
    Tensor lt = true_loss(student_out, target);
    Tensor ld = distill_loss(student_out, teacher_out, cfg.temperature);
    return add(mul_scalar(lt, 1.0f - cfg.lambda), mul_scalar(ld, cfg.lambda));
}

// ---------------------------------------------------------------------------
// Adam with coupled L2 weight decay (gradient += wd * param) and bias
// correction.
// ---------------------------------------------------------------------------

struct AdamState {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    std::int64_t t = 0;
    std::vector<std::vector<float>> m, v;
};

inline void adam_step(AdamState& st, std::vector<Tensor>& params, float lr, float weight_decay) {
    if (st.m.empty()) {
        st.m.resize(params.size());
        st.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            st.m[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0f);
            st.v[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0f);
        }
    }
    if (st.m.size() != params.size()) throw ContractError("optimizer state does not match parameter list");
    ++st.t;
    const float bc1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(st.beta1), static_cast<double>(st.t)));
    const float bc2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(st.beta2), static_cast<double>(st.t)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& param = params[i];
        if (st.m[i].size() != static_cast<std::size_t>(param.numel()))
            throw ContractError("optimizer moment shape does not match its parameter");
        if (!param.has_grad()) continue;
        float* p = param.data();
        const float* g = param.grad_ref().data();
        float* mo = st.m[i].data();
        float* vo = st.v[i].data();
        const std::int64_t n = param.numel();
        for (std::int64_t j = 0; j < n; ++j) {
            const float grad = g[j] + weight_decay * p[j];
            mo[j] = st.beta1 * mo[j] + (1.0f - st.beta1) * grad;
            vo[j] = st.beta2 * vo[j] + (1.0f - st.beta2) * grad * grad;
            const float mhat = mo[j] / bc1;
            const float vhat = vo[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// Piecewise-constant step decay: lr * gamma^floor(epoch / step).
inline float lr_at(std::int64_t epoch, const KDConfig& cfg) {
    if (epoch < 0) throw ContractError("epoch must be >= 0");
    const auto k = static_cast<double>(epoch / cfg.scheduler_step);
    return static_cast<float>(static_cast<double>(cfg.lr) *
                              std::pow(static_cast<double>(cfg.scheduler_gamma), k));
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct EpochRecord {
    std::int64_t epoch;
    float lr;
    double train_loss;
    double val_rmse;
};

struct FitResult {
    std::vector<EpochRecord> history;
    double best_val_rmse = std::numeric_limits<double>::infinity();
    std::int64_t best_epoch = -1;
};

namespace detail {

inline std::string first_non_finite_tensor(const Model& m, const Tensor& pred) {
    for (const auto& e : m.entries)
        if (!e.tensor.all_finite()) return e.name;
    if (pred.defined() && !pred.all_finite()) return "model output";
    return "loss";
}

}  // namespace detail

// Fixed-field-order history record, one line per epoch.
inline void write_history(const std::string& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << "epoch,lr,train_loss,val_rmse\n";
    char buf[128];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.12g,%.12g\n", static_cast<long long>(r.epoch),
                      static_cast<double>(r.lr), r.train_loss, r.val_rmse);
        out << buf;
    }
}

// Epoch loop with seed-deterministic shuffling, per-epoch scheduler, kd_loss
// when a teacher is supplied, and best-validation parameter retention. The
// teacher runs in evaluation mode with gradients disabled; its predictions
// over the training set are computed once up front (they are constant).
inline FitResult fit(Model& model, Model* teacher, const DatasetContainer& train_data,
                     const DatasetContainer& val_data, const KDConfig& cfg) {
    validate(cfg);
    train_data.validate();
    val_data.validate();
    if (train_data.n_samples == 0) throw ContractError("fit requires a nonempty training split");
    if (val_data.n_samples == 0) throw ContractError("fit requires a nonempty validation split");

    auto params = model.parameters();
    AdamState opt;
    Rng dropout_rng(cfg.seed ^ 0x6d2b79f5u);

    Tensor teacher_pred;
    if (teacher) teacher_pred = predict_all(*teacher, train_data, cfg.batch_size);

    const std::int64_t n = train_data.n_samples;
    const std::int64_t sf = train_data.sample_floats();
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));

    FitResult result;
    std::vector<std::vector<float>> best_state;

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const float lr = lr_at(epoch, cfg);
        std::seed_seq seq{cfg.seed, static_cast<std::uint32_t>(epoch)};
        Rng shuffle_rng(seq);
        std::iota(order.begin(), order.end(), 0);
        for (std::int64_t i = n - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(uniform_int(shuffle_rng, i + 1))]);

        double loss_acc = 0.0;
        for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
            const std::int64_t bs = std::min(cfg.batch_size, n - start);
            Tensor x(Shape{bs, train_data.channels, train_data.timesteps});
            Tensor y(Shape{bs, 2});
            Tensor t_out;
            if (teacher) t_out = Tensor(Shape{bs, 2});
            for (std::int64_t b = 0; b < bs; ++b) {
                const std::int64_t src = order[static_cast<std::size_t>(start + b)];
                std::copy_n(train_data.eeg.data() + src * sf, sf, x.data() + b * sf);
                y.data()[b * 2] = train_data.labels[static_cast<std::size_t>(src) * 2];
                y.data()[b * 2 + 1] = train_data.labels[static_cast<std::size_t>(src) * 2 + 1];
                if (teacher) {
                    t_out.data()[b * 2] = teacher_pred.data()[src * 2];
                    t_out.data()[b * 2 + 1] = teacher_pred.data()[src * 2 + 1];
                }
            }

            Tape tape;
            Tensor loss;
            Tensor pred;
            try {
                TapeScope scope(tape);
                pred = model_forward(model, x, /*train=*/true, &dropout_rng);
                loss = teacher ? kd_loss(pred, t_out, y, cfg) : true_loss(pred, y);
            } catch (const NumericError& e) {
                throw NumericError("training aborted at epoch " + std::to_string(epoch) + ": " + e.what() +
                                   "; first non-finite tensor: " +
                                   detail::first_non_finite_tensor(model, pred));
            }
            const float loss_value = loss.item();
            if (!std::isfinite(loss_value))
                throw NumericError("training aborted at epoch " + std::to_string(epoch) +
                                   ": non-finite loss; first non-finite tensor: " +
                                   detail::first_non_finite_tensor(model, pred));
            {
                TapeScope scope(tape);
                tape.backward(loss);
            }
            adam_step(opt, params, lr, cfg.weight_decay);
            model.zero_grad();
            loss_acc += static_cast<double>(loss_value) * static_cast<double>(bs);
        }

        const double train_loss = loss_acc / static_cast<double>(n);
        const double val_rmse = rmse_eval(model, val_data, 1.0, cfg.batch_size);
        result.history.push_back({epoch, lr, train_loss, val_rmse});
        if (val_rmse < result.best_val_rmse) {
            result.best_val_rmse = val_rmse;
            result.best_epoch = epoch;
            best_state.clear();
            best_state.reserve(model.entries.size());
            for (const auto& e : model.entries) best_state.push_back(e.tensor.storage());
        }
    }

    // Restore the best-validation snapshot (parameters and buffers).
    if (!best_state.empty())
        for (std::size_t i = 0; i < model.entries.size(); ++i)
            std::copy(best_state[i].begin(), best_state[i].end(), model.entries[i].tensor.data());

    return result;
}

}  // namespace eegkd
