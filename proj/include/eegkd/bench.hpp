#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegkd/data.hpp"
#include "eegkd/model.hpp"

namespace eegkd {

// Parameter counts, accuracy and latency statistics for one model, shaped
// like the published comparison table.
struct BenchReport {
    std::string model;
    std::int64_t params = 0;
    double rmse_mean = 0.0;
    double rmse_std = 0.0;
    double runtime_mean_min = 0.0;
    double runtime_std_min = 0.0;
    int runs = 5;
    int passes = 10;
    std::string hardware;
};

// Batched evaluation-mode forward over a whole container -> (n, out_dim).
inline Tensor predict_all(Model& m, const DatasetContainer& d, std::int64_t batch_size = 64) {
    d.validate();
    if (d.n_samples == 0) throw ContractError("predict_all on empty dataset");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    NoGradScope no_grad;
    const std::int64_t sf = d.sample_floats();
    std::int64_t out_dim = -1;
    Tensor out;
    for (std::int64_t start = 0; start < d.n_samples; start += batch_size) {
        const std::int64_t bs = std::min(batch_size, d.n_samples - start);
        Tensor x(Shape{bs, d.channels, d.timesteps});
        std::copy_n(d.eeg.data() + start * sf, bs * sf, x.data());
        Tensor pred = model_forward(m, x, /*train=*/false);
        if (out_dim < 0) {
            out_dim = pred.dim(1);
            out = Tensor(Shape{d.n_samples, out_dim});
        }
        std::copy_n(pred.data(), bs * out_dim, out.data() + start * out_dim);
    }
    return out;
}

enum class DistanceMetric {
    MeanEuclidean,       // mean over samples of per-sample distance (benchmark convention)
    RootMeanSquare       // strict sqrt(mean squared distance) variant
};

inline double distance_metric(const Tensor& pred, const DatasetContainer& d, double px_to_mm,
                              DistanceMetric kind = DistanceMetric::MeanEuclidean) {
    if (d.n_samples == 0) throw ContractError("distance metric on empty dataset");
    if (pred.dim(0) != d.n_samples || pred.dim(1) != 2)
        throw DimensionError("predictions must be (n,2) matching the dataset");
    const float* p = pred.data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < d.n_samples; ++i) {
        const double dx = static_cast<double>(p[i * 2]) - d.labels[static_cast<std::size_t>(i) * 2];
        const double dy = static_cast<double>(p[i * 2 + 1]) - d.labels[static_cast<std::size_t>(i) * 2 + 1];
        const double sq = dx * dx + dy * dy;
        acc += kind == DistanceMetric::MeanEuclidean ? std::sqrt(sq) : sq;
    }
    acc /= static_cast<double>(d.n_samples);
    if (kind == DistanceMetric::RootMeanSquare) acc = std::sqrt(acc);
    return acc * px_to_mm;
}

// Mean Euclidean prediction error, scaled by the pixel-to-millimeter factor.
inline double rmse_eval(Model& m, const DatasetContainer& d, double px_to_mm = 1.0,
                        std::int64_t batch_size = 64,
                        DistanceMetric kind = DistanceMetric::MeanEuclidean) {
    Tensor pred = predict_all(m, d, batch_size);
    return distance_metric(pred, d, px_to_mm, kind);
}

// Constant predictor at the training-label mean, evaluated on eval_data.
inline double naive_baseline(const DatasetContainer& train_data, const DatasetContainer& eval_data,
                             double px_to_mm = 1.0) {
    if (train_data.n_samples == 0) throw ContractError("naive baseline needs training labels");
    double mx = 0.0, my = 0.0;
    for (std::int64_t i = 0; i < train_data.n_samples; ++i) {
        mx += train_data.labels[static_cast<std::size_t>(i) * 2];
        my += train_data.labels[static_cast<std::size_t>(i) * 2 + 1];
    }
    mx /= static_cast<double>(train_data.n_samples);
    my /= static_cast<double>(train_data.n_samples);
    Tensor pred(Shape{eval_data.n_samples, 2});
    for (std::int64_t i = 0; i < eval_data.n_samples; ++i) {
        pred.data()[i * 2] = static_cast<float>(mx);
        pred.data()[i * 2 + 1] = static_cast<float>(my);
    }
    return distance_metric(pred, eval_data, px_to_mm);
}

struct LatencyStats {
    double mean_minutes = 0.0;
    double std_minutes = 0.0;
    int runs = 0;
    int passes = 0;
};

// Times `runs` measurements, each covering `passes` full-dataset inference
// sweeps. One warm-up sweep runs first and is discarded. Model construction
// and data loading are outside the timed region by construction.
inline LatencyStats latency_bench(Model& m, const DatasetContainer& d, int passes = 10, int runs = 5,
                                  std::int64_t batch_size = 64) {
    if (runs < 1) throw ConfigError("latency_bench needs runs >= 1");
    if (passes < 0) throw ConfigError("latency_bench needs passes >= 0");
    using Clock = std::chrono::steady_clock;
    if (passes > 0) (void)predict_all(m, d, batch_size);  // warm-up, excluded

    std::vector<double> minutes(static_cast<std::size_t>(runs), 0.0);
    for (int r = 0; r < runs; ++r) {
        const auto t0 = Clock::now();
        for (int p = 0; p < passes; ++p) (void)predict_all(m, d, batch_size);
        const auto t1 = Clock::now();
        minutes[static_cast<std::size_t>(r)] =
            std::chrono::duration<double>(t1 - t0).count() / 60.0;
    }
    LatencyStats st;
    st.runs = runs;
    st.passes = passes;
    double mean = 0.0;
    for (double v : minutes) mean += v;
    mean /= static_cast<double>(runs);
    double var = 0.0;
    for (double v : minutes) var += (v - mean) * (v - mean);
    var /= static_cast<double>(runs);
    st.mean_minutes = mean;
    st.std_minutes = std::sqrt(var);
    return st;
}

// ---------------------------------------------------------------------------
// Report serialization: JSON with a stable key order, plus an aligned
// plain-text comparison table sorted by runtime.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json report_to_json(const BenchReport& r) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["params"] = r.params;
    j["rmse_mean"] = r.rmse_mean;
    j["rmse_std"] = r.rmse_std;
    j["runtime_mean_min"] = r.runtime_mean_min;
    j["runtime_std_min"] = r.runtime_std_min;
    j["runs"] = r.runs;
    j["passes"] = r.passes;
    j["hardware"] = r.hardware;
    return j;
}

inline BenchReport report_from_json(const nlohmann::json& j) {
    BenchReport r;
    r.model = j.at("model").get<std::string>();
    r.params = j.at("params").get<std::int64_t>();
    r.rmse_mean = j.at("rmse_mean").get<double>();
    r.rmse_std = j.at("rmse_std").get<double>();
    r.runtime_mean_min = j.at("runtime_mean_min").get<double>();
    r.runtime_std_min = j.at("runtime_std_min").get<double>();
    r.runs = j.at("runs").get<int>();
    r.passes = j.at("passes").get<int>();
    r.hardware = j.at("hardware").get<std::string>();
    return r;
}

inline void emit_report(const BenchReport& r, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << report_to_json(r).dump(2) << "\n";
    if (!out) throw Error("write failed for '" + path + "'");
}

inline BenchReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open report '" + path + "'", 0);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad report JSON: ") + e.what(), 0);
    }
    return report_from_json(j);
}

// Rows sorted by mean runtime, fastest first.
inline std::string comparison_table(std::vector<BenchReport> reports) {
    std::sort(reports.begin(), reports.end(),
              [](const BenchReport& a, const BenchReport& b) { return a.runtime_mean_min < b.runtime_mean_min; });
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-16s %14s %20s %24s\n", "model", "params (M)", "rmse (mean+/-std)",
                  "runtime min (mean+/-std)");
    out += buf;
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof(buf), "%-16s %14.2f %11.2f +/- %5.2f %15.3f +/- %6.3f\n", r.model.c_str(),
                      static_cast<double>(r.params) / 1e6, r.rmse_mean, r.rmse_std, r.runtime_mean_min,
                      r.runtime_std_min);
        out += buf;
    }
    return out;
}

}  // namespace eegkd
