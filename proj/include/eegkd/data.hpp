#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "eegkd/common.hpp"
#include "eegkd/tensor.hpp"

namespace eegkd {

// EEG samples (channels x timesteps) paired with gaze labels in screen
// pixels, plus optional participant ids. Stored row-major, float32.
struct DatasetContainer {
    std::int64_t n_samples = 0;
    std::int64_t channels = 129;
    std::int64_t timesteps = 500;
    std::vector<float> eeg;                     // n * channels * timesteps
    std::vector<float> labels;                  // n * 2
    std::vector<std::uint32_t> participant_ids; // empty or size n

    bool has_participants() const { return !participant_ids.empty(); }

    std::int64_t sample_floats() const { return channels * timesteps; }
    const float* sample(std::int64_t i) const { return eeg.data() + i * sample_floats(); }
    const float* label(std::int64_t i) const { return labels.data() + i * 2; }

    void validate() const {
        if (n_samples < 0 || channels < 1 || timesteps < 1)
            throw ContractError("dataset header values out of range");
        if (static_cast<std::int64_t>(eeg.size()) != n_samples * sample_floats())
            throw ContractError("dataset eeg array length inconsistent with header");
        if (static_cast<std::int64_t>(labels.size()) != n_samples * 2)
            throw ContractError("dataset label array length inconsistent with header");
        if (!participant_ids.empty() && static_cast<std::int64_t>(participant_ids.size()) != n_samples)
            throw ContractError("dataset participant id array length inconsistent with header");
    }
};

struct SplitSpec {
    double train_fraction = 0.70;
    double val_fraction = 0.15;
    double test_fraction = 0.15;
    std::uint32_t seed = 0;
    bool group_by_participant = false;
};

struct SyntheticSpec {
    std::int64_t n_samples = 0;
    float noise_std = 1.0f;
    float signal_gain = 1.0f;
    std::uint32_t seed = 0;
};

// ---------------------------------------------------------------------------
// "EEGT" binary container format (little-endian):
//   magic "EEGT" | version u32=1 | n_samples u64 | channels u32 | timesteps u32
//   | label_dim u32=2 | has_participants u8 | eeg f32[] | labels f32[]
//   | participant ids u32[] (only if has_participants)
// ---------------------------------------------------------------------------

namespace detail {

inline void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

struct ByteReader {
    std::ifstream in;
    std::size_t offset = 0;
    explicit ByteReader(const std::string& path) : in(path, std::ios::binary) {
        if (!in) throw FormatError("cannot open file '" + path + "'", 0);
    }
    void read(void* p, std::size_t n, const char* what) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw FormatError(std::string("truncated file while reading ") + what, offset);
        offset += n;
    }
    template <class T>
    T scalar(const char* what) {
        T v;
        read(&v, sizeof(T), what);
        return v;
    }
};

}  // namespace detail

inline void write_container(const std::string& path, const DatasetContainer& d) {
    d.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    const char magic[4] = {'E', 'E', 'G', 'T'};
    const std::uint32_t version = 1;
    const std::uint64_t n = static_cast<std::uint64_t>(d.n_samples);
    const std::uint32_t ch = static_cast<std::uint32_t>(d.channels);
    const std::uint32_t ts = static_cast<std::uint32_t>(d.timesteps);
    const std::uint32_t label_dim = 2;
    const std::uint8_t has_p = d.has_participants() ? 1 : 0;
    detail::write_bytes(out, magic, 4);
    detail::write_bytes(out, &version, 4);
    detail::write_bytes(out, &n, 8);
    detail::write_bytes(out, &ch, 4);
    detail::write_bytes(out, &ts, 4);
    detail::write_bytes(out, &label_dim, 4);
    detail::write_bytes(out, &has_p, 1);
    detail::write_bytes(out, d.eeg.data(), d.eeg.size() * 4);
    detail::write_bytes(out, d.labels.data(), d.labels.size() * 4);
    if (has_p) detail::write_bytes(out, d.participant_ids.data(), d.participant_ids.size() * 4);
    if (!out) throw Error("write failed for '" + path + "'");
}

inline DatasetContainer read_container(const std::string& path) {
    detail::ByteReader r(path);
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, "EEGT", 4) != 0) throw FormatError("bad magic, expected 'EEGT'", 0);
    const auto version = r.scalar<std::uint32_t>("version");
    if (version != 1) throw FormatError("unsupported version " + std::to_string(version), 4);
    DatasetContainer d;
    d.n_samples = static_cast<std::int64_t>(r.scalar<std::uint64_t>("n_samples"));
    d.channels = r.scalar<std::uint32_t>("channels");
    d.timesteps = r.scalar<std::uint32_t>("timesteps");
    const auto label_dim = r.scalar<std::uint32_t>("label_dim");
    if (label_dim != 2) throw FormatError("unsupported label_dim " + std::to_string(label_dim), 24);
    const auto has_p = r.scalar<std::uint8_t>("has_participants");
    if (has_p > 1) throw FormatError("has_participants flag must be 0 or 1", 28);
    d.eeg.resize(static_cast<std::size_t>(d.n_samples * d.channels * d.timesteps));
    r.read(d.eeg.data(), d.eeg.size() * 4, "eeg payload");
    d.labels.resize(static_cast<std::size_t>(d.n_samples * 2));
    r.read(d.labels.data(), d.labels.size() * 4, "label payload");
    if (has_p) {
        d.participant_ids.resize(static_cast<std::size_t>(d.n_samples));
        r.read(d.participant_ids.data(), d.participant_ids.size() * 4, "participant ids");
    }
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// Label filtering and splitting.
// ---------------------------------------------------------------------------

constexpr float kScreenWidth = 800.0f;
constexpr float kScreenHeight = 600.0f;

namespace detail {

inline DatasetContainer take_samples(const DatasetContainer& d, const std::vector<std::int64_t>& idx) {
    DatasetContainer out;
    out.n_samples = static_cast<std::int64_t>(idx.size());
    out.channels = d.channels;
    out.timesteps = d.timesteps;
    const std::int64_t sf = d.sample_floats();
    out.eeg.resize(static_cast<std::size_t>(out.n_samples * sf));
    out.labels.resize(static_cast<std::size_t>(out.n_samples * 2));
    if (d.has_participants()) out.participant_ids.resize(static_cast<std::size_t>(out.n_samples));
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const std::int64_t i = idx[j];
        std::copy_n(d.eeg.data() + i * sf, sf, out.eeg.data() + static_cast<std::int64_t>(j) * sf);
        out.labels[j * 2] = d.labels[static_cast<std::size_t>(i) * 2];
        out.labels[j * 2 + 1] = d.labels[static_cast<std::size_t>(i) * 2 + 1];
        if (d.has_participants()) out.participant_ids[j] = d.participant_ids[static_cast<std::size_t>(i)];
    }
    return out;
}

}  // namespace detail

// Keeps exactly the samples whose labels lie inside the screen, bounds
// inclusive: 0 <= x <= 800 and 0 <= y <= 600.
inline DatasetContainer filter_valid_labels(const DatasetContainer& d) {
    d.validate();
    std::vector<std::int64_t> keep;
    keep.reserve(static_cast<std::size_t>(d.n_samples));
    for (std::int64_t i = 0; i < d.n_samples; ++i) {
        const float x = d.labels[static_cast<std::size_t>(i) * 2];
        const float y = d.labels[static_cast<std::size_t>(i) * 2 + 1];
        if (x >= 0.0f && x <= kScreenWidth && y >= 0.0f && y <= kScreenHeight) keep.push_back(i);
    }
    return detail::take_samples(d, keep);
}

struct DataSplits {
    DatasetContainer train, val, test;
};

// Seed-deterministic 70/15/15 split. Sample mode shuffles samples and gives
// the remainder to train. Grouped mode applies the fractions to participants
// so no participant spans two splits.
inline DataSplits split(const DatasetContainer& d, const SplitSpec& s) {
    d.validate();
    const double total = s.train_fraction + s.val_fraction + s.test_fraction;
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    if (s.train_fraction < 0 || s.val_fraction < 0 || s.test_fraction < 0)
        throw ConfigError("split fractions must be nonnegative");

    Rng rng(s.seed);
    std::vector<std::int64_t> train_idx, val_idx, test_idx;

    if (s.group_by_participant) {
        if (!d.has_participants()) throw ConfigError("grouped split requires participant ids");
        std::vector<std::uint32_t> pids;
        for (std::int64_t i = 0; i < d.n_samples; ++i) {
            const std::uint32_t p = d.participant_ids[static_cast<std::size_t>(i)];
            if (std::find(pids.begin(), pids.end(), p) == pids.end()) pids.push_back(p);
        }
        std::sort(pids.begin(), pids.end());
        // Fisher-Yates with the pinned uniform_int transform.
        for (std::int64_t i = static_cast<std::int64_t>(pids.size()) - 1; i > 0; --i)
            std::swap(pids[static_cast<std::size_t>(i)], pids[static_cast<std::size_t>(uniform_int(rng, i + 1))]);
        const std::int64_t np = static_cast<std::int64_t>(pids.size());
        const std::int64_t nv = static_cast<std::int64_t>(std::floor(s.val_fraction * static_cast<double>(np)));
        const std::int64_t nt = static_cast<std::int64_t>(std::floor(s.test_fraction * static_cast<double>(np)));
        std::vector<int> assign(static_cast<std::size_t>(np), 0);  // 0 train, 1 val, 2 test
        for (std::int64_t i = np - nv - nt; i < np - nt; ++i) assign[static_cast<std::size_t>(i)] = 1;
        for (std::int64_t i = np - nt; i < np; ++i) assign[static_cast<std::size_t>(i)] = 2;
        std::unordered_map<std::uint32_t, int> bucket;
        for (std::int64_t i = 0; i < np; ++i) bucket[pids[static_cast<std::size_t>(i)]] = assign[static_cast<std::size_t>(i)];
        for (std::int64_t i = 0; i < d.n_samples; ++i) {
            switch (bucket[d.participant_ids[static_cast<std::size_t>(i)]]) {
                case 0: train_idx.push_back(i); break;
                case 1: val_idx.push_back(i); break;
                default: test_idx.push_back(i); break;
            }
        }
    } else {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(d.n_samples));
        std::iota(idx.begin(), idx.end(), 0);
        for (std::int64_t i = d.n_samples - 1; i > 0; --i)
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(uniform_int(rng, i + 1))]);
        const std::int64_t nv = static_cast<std::int64_t>(std::floor(s.val_fraction * static_cast<double>(d.n_samples)));
        const std::int64_t nt = static_cast<std::int64_t>(std::floor(s.test_fraction * static_cast<double>(d.n_samples)));
        const std::int64_t ntr = d.n_samples - nv - nt;
        train_idx.assign(idx.begin(), idx.begin() + ntr);
        val_idx.assign(idx.begin() + ntr, idx.begin() + ntr + nv);
        test_idx.assign(idx.begin() + ntr + nv, idx.end());
    }

    DataSplits out;
    out.train = detail::take_samples(d, train_idx);
    out.val = detail::take_samples(d, val_idx);
    out.test = detail::take_samples(d, test_idx);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator: labels drawn from the 25-dot grid spanning the
// screen; EEG is smoothed Gaussian noise plus a planted sinusoid-modulated
// encoding of the label on the first 32 channels.
// ---------------------------------------------------------------------------

inline std::vector<std::pair<float, float>> synthetic_grid_positions() {
    std::vector<std::pair<float, float>> grid;
    for (int gy = 0; gy < 5; ++gy)
        for (int gx = 0; gx < 5; ++gx)
            grid.emplace_back(static_cast<float>(gx) * 200.0f, static_cast<float>(gy) * 150.0f);
    return grid;
}

inline DatasetContainer generate_synthetic(const SyntheticSpec& s) {
    if (s.n_samples < 1) throw ConfigError("synthetic n_samples must be >= 1");
    if (s.noise_std < 0.0f) throw ConfigError("synthetic noise_std must be >= 0");

    const auto grid = synthetic_grid_positions();
    DatasetContainer d;
    d.n_samples = s.n_samples;
    d.eeg.resize(static_cast<std::size_t>(d.n_samples * d.channels * d.timesteps));
    d.labels.resize(static_cast<std::size_t>(d.n_samples * 2));
    d.participant_ids.resize(static_cast<std::size_t>(d.n_samples));

    Rng rng(s.seed);
    const std::int64_t t_len = d.timesteps;
    constexpr std::int64_t kSmoothWindow = 5;
    std::vector<float> raw(static_cast<std::size_t>(t_len));

    for (std::int64_t i = 0; i < d.n_samples; ++i) {
        const auto& pos = grid[static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(grid.size())))];
        d.labels[static_cast<std::size_t>(i) * 2] = pos.first;
        d.labels[static_cast<std::size_t>(i) * 2 + 1] = pos.second;
        d.participant_ids[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i % 27);

        const float code_x = pos.first / 400.0f - 1.0f;
        const float code_y = pos.second / 300.0f - 1.0f;
        float* sample = d.eeg.data() + i * d.sample_floats();
        for (std::int64_t c = 0; c < d.channels; ++c) {
            for (std::int64_t t = 0; t < t_len; ++t) raw[static_cast<std::size_t>(t)] = normal01(rng);
            float* row = sample + c * t_len;
            // Causal moving average correlates neighbouring steps.
            double acc = 0.0;
            for (std::int64_t t = 0; t < t_len; ++t) {
                acc += raw[static_cast<std::size_t>(t)];
                if (t >= kSmoothWindow) acc -= raw[static_cast<std::size_t>(t - kSmoothWindow)];
                const std::int64_t w = std::min(t + 1, kSmoothWindow);
                row[t] = s.noise_std * static_cast<float>(acc / static_cast<double>(w));
            }
            float code = 0.0f;
            if (c < 16)
                code = code_x;
            else if (c < 32)
                code = code_y;
            if (code != 0.0f && s.signal_gain != 0.0f) {
                const float freq = 1.0f + 0.5f * static_cast<float>(c % 16);
                const float phase = 0.7f * static_cast<float>(c);
                for (std::int64_t t = 0; t < t_len; ++t) {
                    const float mod = 1.0f + 0.5f * std::sin(6.2831853f * freq * static_cast<float>(t) /
                                                                 static_cast<float>(t_len) +
                                                             phase);
                    row[t] += s.signal_gain * code * mod;
                }
            }
        }
    }
    return d;
}

}  // namespace eegkd
