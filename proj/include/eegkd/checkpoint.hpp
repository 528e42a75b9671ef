#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "eegkd/common.hpp"
#include "eegkd/model.hpp"
#include "eegkd/tensor.hpp"

namespace eegkd {

// "EGMW" checkpoint format (little-endian):
//   magic "EGMW" | version u32=1 | count u32
//   then per tensor: name length u32 | UTF-8 name | rank u32 | dims u64 x rank
//   | raw float32 payload
// Round-trips are bit-exact. All model tensors are stored, including the
// non-trainable running statistics.

inline void save_checkpoint(const std::string& path, const Model& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    const char magic[4] = {'E', 'G', 'M', 'W'};
    const std::uint32_t version = 1;
    const std::uint32_t count = static_cast<std::uint32_t>(m.entries.size());
    out.write(magic, 4);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& e : m.entries) {
        const std::uint32_t name_len = static_cast<std::uint32_t>(e.name.size());
        out.write(reinterpret_cast<const char*>(&name_len), 4);
        out.write(e.name.data(), name_len);
        const std::uint32_t rank = static_cast<std::uint32_t>(e.tensor.rank());
        out.write(reinterpret_cast<const char*>(&rank), 4);
        for (std::int64_t d : e.tensor.shape()) {
            const std::uint64_t dim = static_cast<std::uint64_t>(d);
            out.write(reinterpret_cast<const char*>(&dim), 8);
        }
        out.write(reinterpret_cast<const char*>(e.tensor.data()),
                  static_cast<std::streamsize>(e.tensor.numel() * 4));
    }
    if (!out) throw Error("write failed for '" + path + "'");
}

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint '" + path + "'", 0);
    std::size_t offset = 0;
    auto read = [&](void* p, std::size_t n, const char* what) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw FormatError(std::string("truncated checkpoint while reading ") + what, offset);
        offset += n;
    };
    char magic[4];
    read(magic, 4, "magic");
    if (std::memcmp(magic, "EGMW", 4) != 0) throw FormatError("bad magic, expected 'EGMW'", 0);
    std::uint32_t version = 0, count = 0;
    read(&version, 4, "version");
    if (version != 1) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    read(&count, 4, "tensor count");

    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = 0;
        read(&name_len, 4, "name length");
        std::string name(name_len, '\0');
        read(name.data(), name_len, "name");
        std::uint32_t rank = 0;
        read(&rank, 4, "rank");
        if (rank == 0 || rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), offset - 4);
        Shape shape(rank);
        for (std::uint32_t r = 0; r < rank; ++r) {
            std::uint64_t dim = 0;
            read(&dim, 8, "dims");
            shape[r] = static_cast<std::int64_t>(dim);
        }
        std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
        read(data.data(), data.size() * 4, "tensor payload");
        out.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
    }
    return out;
}

// Copies checkpoint values into an already-built model. Every model tensor
// must be present with a matching shape.
inline void load_into_model(const std::string& path, Model& m) {
    const auto tensors = load_checkpoint(path);
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& nt : tensors) by_name[nt.name] = &nt;
    for (auto& e : m.entries) {
        auto it = by_name.find(e.name);
        if (it == by_name.end()) throw FormatError("checkpoint missing tensor '" + e.name + "'", 0);
        const Tensor& src = it->second->tensor;
        if (src.shape() != e.tensor.shape())
            throw FormatError("checkpoint tensor '" + e.name + "' has shape " + shape_str(src.shape()) +
                                  ", model expects " + shape_str(e.tensor.shape()),
                              0);
        std::copy_n(src.data(), src.numel(), e.tensor.data());
    }
}

}  // namespace eegkd
