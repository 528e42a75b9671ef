#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "eegkd/common.hpp"
#include "eegkd/conv.hpp"
#include "eegkd/norm.hpp"
#include "eegkd/ops.hpp"
#include "eegkd/tensor.hpp"

namespace eegkd {

struct Size2 {
    std::int64_t h = 1, w = 1;
};

// Student: TCN front end, two feature-extraction convolutions, a MobileViT-
// style backbone with separable attention, global average pooling and a
// linear regression head.
struct StudentConfig {
    std::int64_t in_channels = 129;
    std::int64_t timesteps = 500;
    std::vector<std::int64_t> tcn_channels = {64, 128, 256};
    std::int64_t tcn_kernel = 3;
    float tcn_dropout = 0.75f;
    std::int64_t fe1_out = 256;
    Size2 fe1_kernel = {1, 36};
    Size2 fe1_stride = {1, 36};
    Size2 fe1_padding = {0, 2};
    std::int64_t fe2_out = 768;
    std::int64_t mvit_blocks = 1;
    std::int64_t mvit_transformer_layers = 1;
    std::int64_t mvit_dim = 768;
    std::int64_t mvit_ffn_expansion = 2;
    Size2 mvit_conv_kernel = {3, 3};
    Size2 mvit_patch = {1, 1};
    float head_dropout = 0.1f;
    std::int64_t out_dim = 2;
};

// Teacher: same front end, then a pre-LN ViT encoder with standard
// multi-head attention, mean pooling and a linear head.
struct TeacherConfig {
    std::int64_t in_channels = 129;
    std::int64_t timesteps = 500;
    std::vector<std::int64_t> tcn_channels = {64, 128, 256};
    std::int64_t tcn_kernel = 3;
    float tcn_dropout = 0.75f;
    std::int64_t fe1_out = 256;
    Size2 fe1_kernel = {1, 36};
    Size2 fe1_stride = {1, 36};
    Size2 fe1_padding = {0, 2};
    std::int64_t fe2_out = 768;
    std::int64_t vit_dim = 768;
    std::int64_t vit_layers = 12;
    std::int64_t vit_heads = 12;
    std::int64_t vit_mlp = 3072;
    float head_dropout = 0.1f;
    std::int64_t out_dim = 2;
};

// Instantiated parameter set. Tensor names are unique, insertion-ordered and
// stable across runs; they double as the checkpoint serialization key.
struct Model {
    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable;
    };

    std::string arch;  // "student" | "teacher"
    std::variant<StudentConfig, TeacherConfig> config;
    std::vector<Entry> entries;
    std::unordered_map<std::string, std::size_t> index;

    Tensor& add(const std::string& name, Tensor t, bool trainable) {
        if (index.count(name)) throw ContractError("duplicate model tensor name: " + name);
        index.emplace(name, entries.size());
        entries.push_back(Entry{name, std::move(t), trainable});
        Tensor& stored = entries.back().tensor;
        stored.set_requires_grad(trainable);
        return stored;
    }

    bool has(const std::string& name) const { return index.count(name) != 0; }

    Tensor& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw ContractError("unknown model tensor: " + name);
        return entries[it->second].tensor;
    }
    const Tensor& at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw ContractError("unknown model tensor: " + name);
        return entries[it->second].tensor;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (const auto& e : entries)
            if (e.trainable) out.push_back(e.tensor);
        return out;
    }

    void zero_grad() {
        for (auto& e : entries)
            if (e.trainable) e.tensor.zero_grad();
    }

    const StudentConfig& student_cfg() const { return std::get<StudentConfig>(config); }
    const TeacherConfig& teacher_cfg() const { return std::get<TeacherConfig>(config); }
};

// ---------------------------------------------------------------------------
// Shape bookkeeping shared by builders and forwards.
// ---------------------------------------------------------------------------

namespace detail {

template <class Cfg>
inline void validate_frontend(const Cfg& cfg) {
    if (cfg.in_channels < 1) throw ConfigError("in_channels must be >= 1");
    if (cfg.timesteps < 1) throw ConfigError("timesteps must be >= 1");
    if (cfg.tcn_channels.empty()) throw ConfigError("tcn_channels must be nonempty");
    for (auto c : cfg.tcn_channels)
        if (c < 1) throw ConfigError("tcn_channels entries must be >= 1");
    if (cfg.tcn_kernel < 1) throw ConfigError("tcn_kernel must be >= 1");
    if (cfg.tcn_dropout < 0.0f || cfg.tcn_dropout >= 1.0f)
        throw ConfigError("tcn_dropout must lie in [0,1)");
    if (cfg.fe1_out < 1 || cfg.fe2_out < 1) throw ConfigError("feature extraction widths must be >= 1");
    if (cfg.timesteps + 2 * cfg.fe1_padding.w < cfg.fe1_kernel.w)
        throw ConfigError("fe1 kernel wider than padded input");
    if (cfg.out_dim < 1) throw ConfigError("out_dim must be >= 1");
    if (cfg.head_dropout < 0.0f || cfg.head_dropout >= 1.0f)
        throw ConfigError("head_dropout must lie in [0,1)");
}

// Width of the feature map after the first feature-extraction conv; its
// height collapses to 1 after the second conv, so this is the token count.
template <class Cfg>
inline std::int64_t fe_token_count(const Cfg& cfg) {
    return (cfg.timesteps + 2 * cfg.fe1_padding.w - cfg.fe1_kernel.w) / cfg.fe1_stride.w + 1;
}

}  // namespace detail

inline void validate(const StudentConfig& cfg) {
    detail::validate_frontend(cfg);
    if (cfg.mvit_blocks < 1 || cfg.mvit_transformer_layers < 1)
        throw ConfigError("mvit_blocks and mvit_transformer_layers must be >= 1");
    if (cfg.mvit_dim < 1 || cfg.mvit_ffn_expansion < 1)
        throw ConfigError("mvit_dim and mvit_ffn_expansion must be >= 1");
    if (cfg.mvit_patch.h != 1 || cfg.mvit_patch.w != 1)
        throw ConfigError("only (1,1) patches are supported");
    if (cfg.mvit_conv_kernel.h % 2 != 1 || cfg.mvit_conv_kernel.w % 2 != 1)
        throw ConfigError("mvit_conv_kernel must be odd so the local conv preserves shape");
}

inline void validate(const TeacherConfig& cfg) {
    detail::validate_frontend(cfg);
    if (cfg.vit_dim < 1 || cfg.vit_layers < 1 || cfg.vit_mlp < 1)
        throw ConfigError("vit dimensions must be >= 1");
    if (cfg.vit_heads < 1 || cfg.vit_dim % cfg.vit_heads != 0)
        throw ConfigError("vit_dim must be divisible by vit_heads");
    if (cfg.vit_dim != cfg.fe2_out)
        throw ConfigError("vit_dim must equal fe2_out so tokens feed the encoder directly");
}

// Input window that can influence one output step of the dilated TCN stack
// (dilations 1, 2, 4, ... across levels, two convs per level).
inline std::int64_t tcn_receptive_field(std::int64_t kernel, std::size_t levels) {
    std::int64_t rf = 1;
    std::int64_t dilation = 1;
    for (std::size_t l = 0; l < levels; ++l) {
        rf += 2 * (kernel - 1) * dilation;
        dilation *= 2;
    }
    return rf;
}

// ---------------------------------------------------------------------------
// Parameter initialization. Draw order equals insertion order, so equal seeds
// give bit-identical models.
// ---------------------------------------------------------------------------

namespace detail {

struct ParamFactory {
    Model& m;
    Rng& rng;

    // Fan-in-uniform, the convolution default. Fan-in is the per-output-row
    // element count (axis 0 = output channels).
    Tensor& conv_weight(const std::string& name, Shape shape) {
        std::int64_t fan_in = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
        const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
        Tensor t(shape);
        float* d = t.data();
        for (std::int64_t i = 0; i < t.numel(); ++i) d[i] = uniform_range(rng, -bound, bound);
        return m.add(name, std::move(t), true);
    }

    // Truncated normal (sigma 0.02), the projection default.
    Tensor& proj_weight(const std::string& name, Shape shape) {
        Tensor t(shape);
        float* d = t.data();
        for (std::int64_t i = 0; i < t.numel(); ++i) d[i] = trunc_normal(rng, 0.02f);
        return m.add(name, std::move(t), true);
    }

    Tensor& zeros(const std::string& name, Shape shape, bool trainable = true) {
        return m.add(name, Tensor(std::move(shape), 0.0f), trainable);
    }
    Tensor& ones(const std::string& name, Shape shape, bool trainable = true) {
        return m.add(name, Tensor(std::move(shape), 1.0f), trainable);
    }

    // Weight-normalized conv: direction v (fan-in uniform), gain g set to the
    // per-channel norm of v so the initial effective weight equals v.
    void weight_normed_conv(const std::string& prefix, Shape shape) {
        Tensor& v = conv_weight(prefix + ".v", shape);
        const std::int64_t cout = shape[0];
        const std::int64_t row = v.numel() / cout;
        Tensor g(Shape{cout});
        for (std::int64_t o = 0; o < cout; ++o) {
            double sq = 0.0;
            const float* vr = v.data() + o * row;
            for (std::int64_t i = 0; i < row; ++i) sq += static_cast<double>(vr[i]) * vr[i];
            g.data()[o] = static_cast<float>(std::sqrt(sq));
        }
        m.add(prefix + ".g", std::move(g), true);
        zeros(prefix + ".bias", Shape{cout});
    }

    void batch_norm(const std::string& prefix, std::int64_t channels) {
        ones(prefix + ".gamma", Shape{channels});
        zeros(prefix + ".beta", Shape{channels});
        zeros(prefix + ".running_mean", Shape{channels}, false);
        ones(prefix + ".running_var", Shape{channels}, false);
    }

    void layer_norm(const std::string& prefix, std::int64_t dim) {
        ones(prefix + ".gamma", Shape{dim});
        zeros(prefix + ".beta", Shape{dim});
    }

    void linear(const std::string& prefix, std::int64_t in, std::int64_t out) {
        proj_weight(prefix + ".weight", Shape{in, out});
        zeros(prefix + ".bias", Shape{out});
    }
};

template <class Cfg>
inline void build_frontend(ParamFactory& f, const Cfg& cfg) {
    std::int64_t prev = cfg.in_channels;
    for (std::size_t l = 0; l < cfg.tcn_channels.size(); ++l) {
        const std::int64_t ch = cfg.tcn_channels[l];
        const std::string p = "tcn.level" + std::to_string(l);
        f.weight_normed_conv(p + ".conv1", Shape{ch, prev, cfg.tcn_kernel});
        f.weight_normed_conv(p + ".conv2", Shape{ch, ch, cfg.tcn_kernel});
        if (prev != ch) {
            f.conv_weight(p + ".down.weight", Shape{ch, prev, 1});
            f.zeros(p + ".down.bias", Shape{ch});
        }
        prev = ch;
    }
    f.conv_weight("fe.conv1.weight", Shape{cfg.fe1_out, 1, cfg.fe1_kernel.h, cfg.fe1_kernel.w});
    f.zeros("fe.conv1.bias", Shape{cfg.fe1_out});
    f.batch_norm("fe.bn1", cfg.fe1_out);
    f.conv_weight("fe.conv2.weight", Shape{cfg.fe2_out, cfg.fe1_out, cfg.tcn_channels.back(), 1});
    f.zeros("fe.conv2.bias", Shape{cfg.fe2_out});
    f.batch_norm("fe.bn2", cfg.fe2_out);
}

}  // namespace detail

inline Model build_student(const StudentConfig& cfg, std::uint32_t seed) {
    validate(cfg);
    Model m;
    m.arch = "student";
    m.config = cfg;
    Rng rng(seed);
    detail::ParamFactory f{m, rng};
    detail::build_frontend(f, cfg);

    const std::int64_t c = cfg.fe2_out;
    const std::int64_t d = cfg.mvit_dim;
    const std::int64_t hidden = d * cfg.mvit_ffn_expansion;
    for (std::int64_t b = 0; b < cfg.mvit_blocks; ++b) {
        const std::string bp = "backbone.block" + std::to_string(b);
        f.conv_weight(bp + ".local_dw.weight", Shape{c, 1, cfg.mvit_conv_kernel.h, cfg.mvit_conv_kernel.w});
        f.zeros(bp + ".local_dw.bias", Shape{c});
        f.batch_norm(bp + ".local_dw_bn", c);
        f.conv_weight(bp + ".local_pw.weight", Shape{d, c, 1, 1});
        f.zeros(bp + ".local_pw.bias", Shape{d});
        for (std::int64_t l = 0; l < cfg.mvit_transformer_layers; ++l) {
            const std::string lp = bp + ".layer" + std::to_string(l);
            f.layer_norm(lp + ".attn_norm", d);
            f.linear(lp + ".attn.wi", d, 1);
            f.linear(lp + ".attn.wk", d, d);
            f.linear(lp + ".attn.wv", d, d);
            f.linear(lp + ".attn.wo", d, d);
            f.layer_norm(lp + ".ffn_norm", d);
            f.linear(lp + ".ffn.fc1", d, hidden);
            f.linear(lp + ".ffn.fc2", hidden, d);
        }
        f.layer_norm(bp + ".out_norm", d);
        f.conv_weight(bp + ".fusion.weight", Shape{c, d, 1, 1});
        f.zeros(bp + ".fusion.bias", Shape{c});
        f.batch_norm(bp + ".fusion_bn", c);
    }
    f.linear("head.fc", c, cfg.out_dim);
    return m;
}

inline Model build_teacher(const TeacherConfig& cfg, std::uint32_t seed) {
    validate(cfg);
    Model m;
    m.arch = "teacher";
    m.config = cfg;
    Rng rng(seed);
    detail::ParamFactory f{m, rng};
    detail::build_frontend(f, cfg);

    const std::int64_t d = cfg.vit_dim;
    const std::int64_t tokens = detail::fe_token_count(cfg);
    f.linear("backbone.patch", d, d);
    f.proj_weight("backbone.pos_embed", Shape{tokens, d});
    for (std::int64_t l = 0; l < cfg.vit_layers; ++l) {
        const std::string lp = "backbone.layer" + std::to_string(l);
        f.layer_norm(lp + ".norm1", d);
        f.linear(lp + ".attn.wq", d, d);
        f.linear(lp + ".attn.wk", d, d);
        f.linear(lp + ".attn.wv", d, d);
        f.linear(lp + ".attn.wo", d, d);
        f.layer_norm(lp + ".norm2", d);
        f.linear(lp + ".mlp.fc1", d, cfg.vit_mlp);
        f.linear(lp + ".mlp.fc2", cfg.vit_mlp, d);
    }
    f.layer_norm("backbone.final_norm", d);
    f.linear("head.fc", d, cfg.out_dim);
    return m;
}

// ---------------------------------------------------------------------------
// Attention blocks.
// ---------------------------------------------------------------------------

struct SeparableAttentionParams {
    Tensor wi, bi;  // d -> 1 score projection
    Tensor wk, bk;  // d -> d context projection
    Tensor wv, bv;  // d -> d gate projection
    Tensor wo, bo;  // d -> d output projection
};

// Separable self-attention: per-token scalar scores, softmax over tokens,
// one global context vector, elementwise gate, output projection. Cost is
// O(n d^2); no n-by-n buffer exists on this path.
inline Tensor separable_attention(const SeparableAttentionParams& p, const Tensor& x) {
    if (x.rank() != 3) throw DimensionError("separable_attention expects (B,n,d), got " + shape_str(x.shape()));
    const std::int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    if (p.wi.dim(0) != d) throw DimensionError("separable_attention dim mismatch: x has d=" +
                                               std::to_string(d) + ", wi expects " + std::to_string(p.wi.dim(0)));
    Tensor x2 = reshape(x, {b * n, d});
    Tensor scores = reshape(linear(x2, p.wi, p.bi), {b, n, 1});
    Tensor weights = softmax(scores, 1);
    Tensor keys = reshape(linear(x2, p.wk, p.bk), {b, n, d});
    Tensor context = sum(mul(weights, keys), {1}, /*keepdims=*/true);  // (B,1,d)
    Tensor gate = relu(reshape(linear(x2, p.wv, p.bv), {b, n, d}));
    Tensor mixed = mul(gate, context);
    return reshape(linear(reshape(mixed, {b * n, d}), p.wo, p.bo), {b, n, d});
}

struct MultiheadAttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Standard scaled dot-product attention. If probs_out is non-null it receives
// a detached copy of the (B*heads, n, n) attention matrix.
inline Tensor multihead_attention(const MultiheadAttentionParams& p, const Tensor& x, std::int64_t heads,
                                  Tensor* probs_out = nullptr) {
    if (x.rank() != 3) throw DimensionError("multihead_attention expects (B,n,d), got " + shape_str(x.shape()));
    const std::int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    if (heads < 1 || d % heads != 0)
        throw DimensionError("embedding dim " + std::to_string(d) + " not divisible by heads " +
                             std::to_string(heads));
    const std::int64_t dh = d / heads;
    Tensor x2 = reshape(x, {b * n, d});

    auto split_heads = [&](const Tensor& t) {
        return reshape(permute(reshape(t, {b, n, heads, dh}), {0, 2, 1, 3}), {b * heads, n, dh});
    };
    Tensor q = split_heads(linear(x2, p.wq, p.bq));
    Tensor k = split_heads(linear(x2, p.wk, p.bk));
    Tensor v = split_heads(linear(x2, p.wv, p.bv));

    Tensor scores = mul_scalar(bmm(q, permute(k, {0, 2, 1})), 1.0f / std::sqrt(static_cast<float>(dh)));
    Tensor probs = softmax(scores, 2);
    if (probs_out) *probs_out = detach(probs);
    Tensor mixed = bmm(probs, v);  // (B*heads, n, dh)
    Tensor merged = reshape(permute(reshape(mixed, {b, heads, n, dh}), {0, 2, 1, 3}), {b * n, d});
    return reshape(linear(merged, p.wo, p.bo), {b, n, d});
}

// ---------------------------------------------------------------------------
// Token folding for (1,1) patches: every spatial position is one token.
// ---------------------------------------------------------------------------

inline Tensor unfold_tokens(const Tensor& x) {
    if (x.rank() != 4) throw DimensionError("unfold_tokens expects (B,C,H,W)");
    const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    return reshape(permute(x, {0, 2, 3, 1}), {b, h * w, c});
}

inline Tensor fold_tokens(const Tensor& t, std::int64_t h, std::int64_t w) {
    if (t.rank() != 3) throw DimensionError("fold_tokens expects (B,n,d)");
    const std::int64_t b = t.dim(0), d = t.dim(2);
    if (t.dim(1) != h * w) throw DimensionError("fold_tokens: token count does not match H*W");
    return permute(reshape(t, {b, h, w, d}), {0, 3, 1, 2});
}

// ---------------------------------------------------------------------------
// Forward passes.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_stage_finite(const Tensor& t, const char* stage) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite activation after ") + stage);
}

inline SeparableAttentionParams gather_separable(Model& m, const std::string& p) {
    return {m.at(p + ".wi.weight"), m.at(p + ".wi.bias"), m.at(p + ".wk.weight"), m.at(p + ".wk.bias"),
            m.at(p + ".wv.weight"), m.at(p + ".wv.bias"), m.at(p + ".wo.weight"), m.at(p + ".wo.bias")};
}

inline MultiheadAttentionParams gather_mha(Model& m, const std::string& p) {
    return {m.at(p + ".wq.weight"), m.at(p + ".wq.bias"), m.at(p + ".wk.weight"), m.at(p + ".wk.bias"),
            m.at(p + ".wv.weight"), m.at(p + ".wv.bias"), m.at(p + ".wo.weight"), m.at(p + ".wo.bias")};
}

inline Tensor bn(Model& m, const std::string& prefix, const Tensor& x, bool train) {
    return batch_norm2d(x, m.at(prefix + ".gamma"), m.at(prefix + ".beta"), m.at(prefix + ".running_mean"),
                        m.at(prefix + ".running_var"), train);
}

inline Tensor ln(Model& m, const std::string& prefix, const Tensor& x) {
    return layer_norm(x, m.at(prefix + ".gamma"), m.at(prefix + ".beta"));
}

template <class Cfg>
inline Tensor run_tcn(Model& m, const Cfg& cfg, const Tensor& x, bool train, Rng* rng) {
    if (x.rank() != 3 || x.dim(1) != cfg.in_channels)
        throw DimensionError("tcn_forward expects (B," + std::to_string(cfg.in_channels) + ",T), got " +
                             shape_str(x.shape()));
    Tensor h = x;
    std::int64_t prev = cfg.in_channels;
    std::int64_t dilation = 1;
    for (std::size_t l = 0; l < cfg.tcn_channels.size(); ++l) {
        const std::int64_t ch = cfg.tcn_channels[l];
        const std::string p = "tcn.level" + std::to_string(l);
        Tensor w1 = weight_norm(m.at(p + ".conv1.v"), m.at(p + ".conv1.g"));
        Tensor a = relu(causal_conv1d(h, w1, m.at(p + ".conv1.bias"), dilation));
        a = dropout(a, cfg.tcn_dropout, train, rng);
        Tensor w2 = weight_norm(m.at(p + ".conv2.v"), m.at(p + ".conv2.g"));
        Tensor bseq = relu(causal_conv1d(a, w2, m.at(p + ".conv2.bias"), dilation));
        bseq = dropout(bseq, cfg.tcn_dropout, train, rng);
        Tensor res = prev == ch ? h : causal_conv1d(h, m.at(p + ".down.weight"), m.at(p + ".down.bias"), 1);
        h = relu(add(bseq, res));
        prev = ch;
        dilation *= 2;
    }
    return h;
}

template <class Cfg>
inline Tensor run_feature_extract(Model& m, const Cfg& cfg, const Tensor& h, bool train) {
    if (h.rank() != 3 || h.dim(1) != cfg.tcn_channels.back())
        throw DimensionError("feature_extract expects TCN output (B," +
                             std::to_string(cfg.tcn_channels.back()) + ",T), got " + shape_str(h.shape()));
    const std::int64_t b = h.dim(0);
    Tensor y = reshape(h, {b, 1, h.dim(1), h.dim(2)});
    y = conv2d(y, m.at("fe.conv1.weight"), m.at("fe.conv1.bias"), {cfg.fe1_stride.h, cfg.fe1_stride.w},
               {cfg.fe1_padding.h, cfg.fe1_padding.w});
    y = relu(bn(m, "fe.bn1", y, train));
    y = conv2d(y, m.at("fe.conv2.weight"), m.at("fe.conv2.bias"));
    y = relu(bn(m, "fe.bn2", y, train));
    return y;  // (B, fe2_out, 1, tokens)
}

}  // namespace detail

inline Tensor tcn_forward(Model& m, const Tensor& x, bool train, Rng* rng = nullptr) {
    if (m.arch == "student") return detail::run_tcn(m, m.student_cfg(), x, train, rng);
    return detail::run_tcn(m, m.teacher_cfg(), x, train, rng);
}

inline Tensor feature_extract(Model& m, const Tensor& h, bool train = false) {
    if (m.arch == "student") return detail::run_feature_extract(m, m.student_cfg(), h, train);
    return detail::run_feature_extract(m, m.teacher_cfg(), h, train);
}

// One MobileViT-style block: local depthwise+pointwise representation,
// transformer layers over (1,1)-patch tokens, fold, pointwise fusion. No
// skip of the block input.
inline Tensor mobilevit_block(Model& m, std::int64_t block_idx, const Tensor& f, bool train) {
    const StudentConfig& cfg = m.student_cfg();
    const std::string bp = "backbone.block" + std::to_string(block_idx);
    const std::int64_t h = f.dim(2), w = f.dim(3);

    Tensor z = conv2d(f, m.at(bp + ".local_dw.weight"), m.at(bp + ".local_dw.bias"), {1, 1},
                      {cfg.mvit_conv_kernel.h / 2, cfg.mvit_conv_kernel.w / 2}, /*groups=*/f.dim(1));
    z = silu(detail::bn(m, bp + ".local_dw_bn", z, train));
    z = conv2d(z, m.at(bp + ".local_pw.weight"), m.at(bp + ".local_pw.bias"));

    Tensor t = unfold_tokens(z);
    const std::int64_t b = t.dim(0), n = t.dim(1), d = t.dim(2);
    for (std::int64_t l = 0; l < cfg.mvit_transformer_layers; ++l) {
        const std::string lp = bp + ".layer" + std::to_string(l);
        t = add(t, separable_attention(detail::gather_separable(m, lp + ".attn"),
                                       detail::ln(m, lp + ".attn_norm", t)));
        Tensor ff = reshape(detail::ln(m, lp + ".ffn_norm", t), {b * n, d});
        ff = silu(linear(ff, m.at(lp + ".ffn.fc1.weight"), m.at(lp + ".ffn.fc1.bias")));
        ff = linear(ff, m.at(lp + ".ffn.fc2.weight"), m.at(lp + ".ffn.fc2.bias"));
        t = add(t, reshape(ff, {b, n, d}));
    }
    t = detail::ln(m, bp + ".out_norm", t);

    Tensor folded = fold_tokens(t, h, w);
    Tensor out = conv2d(folded, m.at(bp + ".fusion.weight"), m.at(bp + ".fusion.bias"));
    out = detail::bn(m, bp + ".fusion_bn", out, train);
    return out;
}

// Full forward pass: (B, in_channels, T) -> (B, out_dim).
inline Tensor model_forward(Model& m, const Tensor& x, bool train, Rng* rng = nullptr) {
    if (!x.all_finite()) throw NumericError("non-finite values in model input");
    Tensor h = tcn_forward(m, x, train, rng);
    detail::check_stage_finite(h, "tcn");
    Tensor f = feature_extract(m, h, train);
    detail::check_stage_finite(f, "feature_extract");

    Tensor pooled;
    if (m.arch == "student") {
        const StudentConfig& cfg = m.student_cfg();
        for (std::int64_t blk = 0; blk < cfg.mvit_blocks; ++blk) {
            f = mobilevit_block(m, blk, f, train);
            detail::check_stage_finite(f, ("backbone.block" + std::to_string(blk)).c_str());
        }
        pooled = mean(f, {2, 3});  // (B, C)
    } else {
        const TeacherConfig& cfg = m.teacher_cfg();
        Tensor t = unfold_tokens(f);  // (B, tokens, d)
        const std::int64_t b = t.dim(0), n = t.dim(1), d = t.dim(2);
        t = reshape(linear(reshape(t, {b * n, d}), m.at("backbone.patch.weight"), m.at("backbone.patch.bias")),
                    {b, n, d});
        t = add(t, m.at("backbone.pos_embed"));
        for (std::int64_t l = 0; l < cfg.vit_layers; ++l) {
            const std::string lp = "backbone.layer" + std::to_string(l);
            t = add(t, multihead_attention(detail::gather_mha(m, lp + ".attn"),
                                           detail::ln(m, lp + ".norm1", t), cfg.vit_heads));
            Tensor ff = reshape(detail::ln(m, lp + ".norm2", t), {b * n, d});
            ff = gelu(linear(ff, m.at(lp + ".mlp.fc1.weight"), m.at(lp + ".mlp.fc1.bias")));
            ff = linear(ff, m.at(lp + ".mlp.fc2.weight"), m.at(lp + ".mlp.fc2.bias"));
            t = add(t, reshape(ff, {b, n, d}));
        }
        t = detail::ln(m, "backbone.final_norm", t);
        detail::check_stage_finite(t, "backbone");
        pooled = mean(t, {1});  // (B, d)
    }

    const float head_drop = m.arch == "student" ? m.student_cfg().head_dropout : m.teacher_cfg().head_dropout;
    pooled = dropout(pooled, head_drop, train, rng);
    Tensor out = linear(pooled, m.at("head.fc.weight"), m.at("head.fc.bias"));
    detail::check_stage_finite(out, "head");
    return out;
}

// ---------------------------------------------------------------------------
// Parameter counting (trainable scalars only; running statistics are buffers).
// ---------------------------------------------------------------------------

struct ParamCounts {
    std::int64_t tcn = 0;
    std::int64_t feature_extract = 0;
    std::int64_t backbone = 0;
    std::int64_t head = 0;
    std::int64_t total = 0;
};

inline std::int64_t param_count_prefix(const Model& m, const std::string& prefix) {
    std::int64_t n = 0;
    for (const auto& e : m.entries)
        if (e.trainable && e.name.rfind(prefix, 0) == 0) n += e.tensor.numel();
    return n;
}

inline ParamCounts param_count(const Model& m) {
    ParamCounts c;
    for (const auto& e : m.entries) {
        if (!e.trainable) continue;
        const std::int64_t n = e.tensor.numel();
        c.total += n;
        if (e.name.rfind("tcn.", 0) == 0)
            c.tcn += n;
        else if (e.name.rfind("fe.", 0) == 0)
            c.feature_extract += n;
        else if (e.name.rfind("backbone.", 0) == 0)
            c.backbone += n;
        else if (e.name.rfind("head.", 0) == 0)
            c.head += n;
    }
    return c;
}

}  // namespace eegkd
