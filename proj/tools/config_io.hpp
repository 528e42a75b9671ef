#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegkd/eegkd.hpp"

namespace eegkd::cli {

using nlohmann::json;
using nlohmann::ordered_json;

// All tunables in one document: sections student / teacher / kd / split /
// synthetic. Unknown sections or keys are rejected so typos cannot silently
// fall back to defaults.
struct FullConfig {
    StudentConfig student;
    TeacherConfig teacher;
    KDConfig kd;
    SplitSpec split;
    SyntheticSpec synthetic;
};

namespace detail {

inline Size2 parse_size2(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 2)
        throw ConfigError(what + " must be a two-element array [h,w]");
    return Size2{j[0].get<std::int64_t>(), j[1].get<std::int64_t>()};
}

template <class Cfg>
inline bool apply_frontend_key(Cfg& cfg, const std::string& key, const json& v, const std::string& section) {
    if (key == "in_channels") cfg.in_channels = v.get<std::int64_t>();
    else if (key == "timesteps") cfg.timesteps = v.get<std::int64_t>();
    else if (key == "tcn_channels") cfg.tcn_channels = v.get<std::vector<std::int64_t>>();
    else if (key == "tcn_kernel") cfg.tcn_kernel = v.get<std::int64_t>();
    else if (key == "tcn_dropout") cfg.tcn_dropout = v.get<float>();
    else if (key == "fe1_out") cfg.fe1_out = v.get<std::int64_t>();
    else if (key == "fe1_kernel") cfg.fe1_kernel = parse_size2(v, section + ".fe1_kernel");
    else if (key == "fe1_stride") cfg.fe1_stride = parse_size2(v, section + ".fe1_stride");
    else if (key == "fe1_padding") cfg.fe1_padding = parse_size2(v, section + ".fe1_padding");
    else if (key == "fe2_out") cfg.fe2_out = v.get<std::int64_t>();
    else if (key == "head_dropout") cfg.head_dropout = v.get<float>();
    else if (key == "out_dim") cfg.out_dim = v.get<std::int64_t>();
    else return false;
    return true;
}

}  // namespace detail

inline void apply_section(StudentConfig& cfg, const json& section) {
    for (const auto& [key, v] : section.items()) {
        if (detail::apply_frontend_key(cfg, key, v, "student")) continue;
        if (key == "mvit_blocks") cfg.mvit_blocks = v.get<std::int64_t>();
        else if (key == "mvit_transformer_layers") cfg.mvit_transformer_layers = v.get<std::int64_t>();
        else if (key == "mvit_dim") cfg.mvit_dim = v.get<std::int64_t>();
        else if (key == "mvit_ffn_expansion") cfg.mvit_ffn_expansion = v.get<std::int64_t>();
        else if (key == "mvit_conv_kernel") cfg.mvit_conv_kernel = detail::parse_size2(v, "student.mvit_conv_kernel");
        else if (key == "mvit_patch") cfg.mvit_patch = detail::parse_size2(v, "student.mvit_patch");
        else throw ConfigError("unknown key student." + key);
    }
}

inline void apply_section(TeacherConfig& cfg, const json& section) {
    for (const auto& [key, v] : section.items()) {
        if (detail::apply_frontend_key(cfg, key, v, "teacher")) continue;
        if (key == "vit_dim") cfg.vit_dim = v.get<std::int64_t>();
        else if (key == "vit_layers") cfg.vit_layers = v.get<std::int64_t>();
        else if (key == "vit_heads") cfg.vit_heads = v.get<std::int64_t>();
        else if (key == "vit_mlp") cfg.vit_mlp = v.get<std::int64_t>();
        else throw ConfigError("unknown key teacher." + key);
    }
}

inline void apply_section(KDConfig& cfg, const json& section) {
    for (const auto& [key, v] : section.items()) {
        if (key == "temperature") cfg.temperature = v.get<float>();
        else if (key == "lambda") cfg.lambda = v.get<float>();
        else if (key == "epochs") cfg.epochs = v.get<std::int64_t>();
        else if (key == "batch_size") cfg.batch_size = v.get<std::int64_t>();
        else if (key == "lr") cfg.lr = v.get<float>();
        else if (key == "weight_decay") cfg.weight_decay = v.get<float>();
        else if (key == "scheduler_step") cfg.scheduler_step = v.get<std::int64_t>();
        else if (key == "scheduler_gamma") cfg.scheduler_gamma = v.get<float>();
        else if (key == "seed") cfg.seed = v.get<std::uint32_t>();
        else throw ConfigError("unknown key kd." + key);
    }
}

inline void apply_section(SplitSpec& cfg, const json& section) {
    for (const auto& [key, v] : section.items()) {
        if (key == "train_fraction") cfg.train_fraction = v.get<double>();
        else if (key == "val_fraction") cfg.val_fraction = v.get<double>();
        else if (key == "test_fraction") cfg.test_fraction = v.get<double>();
        else if (key == "seed") cfg.seed = v.get<std::uint32_t>();
        else if (key == "group_by_participant") cfg.group_by_participant = v.get<bool>();
        else throw ConfigError("unknown key split." + key);
    }
}

inline void apply_section(SyntheticSpec& cfg, const json& section) {
    for (const auto& [key, v] : section.items()) {
        if (key == "n_samples") cfg.n_samples = v.get<std::int64_t>();
        else if (key == "noise_std") cfg.noise_std = v.get<float>();
        else if (key == "signal_gain") cfg.signal_gain = v.get<float>();
        else if (key == "seed") cfg.seed = v.get<std::uint32_t>();
        else throw ConfigError("unknown key synthetic." + key);
    }
}

inline void apply_document(FullConfig& cfg, const json& doc) {
    if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [section, body] : doc.items()) {
        if (section == "student") apply_section(cfg.student, body);
        else if (section == "teacher") apply_section(cfg.teacher, body);
        else if (section == "kd") apply_section(cfg.kd, body);
        else if (section == "split") apply_section(cfg.split, body);
        else if (section == "synthetic") apply_section(cfg.synthetic, body);
        else throw ConfigError("unknown config section '" + section + "'");
    }
}

inline FullConfig load_config(const std::string& path) {
    FullConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    apply_document(cfg, doc);
    return cfg;
}

// "section.key=value" overrides; values parse as JSON scalars/arrays first,
// falling back to a bare string.
inline void apply_overrides(FullConfig& cfg, const std::vector<std::string>& sets) {
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        const auto dot = s.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw ConfigError("override '" + s + "' must look like section.key=value");
        const std::string section = s.substr(0, dot);
        const std::string key = s.substr(dot + 1, eq - dot - 1);
        const std::string raw = s.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;
        }
        json doc;
        doc[section] = json::object();
        doc[section][key] = value;
        apply_document(cfg, doc);
    }
}

namespace detail {

inline json size2_json(const Size2& s) { return json::array({s.h, s.w}); }

template <class Cfg>
inline void frontend_json(ordered_json& j, const Cfg& cfg) {
    j["in_channels"] = cfg.in_channels;
    j["timesteps"] = cfg.timesteps;
    j["tcn_channels"] = cfg.tcn_channels;
    j["tcn_kernel"] = cfg.tcn_kernel;
    j["tcn_dropout"] = cfg.tcn_dropout;
    j["fe1_out"] = cfg.fe1_out;
    j["fe1_kernel"] = size2_json(cfg.fe1_kernel);
    j["fe1_stride"] = size2_json(cfg.fe1_stride);
    j["fe1_padding"] = size2_json(cfg.fe1_padding);
    j["fe2_out"] = cfg.fe2_out;
    j["head_dropout"] = cfg.head_dropout;
    j["out_dim"] = cfg.out_dim;
}

}  // namespace detail

inline ordered_json to_json(const StudentConfig& cfg) {
    ordered_json j;
    detail::frontend_json(j, cfg);
    j["mvit_blocks"] = cfg.mvit_blocks;
    j["mvit_transformer_layers"] = cfg.mvit_transformer_layers;
    j["mvit_dim"] = cfg.mvit_dim;
    j["mvit_ffn_expansion"] = cfg.mvit_ffn_expansion;
    j["mvit_conv_kernel"] = detail::size2_json(cfg.mvit_conv_kernel);
    j["mvit_patch"] = detail::size2_json(cfg.mvit_patch);
    return j;
}

inline ordered_json to_json(const TeacherConfig& cfg) {
    ordered_json j;
    detail::frontend_json(j, cfg);
    j["vit_dim"] = cfg.vit_dim;
    j["vit_layers"] = cfg.vit_layers;
    j["vit_heads"] = cfg.vit_heads;
    j["vit_mlp"] = cfg.vit_mlp;
    return j;
}

inline ordered_json to_json(const KDConfig& cfg) {
    ordered_json j;
    j["temperature"] = cfg.temperature;
    j["lambda"] = cfg.lambda;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["lr"] = cfg.lr;
    j["weight_decay"] = cfg.weight_decay;
    j["scheduler_step"] = cfg.scheduler_step;
    j["scheduler_gamma"] = cfg.scheduler_gamma;
    j["seed"] = cfg.seed;
    return j;
}

inline ordered_json to_json(const SplitSpec& cfg) {
    ordered_json j;
    j["train_fraction"] = cfg.train_fraction;
    j["val_fraction"] = cfg.val_fraction;
    j["test_fraction"] = cfg.test_fraction;
    j["seed"] = cfg.seed;
    j["group_by_participant"] = cfg.group_by_participant;
    return j;
}

inline ordered_json to_json(const SyntheticSpec& cfg) {
    ordered_json j;
    j["n_samples"] = cfg.n_samples;
    j["noise_std"] = cfg.noise_std;
    j["signal_gain"] = cfg.signal_gain;
    j["seed"] = cfg.seed;
    return j;
}

inline ordered_json to_json(const FullConfig& cfg) {
    ordered_json j;
    j["student"] = to_json(cfg.student);
    j["teacher"] = to_json(cfg.teacher);
    j["kd"] = to_json(cfg.kd);
    j["split"] = to_json(cfg.split);
    j["synthetic"] = to_json(cfg.synthetic);
    return j;
}

// ---------------------------------------------------------------------------
// Checkpoint sidecar: "<ckpt>.json" records the architecture tag and config
// so the model can be rebuilt before loading the raw tensors.
// ---------------------------------------------------------------------------

inline void save_model(const std::string& ckpt_path, const Model& m) {
    save_checkpoint(ckpt_path, m);
    ordered_json j;
    j["arch"] = m.arch;
    if (m.arch == "student") j["config"] = to_json(m.student_cfg());
    else j["config"] = to_json(m.teacher_cfg());
    std::ofstream out(ckpt_path + ".json", std::ios::trunc);
    if (!out) throw Error("cannot write sidecar for '" + ckpt_path + "'");
    out << j.dump(2) << "\n";
}

inline Model load_model(const std::string& ckpt_path) {
    std::ifstream in(ckpt_path + ".json");
    if (!in)
        throw ConfigError("missing sidecar '" + ckpt_path + ".json' describing the checkpoint architecture");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad sidecar JSON: ") + e.what());
    }
    const std::string arch = j.at("arch").get<std::string>();
    Model m;
    if (arch == "student") {
        StudentConfig cfg;
        apply_section(cfg, j.at("config"));
        m = build_student(cfg, 0);
    } else if (arch == "teacher") {
        TeacherConfig cfg;
        apply_section(cfg, j.at("config"));
        m = build_teacher(cfg, 0);
    } else {
        throw ConfigError("sidecar names unknown architecture '" + arch + "'");
    }
    load_into_model(ckpt_path, m);
    return m;
}

}  // namespace eegkd::cli
