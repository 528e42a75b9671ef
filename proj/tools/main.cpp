#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config_io.hpp"
#include "eegkd/eegkd.hpp"

namespace fs = std::filesystem;
using namespace eegkd;
using eegkd::cli::FullConfig;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file (sections: student, teacher, kd, split, synthetic)");
    cmd->add_option("--out-dir", args.out_dir, "directory for outputs and the resolved-config record");
    cmd->add_option("--set", args.sets, "override as section.key=value (repeatable)");
}

FullConfig resolve_config(const CommonArgs& args) {
    FullConfig cfg = eegkd::cli::load_config(args.config_path);
    eegkd::cli::apply_overrides(cfg, args.sets);
    return cfg;
}

// Every run records the fully resolved configuration it executed with.
void write_resolved(const CommonArgs& args, const std::string& command, const FullConfig& cfg,
                    const nlohmann::ordered_json& extra = {}) {
    fs::create_directories(args.out_dir);
    nlohmann::ordered_json j;
    j["command"] = command;
    if (!extra.empty()) j["inputs"] = extra;
    j["config"] = eegkd::cli::to_json(cfg);
    std::ofstream out(fs::path(args.out_dir) / "resolved_config.json", std::ios::trunc);
    if (!out) throw Error("cannot write resolved config in '" + args.out_dir + "'");
    out << j.dump(2) << "\n";
}

DatasetContainer load_filtered(const std::string& path) {
    DatasetContainer d = read_container(path);
    const std::int64_t before = d.n_samples;
    d = filter_valid_labels(d);
    if (d.n_samples != before)
        std::printf("filtered %lld samples with off-screen labels\n",
                    static_cast<long long>(before - d.n_samples));
    return d;
}

std::string model_stem(const std::string& path) { return fs::path(path).stem().string(); }

int cmd_gen_data(const CLI::App* cmd, const CommonArgs& common, const std::string& out_path,
                 std::int64_t n, std::uint32_t seed, float noise_std, float signal_gain) {
    FullConfig cfg = resolve_config(common);
    if (cmd->count("--n") || cfg.synthetic.n_samples <= 0) cfg.synthetic.n_samples = n;
    if (cmd->count("--seed")) cfg.synthetic.seed = seed;
    if (cmd->count("--noise-std")) cfg.synthetic.noise_std = noise_std;
    if (cmd->count("--signal-gain")) cfg.synthetic.signal_gain = signal_gain;
    write_resolved(common, "gen-data", cfg, {{"out", out_path}});
    const auto data = generate_synthetic(cfg.synthetic);
    write_container(out_path, data);
    std::printf("wrote %lld samples (%lld channels x %lld steps) to %s\n",
                static_cast<long long>(data.n_samples), static_cast<long long>(data.channels),
                static_cast<long long>(data.timesteps), out_path.c_str());
    return 0;
}

int run_training(const CommonArgs& common, const std::string& command, const std::string& data_path,
                 const std::string& teacher_path, const std::string& name, FullConfig cfg) {
    validate(cfg.kd);
    write_resolved(common, command, cfg, {{"data", data_path}, {"teacher", teacher_path}});

    const auto data = load_filtered(data_path);
    const auto splits = split(data, cfg.split);
    std::printf("split: %lld train / %lld val / %lld test\n", static_cast<long long>(splits.train.n_samples),
                static_cast<long long>(splits.val.n_samples), static_cast<long long>(splits.test.n_samples));

    Model teacher;
    Model model;
    if (command == "distill") {
        teacher = eegkd::cli::load_model(teacher_path);
        if (teacher.arch != "teacher") throw ConfigError("--teacher checkpoint does not hold a teacher model");
        model = build_student(cfg.student, cfg.kd.seed);
    } else {
        model = build_teacher(cfg.teacher, cfg.kd.seed);
    }
    const auto counts = param_count(model);
    std::printf("%s parameters: %.3fM (tcn %lld, fe %lld, backbone %lld, head %lld)\n", model.arch.c_str(),
                static_cast<double>(counts.total) / 1e6, static_cast<long long>(counts.tcn),
                static_cast<long long>(counts.feature_extract), static_cast<long long>(counts.backbone),
                static_cast<long long>(counts.head));

    const auto result = fit(model, command == "distill" ? &teacher : nullptr, splits.train, splits.val, cfg.kd);
    for (const auto& r : result.history)
        std::printf("epoch %2lld  lr %.2e  train_loss %12.4f  val_rmse %10.4f\n",
                    static_cast<long long>(r.epoch), static_cast<double>(r.lr), r.train_loss, r.val_rmse);
    std::printf("best val distance %.4f px at epoch %lld\n", result.best_val_rmse,
                static_cast<long long>(result.best_epoch));

    fs::create_directories(common.out_dir);
    const std::string ckpt = (fs::path(common.out_dir) / (name + ".ckpt")).string();
    eegkd::cli::save_model(ckpt, model);
    write_history((fs::path(common.out_dir) / (name + "_history.csv")).string(), result.history);
    if (splits.test.n_samples > 0)
        std::printf("test distance (px): %.4f\n", rmse_eval(model, splits.test, 1.0, cfg.kd.batch_size));
    std::printf("saved %s\n", ckpt.c_str());
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& model_path, const std::string& data_path,
             const std::string& which_split, double px_to_mm, std::int64_t batch_size, bool strict_rms) {
    FullConfig cfg = resolve_config(common);
    write_resolved(common, "eval", cfg, {{"model", model_path}, {"data", data_path}, {"split", which_split}});
    Model m = eegkd::cli::load_model(model_path);
    auto data = load_filtered(data_path);
    if (which_split != "all") {
        const auto splits = split(data, cfg.split);
        if (which_split == "train") data = splits.train;
        else if (which_split == "val") data = splits.val;
        else if (which_split == "test") data = splits.test;
        else throw ConfigError("--split must be train, val, test or all");
    }
    const auto kind = strict_rms ? DistanceMetric::RootMeanSquare : DistanceMetric::MeanEuclidean;
    const double value = rmse_eval(m, data, px_to_mm, batch_size, kind);
    std::printf("%s distance on %s split (%lld samples): %.4f %s\n",
                strict_rms ? "root-mean-square" : "mean", which_split.c_str(),
                static_cast<long long>(data.n_samples), value, px_to_mm == 1.0 ? "px" : "mm");
    nlohmann::ordered_json j;
    j["model"] = model_stem(model_path);
    j["split"] = which_split;
    j["n_samples"] = data.n_samples;
    j["px_to_mm"] = px_to_mm;
    j["metric"] = strict_rms ? "rms" : "mean";
    j["value"] = value;
    std::ofstream out(fs::path(common.out_dir) / "eval.json", std::ios::trunc);
    out << j.dump(2) << "\n";
    return 0;
}

int cmd_params(const CommonArgs& common, const std::string& arch, std::uint32_t seed) {
    FullConfig cfg = resolve_config(common);
    write_resolved(common, "params", cfg, {{"arch", arch}});
    Model m;
    if (arch == "student") m = build_student(cfg.student, seed);
    else if (arch == "teacher") m = build_teacher(cfg.teacher, seed);
    else throw ConfigError("--arch must be student or teacher");
    const auto c = param_count(m);
    std::printf("%s parameter breakdown\n", arch.c_str());
    std::printf("  tcn                %12lld\n", static_cast<long long>(c.tcn));
    std::printf("  feature_extract    %12lld\n", static_cast<long long>(c.feature_extract));
    std::printf("  backbone           %12lld\n", static_cast<long long>(c.backbone));
    std::printf("  head               %12lld\n", static_cast<long long>(c.head));
    std::printf("  total              %12lld  (%.2fM)\n", static_cast<long long>(c.total),
                static_cast<double>(c.total) / 1e6);
    return 0;
}

int cmd_bench(const CommonArgs& common, const std::vector<std::string>& model_paths,
              const std::string& data_path, int passes, int runs, std::int64_t batch_size,
              double px_to_mm, const std::string& hardware) {
    FullConfig cfg = resolve_config(common);
    write_resolved(common, "bench", cfg, {{"models", model_paths}, {"data", data_path}});
    const auto data = load_filtered(data_path);
    std::vector<BenchReport> reports;
    for (const auto& path : model_paths) {
        Model m = eegkd::cli::load_model(path);
        BenchReport r;
        r.model = model_stem(path);
        r.params = param_count(m).total;
        r.rmse_mean = rmse_eval(m, data, px_to_mm, batch_size);
        r.rmse_std = 0.0;
        const auto stats = latency_bench(m, data, passes, runs, batch_size);
        r.runtime_mean_min = stats.mean_minutes;
        r.runtime_std_min = stats.std_minutes;
        r.runs = runs;
        r.passes = passes;
        r.hardware = hardware;
        emit_report(r, (fs::path(common.out_dir) / ("bench_" + r.model + ".json")).string());
        reports.push_back(r);
    }
    const std::string table = comparison_table(reports);
    std::fputs(table.c_str(), stdout);
    std::ofstream out(fs::path(common.out_dir) / "bench_table.txt", std::ios::trunc);
    out << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EEG gaze regression: TCN front end, attention backbones, knowledge distillation"};
    app.require_subcommand(1);

    // gen-data
    CommonArgs gen_common;
    std::string gen_out;
    std::int64_t gen_n = 512;
    std::uint32_t gen_seed = 0;
    float gen_noise = 1.0f, gen_gain = 1.0f;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic EEG-gaze container");
    add_common(gen, gen_common);
    gen->add_option("--out", gen_out, "output .eegt path")->required();
    gen->add_option("--n", gen_n, "sample count");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--noise-std", gen_noise, "noise level");
    gen->add_option("--signal-gain", gen_gain, "planted signal gain");

    // train-teacher
    CommonArgs tt_common;
    std::string tt_data, tt_name = "teacher";
    auto* tt = app.add_subcommand("train-teacher", "train the teacher from scratch");
    add_common(tt, tt_common);
    tt->add_option("--data", tt_data, "input .eegt container")->required();
    tt->add_option("--name", tt_name, "output checkpoint stem");
    double tt_lr = -1, tt_wd = -1;
    std::int64_t tt_epochs = -1, tt_batch = -1;
    std::int64_t tt_seed = -1;
    tt->add_option("--epochs", tt_epochs, "override kd.epochs");
    tt->add_option("--batch-size", tt_batch, "override kd.batch_size");
    tt->add_option("--lr", tt_lr, "override kd.lr");
    tt->add_option("--weight-decay", tt_wd, "override kd.weight_decay");
    tt->add_option("--seed", tt_seed, "override kd.seed");

    // distill
    CommonArgs ds_common;
    std::string ds_data, ds_teacher, ds_name = "student";
    double ds_lambda = -1, ds_temp = -1, ds_lr = -1, ds_wd = -1;
    std::int64_t ds_epochs = -1, ds_batch = -1, ds_seed = -1;
    auto* ds = app.add_subcommand("distill", "train the student against a frozen teacher");
    add_common(ds, ds_common);
    ds->add_option("--data", ds_data, "input .eegt container")->required();
    ds->add_option("--teacher", ds_teacher, "teacher checkpoint")->required();
    ds->add_option("--name", ds_name, "output checkpoint stem");
    ds->add_option("--lambda", ds_lambda, "distillation weight in [0,1]");
    ds->add_option("--temperature", ds_temp, "softening temperature > 0");
    ds->add_option("--epochs", ds_epochs, "override kd.epochs");
    ds->add_option("--batch-size", ds_batch, "override kd.batch_size");
    ds->add_option("--lr", ds_lr, "override kd.lr");
    ds->add_option("--weight-decay", ds_wd, "override kd.weight_decay");
    ds->add_option("--seed", ds_seed, "override kd.seed");

    // eval
    CommonArgs ev_common;
    std::string ev_model, ev_data, ev_split = "test";
    double ev_px = 0.5;
    std::int64_t ev_batch = 64;
    bool ev_strict = false;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    add_common(ev, ev_common);
    ev->add_option("--model", ev_model, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "input .eegt container")->required();
    ev->add_option("--split", ev_split, "train|val|test|all");
    ev->add_option("--px-to-mm", ev_px, "pixel to millimeter factor");
    ev->add_option("--batch-size", ev_batch, "evaluation batch size");
    ev->add_flag("--strict-rms", ev_strict, "report sqrt(mean squared distance) instead of mean distance");

    // params
    CommonArgs pa_common;
    std::string pa_arch;
    std::uint32_t pa_seed = 0;
    auto* pa = app.add_subcommand("params", "print the parameter-count breakdown");
    add_common(pa, pa_common);
    pa->add_option("--arch", pa_arch, "student|teacher")->required();
    pa->add_option("--seed", pa_seed, "build seed");

    // bench
    CommonArgs be_common;
    std::vector<std::string> be_models;
    std::string be_data, be_hw = "unspecified";
    int be_passes = 10, be_runs = 5;
    std::int64_t be_batch = 64;
    double be_px = 0.5;
    auto* be = app.add_subcommand("bench", "inference latency + accuracy report");
    add_common(be, be_common);
    be->add_option("--model", be_models, "checkpoint path (repeatable)")->required();
    be->add_option("--data", be_data, "input .eegt container")->required();
    be->add_option("--passes", be_passes, "full-dataset sweeps per run");
    be->add_option("--runs", be_runs, "measured runs");
    be->add_option("--batch-size", be_batch, "inference batch size");
    be->add_option("--px-to-mm", be_px, "pixel to millimeter factor");
    be->add_option("--hardware", be_hw, "hardware note for the report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen, gen_common, gen_out, gen_n, gen_seed, gen_noise, gen_gain);
        if (tt->parsed() || ds->parsed()) {
            const bool is_distill = ds->parsed();
            CLI::App* cmd = is_distill ? ds : tt;
            CommonArgs& common = is_distill ? ds_common : tt_common;
            FullConfig cfg = resolve_config(common);
            auto applied = [&](const char* flag) { return cmd->count(flag) > 0; };
            if (is_distill) {
                if (applied("--lambda")) cfg.kd.lambda = static_cast<float>(ds_lambda);
                if (applied("--temperature")) cfg.kd.temperature = static_cast<float>(ds_temp);
                if (applied("--epochs")) cfg.kd.epochs = ds_epochs;
                if (applied("--batch-size")) cfg.kd.batch_size = ds_batch;
                if (applied("--lr")) cfg.kd.lr = static_cast<float>(ds_lr);
                if (applied("--weight-decay")) cfg.kd.weight_decay = static_cast<float>(ds_wd);
                if (applied("--seed")) cfg.kd.seed = static_cast<std::uint32_t>(ds_seed);
                return run_training(common, "distill", ds_data, ds_teacher, ds_name, cfg);
            }
            if (applied("--epochs")) cfg.kd.epochs = tt_epochs;
            if (applied("--batch-size")) cfg.kd.batch_size = tt_batch;
            if (applied("--lr")) cfg.kd.lr = static_cast<float>(tt_lr);
            if (applied("--weight-decay")) cfg.kd.weight_decay = static_cast<float>(tt_wd);
            if (applied("--seed")) cfg.kd.seed = static_cast<std::uint32_t>(tt_seed);
            return run_training(common, "train-teacher", tt_data, "", tt_name, cfg);
        }
        if (ev->parsed()) return cmd_eval(ev_common, ev_model, ev_data, ev_split, ev_px, ev_batch, ev_strict);
        if (pa->parsed()) return cmd_params(pa_common, pa_arch, pa_seed);
        if (be->parsed())
            return cmd_bench(be_common, be_models, be_data, be_passes, be_runs, be_batch, be_px, be_hw);
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
