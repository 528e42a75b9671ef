#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "eegkd/train.hpp"
#include "tiny_configs.hpp"

using namespace eegkd;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, float scale = 1.0f) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = scale * normal01(rng);
    return t;
}

}  // namespace

TEST(KdConfig, DefaultsMatchTrainingRecipe) {
    const KDConfig cfg;
    EXPECT_FLOAT_EQ(cfg.temperature, 20.0f);
    EXPECT_FLOAT_EQ(cfg.lambda, 0.9f);
    EXPECT_EQ(cfg.epochs, 15);
    EXPECT_EQ(cfg.batch_size, 64);
    EXPECT_FLOAT_EQ(cfg.lr, 1e-3f);
    EXPECT_FLOAT_EQ(cfg.weight_decay, 0.3f);
    EXPECT_EQ(cfg.scheduler_step, 6);
    EXPECT_FLOAT_EQ(cfg.scheduler_gamma, 0.1f);
    KDConfig bad;
    bad.temperature = 0.0f;
    EXPECT_THROW(validate(bad), ConfigError);
}

TEST(TrueLoss, ZeroAtEquality) {
    Rng rng(1);
    Tensor p = random_tensor({4, 2}, rng);
    EXPECT_FLOAT_EQ(true_loss(p, p).item(), 0.0f);
}

TEST(TrueLoss, HandArithmetic) {
    Tensor p(Shape{1, 2}, {3.0f, 4.0f});
    Tensor t(Shape{1, 2}, {0.0f, 0.0f});
    EXPECT_FLOAT_EQ(true_loss(p, t).item(), 12.5f);
}

TEST(TrueLoss, MatchesLoopOracle) {
    Rng rng(2);
    Tensor p = random_tensor({16, 2}, rng, 5.0f);
    Tensor t = random_tensor({16, 2}, rng, 5.0f);
    double acc = 0.0;
    for (std::int64_t i = 0; i < 32; ++i) {
        const double d = static_cast<double>(p.data()[i]) - t.data()[i];
        acc += d * d;
    }
    EXPECT_NEAR(true_loss(p, t).item(), acc / 32.0, 1e-6 * std::abs(acc / 32.0));
    Tensor bad(Shape{15, 2});
    EXPECT_THROW(true_loss(p, bad), DimensionError);
}

TEST(DistillLoss, ZeroForIdenticalOutputs) {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({8, 2}, rng, 10.0f);
        for (float temperature : {1.0f, 5.0f, 20.0f})
            EXPECT_FLOAT_EQ(distill_loss(x, x, temperature).item(), 0.0f);
    }
}

TEST(DistillLoss, HandComputedTwoLogitCase) {
    Tensor teacher(Shape{1, 2}, {2.0f, 0.0f});
    Tensor student(Shape{1, 2}, {0.0f, 0.0f});
    EXPECT_NEAR(distill_loss(student, teacher, 1.0f).item(), 0.3278f, 5e-4f);
}

TEST(DistillLoss, NonNegativeAndTemperatureMonotonicity) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_tensor({4, 2}, rng, 4.0f);
        Tensor b = random_tensor({4, 2}, rng, 4.0f);
        const float kl_t1 = distill_loss(a, b, 1.0f).item();
        const float kl_t20 = distill_loss(a, b, 20.0f).item() / (20.0f * 20.0f);
        EXPECT_GE(kl_t1, 0.0f);
        EXPECT_GE(kl_t20, 0.0f);
        // higher temperature flattens both distributions: divergence shrinks
        EXPECT_LE(kl_t20, kl_t1 + 1e-7f);
    }
    EXPECT_THROW(distill_loss(Tensor(Shape{1, 2}), Tensor(Shape{1, 2}), 0.0f), ConfigError);
}

TEST(DistillLoss, NoGradientReachesTeacher) {
    Rng rng(5);
    Tensor student = random_tensor({4, 2}, rng);
    Tensor teacher = random_tensor({4, 2}, rng);
    student.set_requires_grad(true);
    teacher.set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = distill_loss(student, teacher, 20.0f);
        tape.backward(loss);
    }
    EXPECT_TRUE(student.has_grad());
    EXPECT_FALSE(teacher.has_grad());
}

TEST(KdLoss, EndpointsMatchComponentsExactly) {
    Rng rng(6);
    Tensor s = random_tensor({8, 2}, rng, 3.0f);
    Tensor t = random_tensor({8, 2}, rng, 3.0f);
    Tensor y = random_tensor({8, 2}, rng, 3.0f);
    KDConfig cfg;
    cfg.lambda = 0.0f;
    EXPECT_EQ(kd_loss(s, t, y, cfg).item(), true_loss(s, y).item());
    cfg.lambda = 1.0f;
    EXPECT_EQ(kd_loss(s, t, y, cfg).item(), distill_loss(s, t, cfg.temperature).item());
}

TEST(KdLoss, ContinuousInLambda) {
    Rng rng(7);
    Tensor s = random_tensor({8, 2}, rng, 3.0f);
    Tensor t = random_tensor({8, 2}, rng, 3.0f);
    Tensor y = random_tensor({8, 2}, rng, 3.0f);
    const float lt = true_loss(s, y).item();
    const float ld = distill_loss(s, t, 20.0f).item();
    for (float lambda : {0.1f, 0.25f, 0.5f, 0.75f, 0.9f}) {
        KDConfig cfg;
        cfg.lambda = lambda;
        EXPECT_NEAR(kd_loss(s, t, y, cfg).item(), (1.0f - lambda) * lt + lambda * ld, 1e-5f);
    }
    KDConfig bad;
    bad.lambda = 1.5f;
    EXPECT_THROW(kd_loss(s, t, y, bad), ConfigError);
}

TEST(Adam, ZeroGradLeavesParametersUnchanged) {
    Tensor p(Shape{4}, {1.0f, -2.0f, 3.0f, -4.0f});
    Tensor before = p.clone();
    p.set_requires_grad(true);
    p.grad();  // zero-initialized buffer
    std::vector<Tensor> params{p};
    AdamState st;
    adam_step(st, params, 0.1f, 0.0f);
    EXPECT_EQ(0, std::memcmp(p.data(), before.data(), sizeof(float) * 4));
}

TEST(Adam, FirstStepIsBiasCorrectedSignStep) {
    Tensor p(Shape{1}, {5.0f});
    p.set_requires_grad(true);
    p.grad()[0] = 1.0f;
    std::vector<Tensor> params{p};
    AdamState st;
    adam_step(st, params, 0.1f, 0.0f);
    EXPECT_NEAR(p.data()[0], 5.0f - 0.1f, 1e-6f);
}

TEST(Adam, ConvergesOnQuadratic) {
    Tensor x(Shape{1}, {0.0f});
    x.set_requires_grad(true);
    std::vector<Tensor> params{x};
    AdamState st;
    for (int step = 0; step < 200; ++step) {
        x.zero_grad();
        x.grad()[0] = 2.0f * (x.data()[0] - 3.0f);
        adam_step(st, params, 0.05f, 0.0f);
    }
    EXPECT_LT(std::abs(x.data()[0] - 3.0f), 0.05f);
}

TEST(Adam, LrZeroIsNoOp) {
    Rng rng(8);
    Tensor p = random_tensor({6}, rng);
    Tensor before = p.clone();
    p.set_requires_grad(true);
    for (int i = 0; i < 6; ++i) p.grad()[static_cast<std::size_t>(i)] = normal01(rng);
    std::vector<Tensor> params{p};
    AdamState st;
    adam_step(st, params, 0.0f, 0.0f);
    EXPECT_EQ(0, std::memcmp(p.data(), before.data(), sizeof(float) * 6));
}

TEST(Scheduler, StepDecaySchedule) {
    KDConfig cfg;  // lr 1e-3, step 6, gamma 0.1
    EXPECT_FLOAT_EQ(lr_at(0, cfg), 1e-3f);
    EXPECT_FLOAT_EQ(lr_at(5, cfg), 1e-3f);
    EXPECT_FLOAT_EQ(lr_at(6, cfg), 1e-4f);
    EXPECT_FLOAT_EQ(lr_at(11, cfg), 1e-4f);
    EXPECT_FLOAT_EQ(lr_at(12, cfg), 1e-5f);
    EXPECT_THROW(lr_at(-1, cfg), ContractError);
}

namespace {

DatasetContainer tiny_synthetic(std::int64_t n, std::uint32_t seed) {
    SyntheticSpec spec;
    spec.n_samples = n;
    spec.noise_std = 0.5f;
    spec.signal_gain = 1.0f;
    spec.seed = seed;
    return generate_synthetic(spec);
}

}  // namespace

TEST(Fit, FixedSeedIsBitReproducible) {
    const auto data = tiny_synthetic(48, 11);
    SplitSpec split_spec;
    split_spec.seed = 1;
    const auto splits = split(data, split_spec);
    KDConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.lr = 0.01f;
    cfg.weight_decay = 0.0f;
    cfg.seed = 123;

    Model m1 = build_student(tiny_student_config(), 55);
    Model m2 = build_student(tiny_student_config(), 55);
    const auto r1 = fit(m1, nullptr, splits.train, splits.val, cfg);
    const auto r2 = fit(m2, nullptr, splits.train, splits.val, cfg);
    ASSERT_EQ(r1.history.size(), r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        EXPECT_EQ(r1.history[i].train_loss, r2.history[i].train_loss);
        EXPECT_EQ(r1.history[i].val_rmse, r2.history[i].val_rmse);
        EXPECT_EQ(r1.history[i].lr, r2.history[i].lr);
    }
    for (std::size_t i = 0; i < m1.entries.size(); ++i)
        EXPECT_EQ(0, std::memcmp(m1.entries[i].tensor.data(), m2.entries[i].tensor.data(),
                                 sizeof(float) * static_cast<std::size_t>(m1.entries[i].tensor.numel())));
}

TEST(Fit, TeacherParametersUntouchedDuringDistillation) {
    const auto data = tiny_synthetic(32, 13);
    SplitSpec split_spec;
    const auto splits = split(data, split_spec);
    Model teacher = build_teacher(tiny_teacher_config(), 77);
    std::vector<std::vector<float>> before;
    for (const auto& e : teacher.entries) before.push_back(e.tensor.storage());

    Model student = build_student(tiny_student_config(), 78);
    KDConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    cfg.weight_decay = 0.0f;
    (void)fit(student, &teacher, splits.train, splits.val, cfg);

    for (std::size_t i = 0; i < teacher.entries.size(); ++i) {
        const auto& now = teacher.entries[i].tensor.storage();
        EXPECT_EQ(0, std::memcmp(now.data(), before[i].data(), sizeof(float) * now.size()))
            << teacher.entries[i].name;
        EXPECT_FALSE(teacher.entries[i].tensor.has_grad());
    }
}

TEST(Fit, NonFiniteLossAbortsWithDiagnostic) {
    const auto data = tiny_synthetic(16, 17);
    SplitSpec split_spec;
    const auto splits = split(data, split_spec);
    Model m = build_student(tiny_student_config(), 3);
    m.at("head.fc.weight").data()[0] = std::numeric_limits<float>::quiet_NaN();
    KDConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    try {
        (void)fit(m, nullptr, splits.train, splits.val, cfg);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("head.fc.weight"), std::string::npos);
    }
}

TEST(Fit, BestValidationParametersRetained) {
    const auto data = tiny_synthetic(64, 19);
    SplitSpec split_spec;
    const auto splits = split(data, split_spec);
    Model m = build_student(tiny_student_config(), 31);
    KDConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.lr = 0.02f;
    cfg.weight_decay = 0.0f;
    cfg.seed = 5;
    const auto result = fit(m, nullptr, splits.train, splits.val, cfg);
    double best = result.history[0].val_rmse;
    for (const auto& r : result.history) best = std::min(best, r.val_rmse);
    EXPECT_EQ(result.best_val_rmse, best);
    // restored model reproduces the best recorded validation value
    EXPECT_EQ(rmse_eval(m, splits.val, 1.0, cfg.batch_size), best);
}

TEST(Fit, OverfitsTinySyntheticBatch) {
    // 32 samples, full-batch steps: training distance collapses under 10 px.
    auto data = tiny_synthetic(32, 23);
    StudentConfig cfg = tiny_student_config();
    cfg.tcn_dropout = 0.0f;
    cfg.head_dropout = 0.0f;
    Model m = build_student(cfg, 41);
    auto params = m.parameters();
    AdamState opt;
    Rng rng(1);
    Tensor x(Shape{32, 129, 500});
    std::copy_n(data.eeg.data(), x.numel(), x.data());
    Tensor y(Shape{32, 2});
    std::copy_n(data.labels.data(), 64, y.data());

    for (int step = 0; step < 300; ++step) {
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            Tensor pred = model_forward(m, x, true, &rng);
            loss = true_loss(pred, y);
        }
        {
            TapeScope scope(tape);
            tape.backward(loss);
        }
        adam_step(opt, params, 0.05f, 0.0f);
        m.zero_grad();
    }
    EXPECT_LT(rmse_eval(m, data, 1.0, 32), 10.0);
}

TEST(History, FixedFieldOrderRoundTrip) {
    std::vector<EpochRecord> hist = {{0, 1e-3f, 100.25, 90.5}, {1, 1e-3f, 50.125, 60.75}};
    const std::string path = std::filesystem::temp_directory_path() / "eegkd_history_test.csv";
    write_history(path, hist);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,lr,train_loss,val_rmse");
    std::getline(in, line);
    EXPECT_EQ(line.substr(0, 2), "0,");
    std::getline(in, line);
    EXPECT_EQ(line.substr(0, 2), "1,");
    std::filesystem::remove(path);
}
