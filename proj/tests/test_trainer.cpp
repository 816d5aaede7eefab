#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "csqn/trainer.hpp"

using namespace csqn;
using config::ExperimentConfig;
using train::EvalMatrix;

namespace {

std::string data_dir() {
    const char* env = std::getenv("CSQN_DATA");
    return env ? env : "data/mnist";
}

const data::MnistData& mnist() {
    static data::MnistData m = data::load_mnist(data_dir());
    return m;
}

ExperimentConfig synthetic_config(const std::string& method, double lambda,
                                  uint64_t seed = 1) {
    ExperimentConfig cfg;
    cfg.dataset.kind = "synthetic";
    cfg.dataset.task_count = 3;
    cfg.dataset.synthetic = data::SyntheticSpec{3, 8, 3, 1.5, 300, 300, 1000};
    cfg.model.hidden = {16};
    cfg.model.dropout = 0.0;
    cfg.method = method;
    cfg.lambda = lambda;
    cfg.pair_budget = 3;
    cfg.curvature_batch = 256;
    cfg.epochs = 2;
    cfg.batch_size = 64;
    cfg.eval_batch = 256;
    cfg.seed = seed;
    cfg.optimizer.lr = 0.01;
    return cfg;
}

}  // namespace

TEST(Metrics, AllOnes) {
    EvalMatrix r(3);
    for (int i = 1; i <= 3; ++i)
        for (int j = 1; j <= 3; ++j) r.at(i, j) = 1.0;
    const train::Metrics m = train::metrics(r);
    EXPECT_DOUBLE_EQ(m.acc, 1.0);
    ASSERT_TRUE(m.bwt.has_value());
    EXPECT_DOUBLE_EQ(*m.bwt, 0.0);
}

TEST(Metrics, HandArithmetic) {
    EvalMatrix r(3);
    r.at(1, 1) = 0.9;
    r.at(2, 1) = 0.85;
    r.at(2, 2) = 0.95;
    r.at(3, 1) = 0.8;
    r.at(3, 2) = 0.9;
    r.at(3, 3) = 0.95;
    const train::Metrics m = train::metrics(r);
    EXPECT_NEAR(m.acc, (0.8 + 0.9 + 0.95) / 3.0, 1e-15);
    ASSERT_TRUE(m.bwt.has_value());
    EXPECT_NEAR(*m.bwt, ((0.8 - 0.9) + (0.9 - 0.95)) / 2.0, 1e-15);
}

TEST(Metrics, NoForgettingMeansZeroBwt) {
    EvalMatrix r(2);
    r.at(1, 1) = 0.7;
    r.at(2, 1) = 0.7;
    r.at(2, 2) = 0.8;
    const train::Metrics m = train::metrics(r);
    ASSERT_TRUE(m.bwt.has_value());
    EXPECT_DOUBLE_EQ(*m.bwt, 0.0);
}

TEST(Metrics, BwtUndefinedForSingleTask) {
    EvalMatrix r(1);
    r.at(1, 1) = 0.5;
    const train::Metrics m = train::metrics(r);
    EXPECT_FALSE(m.bwt.has_value());
}

TEST(Evaluate, ZeroWeightModelScoresClassPrior) {
    const data::MnistData& m = mnist();
    nn::MlpArchitecture arch{784, {16}, 10, 0.0f};
    nn::ParamVector theta(arch.param_count(), 0.0f);
    // all logits equal -> argmax picks class 0 -> accuracy = share of label 0
    int zeros = 0;
    for (uint8_t y : m.test.y) zeros += y == 0;
    const double expect = static_cast<double>(zeros) / m.test.size();
    EXPECT_GE(expect, 0.098 - 1e-9);
    EXPECT_LE(expect, 0.135 + 1e-9);
    EXPECT_DOUBLE_EQ(train::evaluate_accuracy(arch, theta, m.test, 512), expect);
}

TEST(Evaluate, MemorizesTenSamples) {
    data::SyntheticSpec spec{1, 6, 2, 0.0, 10, 10, 10};
    data::SyntheticSequence seq(spec, 3);
    data::Dataset ten = seq.make(1, data::Split::Train);

    ExperimentConfig cfg = synthetic_config("finetune", 0.0);
    cfg.epochs = 150;
    cfg.batch_size = 10;
    cfg.optimizer.lr = 0.02;
    nn::MlpArchitecture arch{6, {16}, 2, 0.0f};
    RngStream init = RngStream::derive(cfg.seed, StreamId::Init);
    nn::ParamVector theta = nn::init_params(arch, init);
    reg::RegularizerState state = reg::make_state(reg::Method::Finetune,
                                                  reg::Strategy::None, 0.0);
    train::train_task(arch, theta, state, ten, cfg, 1);
    EXPECT_DOUBLE_EQ(train::evaluate_accuracy(arch, theta, ten, 4), 1.0);
}

TEST(Evaluate, BatchSizeInvariance) {
    const data::MnistData& m = mnist();
    nn::MlpArchitecture arch{784, {32}, 10, 0.0f};
    RngStream init(17);
    nn::ParamVector theta = nn::init_params(arch, init);
    const double a = train::evaluate_accuracy(arch, theta, m.test, 1);
    const double b = train::evaluate_accuracy(arch, theta, m.test, 512);
    const double c = train::evaluate_accuracy(arch, theta, m.test, 997);
    EXPECT_EQ(a, b);
    EXPECT_EQ(b, c);
}

TEST(TrainTask, FirstTaskIdenticalAcrossMethods) {
    ExperimentConfig ft = synthetic_config("finetune", 0.0);
    ft.dataset.task_count = 1;
    ft.dataset.synthetic.task_count = 1;
    ExperimentConfig cs = ft;
    cs.method = "csqn-s";
    cs.lambda = 1e3;

    const train::RunResult a = train::run_experiment(ft);
    const train::RunResult b = train::run_experiment(cs);
    EXPECT_EQ(a.theta_final, b.theta_final);
    EXPECT_EQ(a.r.r, b.r.r);
}

TEST(TrainTask, LambdaZeroBitIdenticalToFinetune) {
    const train::RunResult ft = train::run_experiment(synthetic_config("finetune", 0.0));
    const train::RunResult ewc = train::run_experiment(synthetic_config("ewc", 0.0));
    EXPECT_EQ(ft.theta_final, ewc.theta_final);
    EXPECT_EQ(ft.r.r, ewc.r.r);

    const train::RunResult cs = train::run_experiment(synthetic_config("csqn-s", 0.0));
    EXPECT_EQ(ft.theta_final, cs.theta_final);
    EXPECT_EQ(ft.r.r, cs.r.r);
}

TEST(TrainTask, HugeLambdaAnchorsParameters) {
    ExperimentConfig cfg = synthetic_config("ewc", 1e12);
    cfg.dataset.task_count = 2;
    cfg.dataset.synthetic.task_count = 2;
    cfg.dataset.synthetic.shift = 3.0;
    cfg.dataset.synthetic.n_train = 400;
    cfg.epochs = 10;
    cfg.optimizer.lr = 0.005;

    auto seq = train::make_task_sequence(cfg);
    nn::MlpArchitecture arch = train::make_arch(cfg, *seq);
    RngStream init = RngStream::derive(cfg.seed, StreamId::Init);
    nn::ParamVector theta = nn::init_params(arch, init);
    reg::RegularizerState state =
        reg::make_state(reg::Method::Ewc, reg::Strategy::None, cfg.lambda);

    const data::Dataset tr1 = seq->make(1, data::Split::Train);
    train::train_task(arch, theta, state, tr1, cfg, 1);
    const nn::ParamVector theta1 = theta;
    const data::Dataset test1 = seq->make(1, data::Split::Test);
    const double acc1 = train::evaluate_accuracy(arch, theta, test1, 256);

    // floor the importance diagonal so every coordinate is anchored;
    // zero-Fisher coordinates (dead units) are free directions by design and
    // would drift regardless of lambda
    train::HarvestResult h = train::harvest_posterior(arch, theta, tr1, cfg, 1);
    double omax = 0.0;
    for (double v : h.omega) omax = std::max(omax, v);
    for (double& v : h.omega) v += 1e-3 * omax;
    reg::finish_task(state, theta, h.omega, std::move(h.factor), 1);

    const data::Dataset tr2 = seq->make(2, data::Split::Train);
    train::train_task(arch, theta, state, tr2, cfg, 2);

    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < theta.size(); ++i) {
        const double d = double(theta[i]) - double(theta1[i]);
        num += d * d;
        den += double(theta1[i]) * theta1[i];
    }
    EXPECT_LE(std::sqrt(num), 0.01 * std::sqrt(den));
    // task-1 accuracy unchanged within 0.5%
    EXPECT_NEAR(train::evaluate_accuracy(arch, theta, test1, 256), acc1, 0.005);
}

TEST(Harvest, EwcReturnsOnlyOmega) {
    ExperimentConfig cfg = synthetic_config("ewc", 10.0);
    auto seq = train::make_task_sequence(cfg);
    nn::MlpArchitecture arch = train::make_arch(cfg, *seq);
    RngStream init = RngStream::derive(cfg.seed, StreamId::Init);
    nn::ParamVector theta = nn::init_params(arch, init);
    data::Dataset tr = seq->make(1, data::Split::Train);
    const train::HarvestResult h = train::harvest_posterior(arch, theta, tr, cfg, 1);
    EXPECT_FALSE(h.factor.has_value());
    EXPECT_EQ(h.omega.size(), theta.size());
    for (double v : h.omega) ASSERT_GE(v, 0.0);
}

TEST(Harvest, CsqnSProducesBoundedZFactor) {
    ExperimentConfig cfg = synthetic_config("csqn-s", 10.0);
    cfg.pair_budget = 10;
    auto seq = train::make_task_sequence(cfg);
    nn::MlpArchitecture arch = train::make_arch(cfg, *seq);
    RngStream init = RngStream::derive(cfg.seed, StreamId::Init);
    nn::ParamVector theta = nn::init_params(arch, init);
    data::Dataset tr = seq->make(1, data::Split::Train);

    // train briefly so the loss surface has curvature
    reg::RegularizerState state = reg::make_state(reg::Method::CsqnSr1,
                                                  reg::Strategy::None, 10.0, 10);
    train::train_task(arch, theta, state, tr, cfg, 1);

    const train::HarvestResult h = train::harvest_posterior(arch, theta, tr, cfg, 1);
    ASSERT_TRUE(h.factor.has_value());
    const auto& z = std::get<curvature::LowRankFactor>(*h.factor);
    EXPECT_LE(z.z.cols(), 10);
    EXPECT_GE(z.z.cols(), 1);
    EXPECT_EQ(z.provenance, std::vector<int>{1});

    // determinism: same seed gives identical Omega and factor bytes
    const train::HarvestResult h2 = train::harvest_posterior(arch, theta, tr, cfg, 1);
    EXPECT_EQ(h.omega, h2.omega);
    const auto& z2 = std::get<curvature::LowRankFactor>(*h2.factor);
    EXPECT_EQ(z.z.data(), z2.z.data());
}

TEST(RunExperiment, BitIdenticalReproducibility) {
    ExperimentConfig cfg = synthetic_config("csqn-s", 100.0, 9);
    const train::RunResult a = train::run_experiment(cfg);
    const train::RunResult b = train::run_experiment(cfg);
    EXPECT_EQ(a.r.r, b.r.r);
    EXPECT_EQ(a.theta_final, b.theta_final);
}

TEST(RunExperiment, PersistedMatrixReproducesMetrics) {
    namespace fs = std::filesystem;
    const std::string out =
        (fs::temp_directory_path() / "csqn_run_metrics").string();
    fs::remove_all(out);
    ExperimentConfig cfg = synthetic_config("ewc", 50.0, 4);
    cfg.out_dir = out;
    const train::RunResult res = train::run_experiment(cfg);

    const train::LoadedEvalMatrix loaded = train::read_r_csv(out + "/R.csv");
    EXPECT_EQ(loaded.completed, 3);
    const train::Metrics m = train::metrics(loaded.r);
    EXPECT_EQ(m.acc, res.m.acc);
    ASSERT_TRUE(m.bwt.has_value());
    EXPECT_EQ(*m.bwt, *res.m.bwt);

    EXPECT_TRUE(fs::exists(out + "/metrics.json"));
    EXPECT_TRUE(fs::exists(out + "/state.bin"));
    const reg::RegularizerState st = reg::load_state(out + "/state.bin");
    EXPECT_EQ(st.tasks_done, 3);
    fs::remove_all(out);
}

TEST(RunExperiment, MemoryReportPerStrategy) {
    ExperimentConfig cfg = synthetic_config("csqn-s", 10.0, 6);
    cfg.dataset.task_count = 4;
    cfg.dataset.synthetic.task_count = 4;
    cfg.pair_budget = 2;

    cfg.strategy = "none";
    const train::RunResult none = train::run_experiment(cfg);
    for (size_t i = 1; i < none.memory_vectors.size(); ++i)
        EXPECT_GT(none.memory_vectors[i], none.memory_vectors[i - 1]);

    cfg.strategy = "ct";
    const train::RunResult ct = train::run_experiment(cfg);
    for (size_t i = 1; i < ct.memory_vectors.size(); ++i)
        EXPECT_EQ(ct.memory_vectors[i], ct.memory_vectors[0]);

    cfg.strategy = "mrt";
    const train::RunResult mrt = train::run_experiment(cfg);
    for (size_t i = 1; i < mrt.memory_vectors.size(); ++i)
        EXPECT_EQ(mrt.memory_vectors[i], mrt.memory_vectors[0]);

    cfg.strategy = "btree";
    const train::RunResult btree = train::run_experiment(cfg);
    // popcount(t) * c + 1 diagonal, with c = M = 2
    const std::vector<int64_t> expect{2 + 1, 2 + 1, 4 + 1, 2 + 1};
    EXPECT_EQ(btree.memory_vectors, expect);
}

TEST(ValidationSelect, SingleElementGrid) {
    ExperimentConfig cfg = synthetic_config("ewc", 0.0);
    EXPECT_DOUBLE_EQ(train::validation_select_lambda(cfg, {123.0}), 123.0);
}

TEST(ValidationSelect, ZeroWinsOnIdenticalDistributions) {
    ExperimentConfig cfg = synthetic_config("ewc", 0.0, 2);
    cfg.dataset.task_count = 2;
    cfg.dataset.synthetic =
        data::SyntheticSpec{2, 8, 3, 0.0, 400, 400, 400};  // shift = 0
    cfg.epochs = 3;
    const double best = train::validation_select_lambda(cfg, {1e8, 0.0});
    EXPECT_DOUBLE_EQ(best, 0.0);
}
