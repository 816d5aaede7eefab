#ifndef CSQN_TRAINER_HPP
#define CSQN_TRAINER_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "csqn/config.hpp"
#include "csqn/curvature.hpp"
#include "csqn/data.hpp"
#include "csqn/nn.hpp"
#include "csqn/regularizer.hpp"

namespace csqn::train {

using config::ExperimentConfig;

// R[i][j] = accuracy on task j's test set after training task i (1-based).
struct EvalMatrix {
    int task_count = 0;
    std::vector<double> r;

    EvalMatrix() = default;
    explicit EvalMatrix(int t)
        : task_count(t),
          r(static_cast<size_t>(t) * t, std::numeric_limits<double>::quiet_NaN()) {}

    double& at(int i, int j) { return r[static_cast<size_t>(i - 1) * task_count + (j - 1)]; }
    double at(int i, int j) const {
        return r[static_cast<size_t>(i - 1) * task_count + (j - 1)];
    }
};

struct Metrics {
    double acc = 0.0;
    std::optional<double> bwt;  // undefined for T < 2
};

// ACC = mean of the final row; BWT = mean of R[T][i] - R[i][i] over i < T.
inline Metrics metrics(const EvalMatrix& r) {
    const int t = r.task_count;
    if (t < 1) throw DimensionError("metrics: empty matrix");
    for (int j = 1; j <= t; ++j)
        if (std::isnan(r.at(t, j)))
            throw DimensionError("metrics: final row not fully populated");
    Metrics m;
    double acc = 0.0;
    for (int j = 1; j <= t; ++j) acc += r.at(t, j);
    m.acc = acc / t;
    if (t >= 2) {
        double bwt = 0.0;
        for (int i = 1; i < t; ++i) bwt += r.at(t, i) - r.at(i, i);
        m.bwt = bwt / (t - 1);
    }
    return m;
}

inline std::shared_ptr<data::TaskSequence> make_task_sequence(const ExperimentConfig& cfg) {
    const auto& d = cfg.dataset;
    if (d.kind == "synthetic") {
        data::SyntheticSpec spec = d.synthetic;
        spec.task_count = d.task_count;
        return std::make_shared<data::SyntheticSequence>(
            spec, derive_seed(cfg.seed, {static_cast<uint64_t>(StreamId::Synthetic)}));
    }
    auto mnist = std::make_shared<const data::MnistData>(
        data::load_mnist(config::resolve_data_dir(cfg), d.split_seed));
    if (d.kind == "rotated_mnist")
        return std::make_shared<data::RotatedMnistSequence>(
            mnist, data::RotationSpec{d.task_count, d.degrees_per_task}, d.train_cap,
            d.val_cap);
    return std::make_shared<data::PermutedMnistSequence>(mnist, d.task_count, d.perm_seed,
                                                         d.train_cap, d.val_cap);
}

inline nn::MlpArchitecture make_arch(const ExperimentConfig& cfg,
                                     const data::TaskSequence& seq) {
    nn::MlpArchitecture arch;
    arch.input_dim = seq.input_dim();
    arch.hidden = cfg.model.hidden;
    arch.classes = seq.classes();
    arch.dropout = static_cast<float>(cfg.model.dropout);
    arch.validate();
    return arch;
}

inline nn::OptimizerState make_optimizer(const ExperimentConfig& cfg) {
    nn::OptimizerState opt;
    opt.kind = cfg.optimizer_enum();
    opt.lr = static_cast<float>(cfg.optimizer.lr);
    opt.beta1 = static_cast<float>(cfg.optimizer.beta1);
    opt.beta2 = static_cast<float>(cfg.optimizer.beta2);
    opt.eps_adam = static_cast<float>(cfg.optimizer.eps);
    opt.momentum = static_cast<float>(cfg.optimizer.momentum);
    return opt;
}

// One task of Alg. 3's loop: minibatch training with total gradient
// CE-gradient + penalty gradient. The penalty branch is skipped entirely when
// inactive so a lambda=0 run is bit-identical to fine-tuning.
inline void train_task(const nn::MlpArchitecture& arch, nn::ParamVector& theta,
                       const reg::RegularizerState& state, const data::Dataset& train,
                       const ExperimentConfig& cfg, int task_pos) {
    nn::OptimizerState opt = make_optimizer(cfg);
    const bool use_penalty = state.active() && cfg.lambda > 0.0;

    std::vector<int> indices(train.size());
    std::vector<float> bx(static_cast<size_t>(cfg.batch_size) * train.dim);
    std::vector<uint8_t> by(cfg.batch_size);

    int64_t step_index = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(indices.begin(), indices.end(), 0);
        RngStream shuffle_rng = RngStream::derive(
            cfg.seed, StreamId::Shuffle,
            {static_cast<uint64_t>(task_pos), static_cast<uint64_t>(epoch)});
        shuffle_rng.shuffle(indices);

        for (int start = 0; start < train.size(); start += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, train.size() - start);
            for (int b = 0; b < count; ++b) {
                std::copy_n(train.x.data() + static_cast<size_t>(indices[start + b]) * train.dim,
                            train.dim, bx.data() + static_cast<size_t>(b) * train.dim);
                by[b] = train.y[indices[start + b]];
            }
            nn::Batch batch{bx.data(), by.data(), count, train.dim};

            RngStream dropout_rng = RngStream::derive(
                cfg.seed, StreamId::Dropout,
                {static_cast<uint64_t>(task_pos), static_cast<uint64_t>(epoch),
                 static_cast<uint64_t>(step_index)});
            nn::LossGrad lg = nn::loss_and_grad(arch, theta, batch, nn::Mode::Train,
                                                dropout_rng);
            if (!std::isfinite(lg.loss))
                throw NumericalError("train_task: non-finite loss at task " +
                                     std::to_string(task_pos) + " step " +
                                     std::to_string(step_index));

            if (use_penalty) {
                const reg::Penalty pen = reg::penalty(state, theta);
                for (size_t i = 0; i < lg.grad.size(); ++i)
                    lg.grad[i] += static_cast<float>(pen.gradient[i]);
            }
            nn::optimizer_step(opt, theta, lg.grad);
            ++step_index;
        }
    }
}

struct HarvestResult {
    std::vector<double> omega;
    std::optional<curvature::Factor> factor;
};

// Alg. 3 post-task lines: Fisher diagonal over a fixed seeded curvature
// batch, then the sampled quasi-Newton factor. The mean gradient from the
// Fisher pass is reused as grad f(theta*), so building Omega costs no extra
// pass over the data.
inline HarvestResult harvest_posterior(const nn::MlpArchitecture& arch,
                                       const nn::ParamVector& theta,
                                       const data::Dataset& train,
                                       const ExperimentConfig& cfg, int task_pos) {
    const int budget = std::min(cfg.curvature_batch, train.size());
    std::vector<int> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    RngStream batch_rng = RngStream::derive(cfg.seed, StreamId::CurvatureBatch,
                                            {static_cast<uint64_t>(task_pos)});
    batch_rng.shuffle(idx);
    idx.resize(budget);
    const data::Dataset cb = data::gather(train, idx);

    nn::FisherResult fisher = nn::fisher_diag_and_mean_grad(arch, theta, cb.batch());
    HarvestResult out;
    out.omega = std::move(fisher.omega);
    const reg::Method method = cfg.method_enum();
    if (method == reg::Method::Finetune || method == reg::Method::Ewc) return out;

    curvature::SamplingConfig scfg;
    scfg.pair_budget = cfg.pair_budget;
    scfg.epsilon = cfg.epsilon;
    scfg.kappa = cfg.kappa;
    scfg.fd_step = cfg.fd_step;
    scfg.y_mode = cfg.y_mode_enum();
    scfg.batch_size = cfg.curvature_batch;

    curvature::GradFn grad_fn = [&](const std::vector<double>& x) {
        nn::ParamVector xf(x.size());
        for (size_t i = 0; i < x.size(); ++i) xf[i] = static_cast<float>(x[i]);
        RngStream rng(0);
        const nn::LossGrad lg = nn::loss_and_grad(arch, xf, cb.batch(), nn::Mode::Eval, rng);
        return std::vector<double>(lg.grad.begin(), lg.grad.end());
    };

    std::vector<double> theta_d(theta.begin(), theta.end());
    const uint64_t sample_seed = derive_seed(
        cfg.seed, {static_cast<uint64_t>(StreamId::Curvature),
                   static_cast<uint64_t>(task_pos)});
    const curvature::QnKind kind = method == reg::Method::CsqnBfgs
                                       ? curvature::QnKind::Bfgs
                                       : curvature::QnKind::Sr1;
    const curvature::CurvaturePairs pairs = curvature::sample_sy(
        theta_d, scfg, out.omega, grad_fn, kind, sample_seed, &fisher.mean_grad);

    if (kind == curvature::QnKind::Bfgs) {
        curvature::CompactBfgsFactor f = curvature::build_bfgs(out.omega, pairs);
        if (cfg.strategy_enum() == reg::Strategy::None) {
            out.factor = curvature::Factor(std::move(f));
        } else {
            // Alg. 3's branch: any reduction strategy needs a Z-form factor
            curvature::LowRankFactor z = curvature::bfgs_to_psd_z(f);
            z.provenance = {task_pos};
            out.factor = curvature::Factor(std::move(z));
        }
    } else {
        curvature::LowRankFactor z =
            curvature::z_from_sr1(curvature::build_sr1(out.omega, pairs));
        z.provenance = {task_pos};
        out.factor = curvature::Factor(std::move(z));
    }
    return out;
}

// Eval-mode top-1 accuracy; deterministic argmax (first maximum wins).
inline double evaluate_accuracy(const nn::MlpArchitecture& arch,
                                const nn::ParamVector& theta, const data::Dataset& ds,
                                int eval_batch) {
    if (ds.size() == 0) return 0.0;
    RngStream rng(0);
    int64_t correct = 0;
    for (int start = 0; start < ds.size(); start += eval_batch) {
        const int count = std::min(eval_batch, ds.size() - start);
        const nn::ForwardRecord rec =
            nn::forward(arch, theta, ds.rows(start, count), nn::Mode::Eval, rng);
        for (int b = 0; b < count; ++b) {
            const float* z = rec.logits.data() + static_cast<size_t>(b) * arch.classes;
            int arg = 0;
            for (int j = 1; j < arch.classes; ++j)
                if (z[j] > z[arg]) arg = j;
            correct += arg == ds.y[start + b];
        }
    }
    return static_cast<double>(correct) / ds.size();
}

inline std::vector<double> evaluate_all_tasks(const nn::MlpArchitecture& arch,
                                              const nn::ParamVector& theta,
                                              const data::TaskSequence& seq,
                                              const std::vector<int>& order,
                                              data::Split split, int eval_batch) {
    std::vector<double> row(order.size());
    for (size_t j = 0; j < order.size(); ++j)
        row[j] = evaluate_accuracy(arch, theta, seq.make(order[j], split), eval_batch);
    return row;
}

// --- artifacts ----------------------------------------------------------------

inline void write_r_csv(const std::string& path, const EvalMatrix& r, int completed) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write: " + path);
    for (int j = 1; j <= r.task_count; ++j)
        os << (j > 1 ? "," : "") << "task_" << j;
    os << "\n";
    char buf[32];
    for (int i = 1; i <= completed; ++i) {
        for (int j = 1; j <= r.task_count; ++j) {
            std::snprintf(buf, sizeof(buf), "%.6f", r.at(i, j));
            os << (j > 1 ? "," : "") << buf;
        }
        os << "\n";
    }
}

struct LoadedEvalMatrix {
    EvalMatrix r;
    int completed = 0;
};

inline LoadedEvalMatrix read_r_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty R file: " + path);
    int t = 1;
    for (char c : line) t += c == ',';
    LoadedEvalMatrix out;
    out.r = EvalMatrix(t);
    int i = 0;
    while (std::getline(is, line) && !line.empty()) {
        ++i;
        if (i > t) throw DataError("too many rows in: " + path);
        std::stringstream ss(line);
        std::string cell;
        for (int j = 1; j <= t; ++j) {
            if (!std::getline(ss, cell, ',')) throw DataError("short row in: " + path);
            out.r.at(i, j) = std::stod(cell);
        }
    }
    out.completed = i;
    return out;
}

struct RunResult {
    EvalMatrix r;
    Metrics m;
    std::vector<double> per_task_time_s;
    std::vector<int64_t> memory_vectors;  // per task: factor columns + diagonals
    double val_acc_final_mean = 0.0;
    nn::ParamVector theta_final;
    reg::RegularizerState state;
};

inline nlohmann::json metrics_json(const ExperimentConfig& cfg, const RunResult& res) {
    nlohmann::json j;
    j["config"] = cfg;
    j["acc"] = res.m.acc;
    if (res.m.bwt.has_value())
        j["bwt"] = *res.m.bwt;
    else
        j["bwt"] = nullptr;
    j["per_task_time_s"] = res.per_task_time_s;
    j["memory_vectors"] = res.memory_vectors;
    j["val_acc_final_mean"] = res.val_acc_final_mean;
    return j;
}

// Full Alg. 3 loop: per-task training, posterior harvesting, strategy
// bookkeeping and the running evaluation matrix. Artifacts are flushed after
// every task so partial results survive an abort.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    const bool write_artifacts = !cfg.out_dir.empty();
    if (write_artifacts) fs::create_directories(cfg.out_dir);

    const std::shared_ptr<data::TaskSequence> seq = make_task_sequence(cfg);
    const int t_count = seq->task_count();
    const nn::MlpArchitecture arch = make_arch(cfg, *seq);

    RngStream init_rng = RngStream::derive(cfg.seed, StreamId::Init);
    nn::ParamVector theta = nn::init_params(arch, init_rng);

    reg::RegularizerState state =
        reg::make_state(cfg.method_enum(), cfg.strategy_enum(), cfg.lambda,
                        cfg.is_csqn() ? cfg.reduce_target_cols() : 0);

    std::vector<int> order(t_count);
    std::iota(order.begin(), order.end(), 1);
    if (cfg.task_order_shuffle) {
        RngStream order_rng = RngStream::derive(cfg.seed, StreamId::TaskOrder);
        order_rng.shuffle(order);
    }

    RunResult res;
    res.r = EvalMatrix(t_count);

    for (int pos = 1; pos <= t_count; ++pos) {
        const auto t0 = std::chrono::steady_clock::now();
        const data::Dataset train = seq->make(order[pos - 1], data::Split::Train);

        train_task(arch, theta, state, train, cfg, pos);

        if (cfg.method_enum() != reg::Method::Finetune) {
            HarvestResult h = harvest_posterior(arch, theta, train, cfg, pos);
            reg::finish_task(state, theta, h.omega, std::move(h.factor), pos);
        }

        const std::vector<double> row =
            evaluate_all_tasks(arch, theta, *seq, order, data::Split::Test, cfg.eval_batch);
        for (int j = 1; j <= t_count; ++j) res.r.at(pos, j) = row[j - 1];

        const auto t1 = std::chrono::steady_clock::now();
        res.per_task_time_s.push_back(std::chrono::duration<double>(t1 - t0).count());
        const reg::MemoryCost mc = reg::strategy_memory_cost(state);
        res.memory_vectors.push_back(mc.factor_columns + mc.diagonal_count);

        if (write_artifacts) {
            write_r_csv(cfg.out_dir + "/R.csv", res.r, pos);
            if (cfg.save_state && cfg.method_enum() != reg::Method::Finetune)
                reg::save_state(cfg.out_dir + "/state.bin", state);
        }
    }

    res.m = metrics(res.r);
    const std::vector<double> val_row = evaluate_all_tasks(
        arch, theta, *seq, order, data::Split::Validation, cfg.eval_batch);
    res.val_acc_final_mean =
        std::accumulate(val_row.begin(), val_row.end(), 0.0) / val_row.size();
    res.theta_final = std::move(theta);
    res.state = std::move(state);

    if (write_artifacts) {
        std::ofstream os(cfg.out_dir + "/metrics.json");
        os << metrics_json(cfg, res).dump(2) << "\n";
        nn::save_checkpoint(cfg.out_dir + "/model_final.ckpt", arch, res.theta_final);
    }
    return res;
}

// Runs the sequence once per grid point and returns the lambda with the best
// mean validation accuracy over all tasks at the end; ties go to the smaller
// lambda.
inline double validation_select_lambda(const ExperimentConfig& base,
                                       std::vector<double> grid) {
    if (grid.empty()) throw ConfigError("lambda grid is empty");
    std::sort(grid.begin(), grid.end());
    double best_lambda = grid.front();
    double best_score = -1.0;
    for (double lambda : grid) {
        ExperimentConfig cfg = base;
        cfg.lambda = lambda;
        cfg.out_dir.clear();
        const RunResult res = run_experiment(cfg);
        if (res.val_acc_final_mean > best_score) {
            best_score = res.val_acc_final_mean;
            best_lambda = lambda;
        }
    }
    return best_lambda;
}

}  // namespace csqn::train

#endif  // CSQN_TRAINER_HPP
