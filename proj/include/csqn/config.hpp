#ifndef CSQN_CONFIG_HPP
#define CSQN_CONFIG_HPP

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "csqn/common.hpp"
#include "csqn/curvature.hpp"
#include "csqn/data.hpp"
#include "csqn/nn.hpp"
#include "csqn/regularizer.hpp"

namespace csqn::config {

using json = nlohmann::json;

struct DatasetConfig {
    std::string kind = "synthetic";  // rotated_mnist | permuted_mnist | synthetic
    int task_count = 3;
    double degrees_per_task = 10.0;
    std::string data_dir;  // empty -> CSQN_DATA env -> "data/mnist"
    int train_cap = 0;     // 0 = no cap
    int val_cap = 0;
    uint64_t perm_seed = 7;
    uint64_t split_seed = 42;  // train/validation split shuffle
    data::SyntheticSpec synthetic;
};

struct OptimizerConfig {
    std::string kind = "adam";  // adam | sgd
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double momentum = 0.9;
};

struct ModelConfig {
    std::vector<int> hidden = {256, 256};
    double dropout = 0.25;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ModelConfig model;
    OptimizerConfig optimizer;
    std::string method = "finetune";  // finetune | ewc | csqn-b | csqn-s
    std::string strategy = "none";    // none | ct | btree | mrt
    int pair_budget = 10;             // M
    double lambda = 0.0;
    double epsilon = 1e-4;
    double kappa = 1e-12;
    double fd_step = 1e-3;
    std::string y_mode = "fd-hvp";  // fd-hvp | grad-diff
    int curvature_batch = 2048;
    int epochs = 3;
    int batch_size = 128;
    int eval_batch = 512;
    uint64_t seed = 1;
    bool task_order_shuffle = false;
    std::string out_dir;
    bool save_state = true;

    reg::Method method_enum() const {
        if (method == "finetune") return reg::Method::Finetune;
        if (method == "ewc") return reg::Method::Ewc;
        if (method == "csqn-b") return reg::Method::CsqnBfgs;
        if (method == "csqn-s") return reg::Method::CsqnSr1;
        throw ConfigError("unknown method: " + method);
    }

    reg::Strategy strategy_enum() const {
        if (strategy == "none") return reg::Strategy::None;
        if (strategy == "ct") return reg::Strategy::Ct;
        if (strategy == "btree") return reg::Strategy::Btree;
        if (strategy == "mrt") return reg::Strategy::Mrt;
        throw ConfigError("unknown strategy: " + strategy);
    }

    curvature::YMode y_mode_enum() const {
        if (y_mode == "fd-hvp") return curvature::YMode::FdHvp;
        if (y_mode == "grad-diff") return curvature::YMode::GradDiff;
        throw ConfigError("unknown y_mode: " + y_mode);
    }

    nn::OptimizerKind optimizer_enum() const {
        if (optimizer.kind == "adam") return nn::OptimizerKind::Adam;
        if (optimizer.kind == "sgd") return nn::OptimizerKind::SgdMomentum;
        throw ConfigError("unknown optimizer: " + optimizer.kind);
    }

    bool is_csqn() const { return method == "csqn-b" || method == "csqn-s"; }

    // target column budget for CT/BTREE merges: M for SR1, 2M for BFGS
    int reduce_target_cols() const {
        return method == "csqn-b" ? 2 * pair_budget : pair_budget;
    }

    void validate() const {
        method_enum();
        strategy_enum();
        y_mode_enum();
        optimizer_enum();
        if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
        if (strategy != "none" && !is_csqn())
            throw ConfigError("reduction strategies require a CSQN method");
        if (is_csqn() && pair_budget < 1) throw ConfigError("M must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1 || eval_batch < 1) throw ConfigError("batch sizes must be >= 1");
        if (curvature_batch < 1) throw ConfigError("curvature_batch must be >= 1");
        if (!(epsilon > 0.0) || !(kappa > 0.0) || !(fd_step > 0.0))
            throw ConfigError("epsilon, kappa and fd_step must be positive");
        if (dataset.task_count < 1) throw ConfigError("task_count must be >= 1");
        if (dataset.kind != "rotated_mnist" && dataset.kind != "permuted_mnist" &&
            dataset.kind != "synthetic")
            throw ConfigError("unknown dataset kind: " + dataset.kind);
        if (model.hidden.empty()) throw ConfigError("at least one hidden layer required");
        if (!(model.dropout >= 0.0 && model.dropout < 1.0))
            throw ConfigError("dropout must be in [0,1)");
    }
};

inline void to_json(json& j, const ExperimentConfig& c) {
    j = json{
        {"dataset",
         {{"kind", c.dataset.kind},
          {"task_count", c.dataset.task_count},
          {"degrees_per_task", c.dataset.degrees_per_task},
          {"data_dir", c.dataset.data_dir},
          {"train_cap", c.dataset.train_cap},
          {"val_cap", c.dataset.val_cap},
          {"perm_seed", c.dataset.perm_seed},
          {"split_seed", c.dataset.split_seed},
          {"synthetic",
           {{"task_count", c.dataset.synthetic.task_count},
            {"dim", c.dataset.synthetic.dim},
            {"classes", c.dataset.synthetic.classes},
            {"shift", c.dataset.synthetic.shift},
            {"n_train", c.dataset.synthetic.n_train},
            {"n_val", c.dataset.synthetic.n_val},
            {"n_test", c.dataset.synthetic.n_test}}}}},
        {"model", {{"hidden", c.model.hidden}, {"dropout", c.model.dropout}}},
        {"optimizer",
         {{"kind", c.optimizer.kind},
          {"lr", c.optimizer.lr},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"momentum", c.optimizer.momentum}}},
        {"method", c.method},
        {"strategy", c.strategy},
        {"M", c.pair_budget},
        {"lambda", c.lambda},
        {"epsilon", c.epsilon},
        {"kappa", c.kappa},
        {"fd_step", c.fd_step},
        {"y_mode", c.y_mode},
        {"curvature_batch", c.curvature_batch},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"eval_batch", c.eval_batch},
        {"seed", c.seed},
        {"task_order_shuffle", c.task_order_shuffle},
        {"out_dir", c.out_dir},
        {"save_state", c.save_state},
    };
}

inline void from_json(const json& j, ExperimentConfig& c) {
    const ExperimentConfig defaults;
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        c.dataset.kind = d.value("kind", defaults.dataset.kind);
        c.dataset.task_count = d.value("task_count", defaults.dataset.task_count);
        c.dataset.degrees_per_task =
            d.value("degrees_per_task", defaults.dataset.degrees_per_task);
        c.dataset.data_dir = d.value("data_dir", defaults.dataset.data_dir);
        c.dataset.train_cap = d.value("train_cap", defaults.dataset.train_cap);
        c.dataset.val_cap = d.value("val_cap", defaults.dataset.val_cap);
        c.dataset.perm_seed = d.value("perm_seed", defaults.dataset.perm_seed);
        c.dataset.split_seed = d.value("split_seed", defaults.dataset.split_seed);
        if (d.contains("synthetic")) {
            const json& s = d.at("synthetic");
            c.dataset.synthetic.task_count =
                s.value("task_count", c.dataset.task_count);
            c.dataset.synthetic.dim = s.value("dim", defaults.dataset.synthetic.dim);
            c.dataset.synthetic.classes =
                s.value("classes", defaults.dataset.synthetic.classes);
            c.dataset.synthetic.shift = s.value("shift", defaults.dataset.synthetic.shift);
            c.dataset.synthetic.n_train =
                s.value("n_train", defaults.dataset.synthetic.n_train);
            c.dataset.synthetic.n_val = s.value("n_val", defaults.dataset.synthetic.n_val);
            c.dataset.synthetic.n_test =
                s.value("n_test", defaults.dataset.synthetic.n_test);
        }
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        c.model.hidden = m.value("hidden", defaults.model.hidden);
        c.model.dropout = m.value("dropout", defaults.model.dropout);
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        c.optimizer.kind = o.value("kind", defaults.optimizer.kind);
        c.optimizer.lr = o.value("lr", defaults.optimizer.lr);
        c.optimizer.beta1 = o.value("beta1", defaults.optimizer.beta1);
        c.optimizer.beta2 = o.value("beta2", defaults.optimizer.beta2);
        c.optimizer.eps = o.value("eps", defaults.optimizer.eps);
        c.optimizer.momentum = o.value("momentum", defaults.optimizer.momentum);
    }
    c.method = j.value("method", defaults.method);
    c.strategy = j.value("strategy", defaults.strategy);
    c.pair_budget = j.value("M", defaults.pair_budget);
    c.lambda = j.value("lambda", defaults.lambda);
    c.epsilon = j.value("epsilon", defaults.epsilon);
    c.kappa = j.value("kappa", defaults.kappa);
    c.fd_step = j.value("fd_step", defaults.fd_step);
    c.y_mode = j.value("y_mode", defaults.y_mode);
    c.curvature_batch = j.value("curvature_batch", defaults.curvature_batch);
    c.epochs = j.value("epochs", defaults.epochs);
    c.batch_size = j.value("batch_size", defaults.batch_size);
    c.eval_batch = j.value("eval_batch", defaults.eval_batch);
    c.seed = j.value("seed", defaults.seed);
    c.task_order_shuffle = j.value("task_order_shuffle", defaults.task_order_shuffle);
    c.out_dir = j.value("out_dir", defaults.out_dir);
    c.save_state = j.value("save_state", defaults.save_state);
    // keep the nested synthetic task count in sync unless explicitly set
    if (!(j.contains("dataset") && j.at("dataset").contains("synthetic") &&
          j.at("dataset").at("synthetic").contains("task_count")))
        c.dataset.synthetic.task_count = c.dataset.task_count;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    ExperimentConfig c = j.get<ExperimentConfig>();
    c.validate();
    return c;
}

// Dotted-key override: "optimizer.lr=0.01"; the value is parsed as JSON when
// possible, otherwise taken as a string.
inline void apply_override(json& j, const std::string& spec) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like key=value: " + spec);
    const std::string path = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);

    json* cur = &j;
    size_t start = 0;
    while (true) {
        const size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw ConfigError("bad override key: " + path);
        if (dot == std::string::npos) {
            json parsed;
            try {
                parsed = json::parse(value);
            } catch (const json::exception&) {
                parsed = value;
            }
            (*cur)[key] = parsed;
            return;
        }
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

inline std::string resolve_data_dir(const ExperimentConfig& c) {
    if (!c.dataset.data_dir.empty()) return c.dataset.data_dir;
    if (const char* env = std::getenv("CSQN_DATA")) return env;
    return "data/mnist";
}

// FNV-1a over a canonical dump (object keys sorted by nlohmann); seed and
// output path do not contribute, so seed replicates share a hash.
inline std::string config_hash(const ExperimentConfig& c) {
    json j = c;
    j.erase("seed");
    j.erase("out_dir");
    const std::string s = j.dump();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace csqn::config

#endif  // CSQN_CONFIG_HPP
