// csqn: continual-learning experiments with quasi-Newton regularization.
//   run    - execute one experiment from a JSON config (+ dotted-key overrides)
//   sweep  - grid of runs over one config key, with a validation summary
//   report - aggregate finished runs into curves (CSV + SVG)

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "csqn/config.hpp"
#include "csqn/report.hpp"
#include "csqn/trainer.hpp"

namespace fs = std::filesystem;
using csqn::config::ExperimentConfig;
using json = nlohmann::json;

namespace {

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(
        std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string data_dir;
    int64_t seed = -1;
    int threads = 0;
};

ExperimentConfig build_config(const CommonFlags& flags) {
    json j;
    if (!flags.config_path.empty()) {
        std::ifstream is(flags.config_path);
        if (!is) throw csqn::ConfigError("cannot open config file: " + flags.config_path);
        try {
            is >> j;
        } catch (const json::exception& e) {
            throw csqn::ConfigError("config parse error in " + flags.config_path + ": " +
                                    e.what());
        }
    } else {
        j = json::object();
    }
    for (const std::string& ov : flags.overrides) csqn::config::apply_override(j, ov);
    ExperimentConfig cfg = j.get<ExperimentConfig>();
    if (flags.seed >= 0) cfg.seed = static_cast<uint64_t>(flags.seed);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (!flags.data_dir.empty()) cfg.dataset.data_dir = flags.data_dir;
    cfg.validate();
    return cfg;
}

void write_manifest(const ExperimentConfig& cfg, const std::string& started,
                    const std::string& finished) {
    json m;
    m["config_hash"] = csqn::config::config_hash(cfg);
    m["seed"] = cfg.seed;
    m["started_at"] = started;
    m["finished_at"] = finished;
    m["version"] = csqn::kVersionString;
    std::vector<std::string> artifacts = {"R.csv", "metrics.json", "model_final.ckpt"};
    if (cfg.save_state && cfg.method != "finetune") artifacts.push_back("state.bin");
    m["artifacts"] = artifacts;
    std::ofstream os(cfg.out_dir + "/manifest.json");
    os << m.dump(2) << "\n";
}

int cmd_run(const CommonFlags& flags) {
    ExperimentConfig cfg = build_config(flags);
    if (cfg.out_dir.empty())
        cfg.out_dir = "runs/run-" + csqn::config::config_hash(cfg) + "-s" +
                      std::to_string(cfg.seed);
    const std::string started = utc_now();
    const csqn::train::RunResult res = csqn::train::run_experiment(cfg);
    write_manifest(cfg, started, utc_now());

    std::printf("run finished: %s\n", cfg.out_dir.c_str());
    std::printf("  ACC %.4f", res.m.acc);
    if (res.m.bwt.has_value()) std::printf("  BWT %+.4f", *res.m.bwt);
    std::printf("  val %.4f\n", res.val_acc_final_mean);
    return 0;
}

struct GridSpec {
    std::string key;
    std::vector<std::string> values;
};

GridSpec parse_grid(const std::string& spec) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos || eq + 1 >= spec.size())
        throw csqn::ConfigError("grid must look like key=v1,v2,...: " + spec);
    GridSpec g;
    g.key = spec.substr(0, eq);
    std::string rest = spec.substr(eq + 1);
    size_t start = 0;
    while (start <= rest.size()) {
        const size_t comma = rest.find(',', start);
        const std::string v = rest.substr(start, comma - start);
        if (!v.empty()) g.values.push_back(v);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (g.values.empty()) throw csqn::ConfigError("grid has no values: " + spec);
    return g;
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

int cmd_sweep(const CommonFlags& flags, const std::string& grid_spec) {
    const GridSpec grid = parse_grid(grid_spec);

    // order points by numeric value so ties resolve toward the smaller one,
    // matching in-process validation selection
    std::vector<std::string> values = grid.values;
    bool numeric = true;
    std::vector<double> nums(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        try {
            size_t pos = 0;
            nums[i] = std::stod(values[i], &pos);
            if (pos != values[i].size()) numeric = false;
        } catch (...) {
            numeric = false;
        }
    }
    if (numeric) {
        std::vector<size_t> idx(values.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(),
                         [&](size_t a, size_t b) { return nums[a] < nums[b]; });
        std::vector<std::string> sorted;
        for (size_t i : idx) sorted.push_back(values[i]);
        values = sorted;
    }

    const ExperimentConfig base = build_config(flags);  // validates early
    std::string root = flags.out_dir;
    if (root.empty()) root = "runs/sweep-" + csqn::config::config_hash(base);
    fs::create_directories(root);

    struct Point {
        std::string value;
        std::string dir;
        double val_acc = 0.0;
        double acc = 0.0;
        json bwt;
        std::string error;
        int exit_code = 0;
    };
    std::vector<Point> points(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        points[i].value = values[i];
        points[i].dir = root + "/" + sanitize(grid.key) + "_" + sanitize(values[i]);
    }

    const int workers =
        std::max(1, std::min<int>(flags.threads > 0 ? flags.threads : 1,
                                  static_cast<int>(points.size())));
    std::atomic<size_t> next{0};
    auto work = [&]() {
#ifdef _OPENMP
        if (workers > 1) omp_set_num_threads(1);
#endif
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= points.size()) break;
            Point& p = points[i];
            try {
                CommonFlags pf = flags;
                pf.overrides.push_back(grid.key + "=" + p.value);
                ExperimentConfig cfg = build_config(pf);
                cfg.out_dir = p.dir;
                const std::string started = utc_now();
                const csqn::train::RunResult res = csqn::train::run_experiment(cfg);
                write_manifest(cfg, started, utc_now());
                p.val_acc = res.val_acc_final_mean;
                p.acc = res.m.acc;
                p.bwt = res.m.bwt.has_value() ? json(*res.m.bwt) : json(nullptr);
            } catch (const csqn::ConfigError& e) {
                p.error = e.what();
                p.exit_code = 2;
            } catch (const csqn::DataError& e) {
                p.error = e.what();
                p.exit_code = 3;
            } catch (const csqn::NumericalError& e) {
                p.error = e.what();
                p.exit_code = 4;
            } catch (const std::exception& e) {
                p.error = e.what();
                p.exit_code = 1;
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& th : pool) th.join();

    json summary;
    summary["key"] = grid.key;
    summary["points"] = json::array();
    int best = -1;
    for (size_t i = 0; i < points.size(); ++i) {
        const Point& p = points[i];
        json pj{{"value", p.value}, {"dir", p.dir}};
        if (p.error.empty()) {
            pj["val_acc_final_mean"] = p.val_acc;
            pj["acc"] = p.acc;
            pj["bwt"] = p.bwt;
            if (best < 0 || p.val_acc > points[best].val_acc) best = static_cast<int>(i);
        } else {
            pj["error"] = p.error;
        }
        summary["points"].push_back(pj);
    }
    if (best >= 0) {
        summary["winner"] = {{"value", points[best].value},
                             {"dir", points[best].dir},
                             {"val_acc_final_mean", points[best].val_acc}};
    }
    std::ofstream os(root + "/summary.json");
    os << summary.dump(2) << "\n";

    std::printf("sweep finished: %s\n", root.c_str());
    for (const Point& p : points) {
        if (p.error.empty())
            std::printf("  %s=%s  val %.4f  acc %.4f%s\n", grid.key.c_str(),
                        p.value.c_str(), p.val_acc, p.acc,
                        best >= 0 && points[best].value == p.value ? "  <- winner" : "");
        else
            std::printf("  %s=%s  FAILED: %s\n", grid.key.c_str(), p.value.c_str(),
                        p.error.c_str());
    }
    for (const Point& p : points)
        if (p.exit_code != 0) return p.exit_code;
    return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out_dir) {
    std::vector<csqn::report::RunRecord> runs;
    for (const std::string& d : dirs) runs.push_back(csqn::report::load_run(d));
    const std::vector<csqn::report::CurveGroup> groups = csqn::report::aggregate(runs);
    const std::string out = out_dir.empty() ? "." : out_dir;
    fs::create_directories(out);
    csqn::report::write_report_csv(out + "/report.csv", groups);
    csqn::report::write_report_svg(out + "/report.svg", groups);
    std::printf("report written: %s/report.csv, %s/report.svg\n", out.c_str(),
                out.c_str());
    for (const auto& g : groups)
        std::printf("  %-20s n=%d final avg acc %.4f\n", g.label.c_str(), g.runs,
                    g.mean.back());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual learning with sampled quasi-Newton regularization"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string grid_spec;
    std::vector<std::string> report_dirs;

    CLI::App* run = app.add_subcommand("run", "execute one experiment");
    run->add_option("--config", flags.config_path, "JSON config path");
    run->add_option("--set", flags.overrides, "config override key=value (repeatable)");
    run->add_option("--out", flags.out_dir, "output directory");
    run->add_option("--seed", flags.seed, "random seed");
    run->add_option("--threads", flags.threads, "worker threads");
    run->add_option("--data", flags.data_dir, "MNIST data directory (env CSQN_DATA)");

    CLI::App* sweep = app.add_subcommand("sweep", "run a config-key grid");
    sweep->add_option("--config", flags.config_path, "JSON config path");
    sweep->add_option("--grid", grid_spec, "grid spec, e.g. lambda=1e2,1e3,1e4")
        ->required();
    sweep->add_option("--set", flags.overrides, "config override key=value (repeatable)");
    sweep->add_option("--out", flags.out_dir, "output directory");
    sweep->add_option("--seed", flags.seed, "random seed");
    sweep->add_option("--threads", flags.threads, "parallel grid workers");
    sweep->add_option("--data", flags.data_dir, "MNIST data directory");

    CLI::App* report = app.add_subcommand("report", "aggregate finished runs");
    report->add_option("dirs", report_dirs, "run directories")->required();
    report->add_option("--out", flags.out_dir, "output directory for report files");

    CLI11_PARSE(app, argc, argv);

    try {
#ifdef _OPENMP
        if (flags.threads > 0 && !sweep->parsed()) omp_set_num_threads(flags.threads);
#endif
        if (run->parsed()) return cmd_run(flags);
        if (sweep->parsed()) return cmd_sweep(flags, grid_spec);
        return cmd_report(report_dirs, flags.out_dir);
    } catch (const csqn::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const csqn::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const csqn::NumericalError& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
