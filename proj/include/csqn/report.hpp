#ifndef CSQN_REPORT_HPP
#define CSQN_REPORT_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "csqn/config.hpp"
#include "csqn/trainer.hpp"

namespace csqn::report {

struct RunRecord {
    std::string dir;
    config::ExperimentConfig cfg;
    std::string hash;
    train::EvalMatrix r;
    int completed = 0;
};

inline RunRecord load_run(const std::string& dir) {
    RunRecord rec;
    rec.dir = dir;
    std::ifstream ms(dir + "/metrics.json");
    if (!ms) throw DataError("metrics.json not found in run dir: " + dir);
    nlohmann::json j;
    try {
        ms >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad metrics.json in " + dir + ": " + e.what());
    }
    if (!j.contains("config")) throw DataError("metrics.json has no config echo: " + dir);
    rec.cfg = j.at("config").get<config::ExperimentConfig>();
    rec.hash = config::config_hash(rec.cfg);
    const train::LoadedEvalMatrix lm = train::read_r_csv(dir + "/R.csv");
    rec.r = lm.r;
    rec.completed = lm.completed;
    return rec;
}

inline std::string run_label(const config::ExperimentConfig& cfg) {
    std::string label = cfg.method;
    if (cfg.is_csqn()) label += "(" + std::to_string(cfg.pair_budget) + ")";
    if (cfg.strategy != "none") label += "-" + cfg.strategy;
    return label;
}

// Average accuracy over tasks seen so far, after each task.
inline std::vector<double> avg_acc_curve(const train::EvalMatrix& r, int completed) {
    std::vector<double> curve(completed);
    for (int i = 1; i <= completed; ++i) {
        double s = 0.0;
        for (int j = 1; j <= i; ++j) s += r.at(i, j);
        curve[i - 1] = s / i;
    }
    return curve;
}

struct CurveGroup {
    std::string label;
    std::string hash;
    int runs = 0;
    std::vector<double> mean;
    std::vector<double> stddev;  // sample standard deviation; 0 for a single run
};

// Groups seed replicates by config hash (the hash excludes the seed).
inline std::vector<CurveGroup> aggregate(const std::vector<RunRecord>& runs) {
    if (runs.empty()) throw ConfigError("report: no runs given");
    const int t = runs.front().r.task_count;
    for (const RunRecord& r : runs) {
        if (r.r.task_count != t)
            throw ConfigError("report: runs have different task counts (" + r.dir + ")");
        if (r.completed != t)
            throw ConfigError("report: incomplete run: " + r.dir);
    }

    std::map<std::string, std::vector<const RunRecord*>> by_hash;
    std::vector<std::string> order;  // first-seen order
    for (const RunRecord& r : runs) {
        if (by_hash.find(r.hash) == by_hash.end()) order.push_back(r.hash);
        by_hash[r.hash].push_back(&r);
    }

    std::vector<CurveGroup> groups;
    for (const std::string& h : order) {
        const auto& members = by_hash[h];
        CurveGroup g;
        g.hash = h;
        g.label = run_label(members.front()->cfg);
        g.runs = static_cast<int>(members.size());
        g.mean.assign(t, 0.0);
        g.stddev.assign(t, 0.0);
        std::vector<std::vector<double>> curves;
        for (const RunRecord* r : members) curves.push_back(avg_acc_curve(r->r, t));
        for (int i = 0; i < t; ++i) {
            double m = 0.0;
            for (const auto& c : curves) m += c[i];
            m /= curves.size();
            g.mean[i] = m;
            if (curves.size() > 1) {
                double ss = 0.0;
                for (const auto& c : curves) ss += (c[i] - m) * (c[i] - m);
                g.stddev[i] = std::sqrt(ss / (curves.size() - 1));
            }
        }
        groups.push_back(std::move(g));
    }
    return groups;
}

inline void write_report_csv(const std::string& path,
                             const std::vector<CurveGroup>& groups) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write: " + path);
    os << "task";
    for (const CurveGroup& g : groups)
        os << ",acc_mean_" << g.label << ",acc_std_" << g.label;
    os << "\n";
    const size_t t = groups.front().mean.size();
    char buf[32];
    for (size_t i = 0; i < t; ++i) {
        os << (i + 1);
        for (const CurveGroup& g : groups) {
            std::snprintf(buf, sizeof(buf), "%.6f", g.mean[i]);
            os << "," << buf;
            std::snprintf(buf, sizeof(buf), "%.6f", g.stddev[i]);
            os << "," << buf;
        }
        os << "\n";
    }
}

// Minimal hand-written SVG line chart; the CSVs are the ground truth, this is
// a diagnostic view.
inline void write_report_svg(const std::string& path,
                             const std::vector<CurveGroup>& groups) {
    const int t = static_cast<int>(groups.front().mean.size());
    const double w = 640, h = 420, ml = 60, mr = 150, mt = 30, mb = 50;
    const double pw = w - ml - mr, ph = h - mt - mb;

    double lo = 1.0, hi = 0.0;
    for (const CurveGroup& g : groups)
        for (int i = 0; i < t; ++i) {
            lo = std::min(lo, g.mean[i] - g.stddev[i]);
            hi = std::max(hi, g.mean[i] + g.stddev[i]);
        }
    lo = std::max(0.0, lo - 0.02);
    hi = std::min(1.0, hi + 0.02);
    if (hi - lo < 1e-9) hi = lo + 0.01;

    auto px = [&](int i) { return ml + (t == 1 ? pw / 2 : pw * i / (t - 1)); };
    auto py = [&](double v) { return mt + ph * (1.0 - (v - lo) / (hi - lo)); };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

    std::ofstream os(path);
    if (!os) throw DataError("cannot write: " + path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\""
       << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
       << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
       << mt + ph << "\" stroke=\"black\"/>\n";

    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4;
        os << "<text x=\"" << ml - 8 << "\" y=\"" << py(v) + 4
           << "\" text-anchor=\"end\">" << static_cast<int>(std::lround(v * 100))
           << "%</text>\n";
        os << "<line x1=\"" << ml << "\" y1=\"" << py(v) << "\" x2=\"" << ml + pw
           << "\" y2=\"" << py(v) << "\" stroke=\"#dddddd\"/>\n";
    }
    for (int i = 0; i < t; ++i)
        os << "<text x=\"" << px(i) << "\" y=\"" << mt + ph + 20
           << "\" text-anchor=\"middle\">" << (i + 1) << "</text>\n";
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << h - 12
       << "\" text-anchor=\"middle\">tasks learned</text>\n";
    os << "<text x=\"16\" y=\"" << mt + ph / 2
       << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << mt + ph / 2
       << ")\">average accuracy</text>\n";

    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const CurveGroup& g = groups[gi];
        const char* color = palette[gi % 8];
        os << "<polyline fill=\"none\" stroke=\"" << color
           << "\" stroke-width=\"2\" points=\"";
        for (int i = 0; i < t; ++i) os << px(i) << "," << py(g.mean[i]) << " ";
        os << "\"/>\n";
        for (int i = 0; i < t; ++i) {
            if (g.stddev[i] > 0.0)
                os << "<line x1=\"" << px(i) << "\" y1=\"" << py(g.mean[i] - g.stddev[i])
                   << "\" x2=\"" << px(i) << "\" y2=\"" << py(g.mean[i] + g.stddev[i])
                   << "\" stroke=\"" << color << "\"/>\n";
            os << "<circle cx=\"" << px(i) << "\" cy=\"" << py(g.mean[i])
               << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        const double ly = mt + 16 + 18 * gi;
        os << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly << "\" x2=\""
           << ml + pw + 34 << "\" y2=\"" << ly << "\" stroke=\"" << color
           << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << ml + pw + 40 << "\" y=\"" << ly + 4 << "\">" << g.label
           << " (n=" << g.runs << ")</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace csqn::report

#endif  // CSQN_REPORT_HPP
