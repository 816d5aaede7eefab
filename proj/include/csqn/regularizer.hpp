#ifndef CSQN_REGULARIZER_HPP
#define CSQN_REGULARIZER_HPP

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "csqn/common.hpp"
#include "csqn/curvature.hpp"
#include "csqn/linalg.hpp"
#include "csqn/nn.hpp"

namespace csqn::reg {

enum class Method { Finetune, Ewc, CsqnBfgs, CsqnSr1 };
enum class Strategy { None, Ct, Btree, Mrt };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::Finetune: return "finetune";
        case Method::Ewc: return "ewc";
        case Method::CsqnBfgs: return "csqn-b";
        case Method::CsqnSr1: return "csqn-s";
    }
    return "?";
}

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::None: return "none";
        case Strategy::Ct: return "ct";
        case Strategy::Btree: return "btree";
        case Strategy::Mrt: return "mrt";
    }
    return "?";
}

struct StoredFactor {
    curvature::Factor factor;
    int level = 0;  // BTREE merge level
    int task_id = 0;
};

struct Penalty {
    double value = 0.0;
    std::vector<double> gradient;
};

// Everything persisted between tasks: the anchor, the accumulated Fisher
// diagonal and the strategy-dependent compact factors.
struct RegularizerState {
    Method method = Method::Ewc;
    Strategy strategy = Strategy::None;
    double lambda = 0.0;
    int reduce_target_cols = 0;  // c for CT/BTREE merges (M for SR1, 2M for BFGS)
    int tasks_done = 0;
    nn::ParamVector anchor;       // theta^(t)
    std::vector<double> b0_acc;   // sum of per-task Omegas
    std::vector<StoredFactor> factors;

    bool active() const { return tasks_done > 0 && method != Method::Finetune; }
};

inline RegularizerState make_state(Method method, Strategy strategy, double lambda,
                                   int reduce_target_cols = 0) {
    if (lambda < 0.0) throw ConfigError("regularizer: lambda must be >= 0");
    if (strategy != Strategy::None &&
        (method == Method::Ewc || method == Method::Finetune))
        throw ConfigError("regularizer: reduction strategies require CSQN");
    if ((strategy == Strategy::Ct || strategy == Strategy::Btree) &&
        reduce_target_cols <= 0)
        throw ConfigError("regularizer: CT/BTREE need a positive column target");
    RegularizerState st;
    st.method = method;
    st.strategy = strategy;
    st.lambda = lambda;
    st.reduce_target_cols = reduce_target_cols;
    return st;
}

namespace detail {

inline std::vector<double> displacement(const RegularizerState& st,
                                        const nn::ParamVector& theta) {
    if (theta.size() != st.anchor.size())
        throw DimensionError("penalty: theta/anchor dimension mismatch");
    std::vector<double> d(theta.size());
    for (size_t i = 0; i < theta.size(); ++i)
        d[i] = static_cast<double>(theta[i]) - static_cast<double>(st.anchor[i]);
    return d;
}

// (lambda/2) d^T (B0_acc (.) d) and lambda * B0_acc (.) d; the CSQN penalty
// reuses this exact routine so the zero-factor case degenerates bit-for-bit
// to EWC.
inline Penalty diagonal_penalty(const RegularizerState& st,
                                const std::vector<double>& d) {
    Penalty p;
    p.gradient.assign(d.size(), 0.0);
    double quad = 0.0;
    for (size_t i = 0; i < d.size(); ++i) {
        const double bd = st.b0_acc[i] * d[i];
        quad += d[i] * bd;
        p.gradient[i] = bd;
    }
    p.value = 0.5 * st.lambda * quad;
    for (double& g : p.gradient) g *= st.lambda;
    return p;
}

inline int factor_cols(const curvature::Factor& f) {
    if (std::holds_alternative<curvature::CompactBfgsFactor>(f))
        return std::get<curvature::CompactBfgsFactor>(f).u.cols();
    return std::get<curvature::LowRankFactor>(f).z.cols();
}

inline int factor_rows(const curvature::Factor& f) {
    if (std::holds_alternative<curvature::CompactBfgsFactor>(f))
        return std::get<curvature::CompactBfgsFactor>(f).u.rows();
    return std::get<curvature::LowRankFactor>(f).z.rows();
}

}  // namespace detail

// Eq. 6 penalty: value = (lambda/2) sum_i (sum_j Omega^(j))_i (theta_i - anchor_i)^2.
inline Penalty ewc_penalty(const RegularizerState& st, const nn::ParamVector& theta) {
    if (st.b0_acc.empty())
        throw Error("ewc_penalty: no completed task recorded");
    return detail::diagonal_penalty(st, detail::displacement(st, theta));
}

// Eq. 11 penalty with the accumulated-B0 decomposition: the diagonal term is
// exactly EWC's loss, each stored factor contributes its low-rank correction.
inline Penalty csqn_penalty(const RegularizerState& st, const nn::ParamVector& theta) {
    if (st.method != Method::CsqnBfgs && st.method != Method::CsqnSr1)
        throw Error("csqn_penalty: state method is not CSQN");
    if (st.b0_acc.empty())
        throw Error("csqn_penalty: no completed task recorded");

    const std::vector<double> d = detail::displacement(st, theta);
    Penalty p = detail::diagonal_penalty(st, d);
    if (st.factors.empty()) return p;

    std::vector<double> corr(d.size(), 0.0);
    for (const StoredFactor& sf : st.factors) {
        if (detail::factor_cols(sf.factor) > 0 &&
            detail::factor_rows(sf.factor) != static_cast<int>(d.size()))
            throw DimensionError("csqn_penalty: factor/anchor dimension mismatch");
        curvature::add_correction_matvec(sf.factor, d.data(), corr.data());
    }
    double cq = 0.0;
    for (size_t i = 0; i < d.size(); ++i) cq += d[i] * corr[i];
    p.value += 0.5 * st.lambda * cq;
    for (size_t i = 0; i < d.size(); ++i) p.gradient[i] += st.lambda * corr[i];
    return p;
}

inline Penalty penalty(const RegularizerState& st, const nn::ParamVector& theta) {
    if (st.method == Method::Ewc) return ewc_penalty(st, theta);
    return csqn_penalty(st, theta);
}

// Concatenates the Z factors to M_b columns, compresses back to c columns via
// the Gram-route SVD and rescales by sqrt(M_b/M_a) to compensate for the
// dropped regularization energy. No-op (scale 1) when M_b <= c.
inline curvature::LowRankFactor reduce_ct(const curvature::LowRankFactor& z_prev,
                                          const curvature::LowRankFactor& z_new,
                                          int target_cols) {
    const int rows = z_prev.empty() ? detail::factor_rows(curvature::Factor(z_new))
                                    : z_prev.z.rows();
    const int total = (z_prev.empty() ? 0 : z_prev.z.cols()) +
                      (z_new.empty() ? 0 : z_new.z.cols());

    curvature::LowRankFactor out;
    out.clamped = z_prev.clamped || z_new.clamped;
    out.provenance = z_prev.provenance;
    out.provenance.insert(out.provenance.end(), z_new.provenance.begin(),
                          z_new.provenance.end());
    if (total == 0) return out;

    linalg::DenseMatrix concat(rows, total);
    for (int i = 0; i < rows; ++i) {
        double* row = concat.row(i);
        int col = 0;
        if (!z_prev.empty())
            for (int j = 0; j < z_prev.z.cols(); ++j) row[col++] = z_prev.z(i, j);
        if (!z_new.empty())
            for (int j = 0; j < z_new.z.cols(); ++j) row[col++] = z_new.z(i, j);
    }

    if (total <= target_cols) {
        out.z = std::move(concat);
        return out;
    }

    out.z = linalg::gram_thin_svd(concat, target_cols);
    const double scale = std::sqrt(static_cast<double>(total) /
                                   static_cast<double>(target_cols));
    for (double& v : out.z.data()) v *= scale;
    return out;
}

// Binomial-counter merge discipline: push at level 0, merge equal-level
// neighbours, so the stack holds popcount(T) factors after T tasks.
inline void reduce_btree(std::vector<StoredFactor>& stack,
                         curvature::LowRankFactor z_new, int target_cols,
                         int task_id) {
    stack.push_back(StoredFactor{curvature::Factor(std::move(z_new)), 0, task_id});
    while (stack.size() >= 2 &&
           stack[stack.size() - 1].level == stack[stack.size() - 2].level) {
        StoredFactor top = std::move(stack.back());
        stack.pop_back();
        StoredFactor second = std::move(stack.back());
        stack.pop_back();
        curvature::LowRankFactor merged =
            reduce_ct(std::get<curvature::LowRankFactor>(second.factor),
                      std::get<curvature::LowRankFactor>(top.factor), target_cols);
        stack.push_back(StoredFactor{curvature::Factor(std::move(merged)),
                                     top.level + 1, top.task_id});
    }
}

// Post-task bookkeeping: replace the anchor, accumulate the Fisher diagonal
// and store or merge the new factor per strategy.
inline void finish_task(RegularizerState& st, const nn::ParamVector& theta_t,
                        const std::vector<double>& omega_t,
                        std::optional<curvature::Factor> new_factor, int task_id) {
    st.anchor = theta_t;
    if (st.b0_acc.empty()) st.b0_acc.assign(omega_t.size(), 0.0);
    if (st.b0_acc.size() != omega_t.size())
        throw DimensionError("finish_task: Omega length mismatch");
    for (size_t i = 0; i < omega_t.size(); ++i) st.b0_acc[i] += omega_t[i];
    st.tasks_done += 1;

    if (st.method == Method::Ewc || st.method == Method::Finetune) return;
    if (!new_factor.has_value())
        throw Error("finish_task: CSQN method requires a curvature factor");

    switch (st.strategy) {
        case Strategy::None:
            st.factors.push_back(StoredFactor{std::move(*new_factor), 0, task_id});
            break;
        case Strategy::Mrt:
            st.factors.clear();
            st.factors.push_back(StoredFactor{std::move(*new_factor), 0, task_id});
            break;
        case Strategy::Ct: {
            curvature::LowRankFactor z_new =
                std::get<curvature::LowRankFactor>(std::move(*new_factor));
            curvature::LowRankFactor prev;
            if (!st.factors.empty())
                prev = std::get<curvature::LowRankFactor>(std::move(st.factors[0].factor));
            curvature::LowRankFactor merged =
                reduce_ct(prev, z_new, st.reduce_target_cols);
            st.factors.clear();
            st.factors.push_back(
                StoredFactor{curvature::Factor(std::move(merged)), 0, task_id});
            break;
        }
        case Strategy::Btree:
            reduce_btree(st.factors,
                         std::get<curvature::LowRankFactor>(std::move(*new_factor)),
                         st.reduce_target_cols, task_id);
            break;
    }
}

struct MemoryCost {
    int64_t factor_columns = 0;  // stored N-vectors in factors
    int diagonal_count = 0;      // B0 accumulator
    int factor_count = 0;
};

inline MemoryCost strategy_memory_cost(const RegularizerState& st) {
    MemoryCost mc;
    for (const StoredFactor& f : st.factors)
        mc.factor_columns += detail::factor_cols(f.factor);
    mc.diagonal_count = st.b0_acc.empty() ? 0 : 1;
    mc.factor_count = static_cast<int>(st.factors.size());
    return mc;
}

// --- persistence ------------------------------------------------------------

inline void save_state(const std::string& path, const RegularizerState& st) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open state file for writing: " + path);
    os.write("CSQNSTAT", 8);
    io::write_le<uint32_t>(os, 1u);
    io::write_le<uint8_t>(os, static_cast<uint8_t>(st.method));
    io::write_le<uint8_t>(os, static_cast<uint8_t>(st.strategy));
    io::write_le<double>(os, st.lambda);
    io::write_le<uint32_t>(os, static_cast<uint32_t>(st.reduce_target_cols));
    io::write_le<uint32_t>(os, static_cast<uint32_t>(st.tasks_done));
    io::write_le<uint64_t>(os, st.anchor.size());
    for (float v : st.anchor) io::write_le<float>(os, v);
    io::write_le<uint64_t>(os, st.b0_acc.size());
    for (double v : st.b0_acc) io::write_le<double>(os, v);
    io::write_le<uint32_t>(os, static_cast<uint32_t>(st.factors.size()));
    for (const StoredFactor& f : st.factors) {
        io::write_le<int32_t>(os, f.level);
        io::write_le<int32_t>(os, f.task_id);
        curvature::save_factor(os, f.factor, static_cast<uint64_t>(f.task_id));
    }
    if (!os) throw DataError("state write failed: " + path);
}

inline RegularizerState load_state(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open state file: " + path);
    char magic[8];
    io::read_bytes(is, magic, 8);
    if (std::string(magic, 8) != "CSQNSTAT") throw DataError("bad state magic: " + path);
    if (io::read_le<uint32_t>(is) != 1u) throw DataError("unsupported state version");
    RegularizerState st;
    st.method = static_cast<Method>(io::read_le<uint8_t>(is));
    st.strategy = static_cast<Strategy>(io::read_le<uint8_t>(is));
    st.lambda = io::read_le<double>(is);
    st.reduce_target_cols = static_cast<int>(io::read_le<uint32_t>(is));
    st.tasks_done = static_cast<int>(io::read_le<uint32_t>(is));
    const uint64_t an = io::read_le<uint64_t>(is);
    st.anchor.resize(an);
    for (uint64_t i = 0; i < an; ++i) st.anchor[i] = io::read_le<float>(is);
    const uint64_t bn = io::read_le<uint64_t>(is);
    st.b0_acc.resize(bn);
    for (uint64_t i = 0; i < bn; ++i) st.b0_acc[i] = io::read_le<double>(is);
    const uint32_t fc = io::read_le<uint32_t>(is);
    for (uint32_t i = 0; i < fc; ++i) {
        StoredFactor f;
        f.level = io::read_le<int32_t>(is);
        f.task_id = io::read_le<int32_t>(is);
        f.factor = curvature::load_factor(is).factor;
        st.factors.push_back(std::move(f));
    }
    return st;
}

}  // namespace csqn::reg

#endif  // CSQN_REGULARIZER_HPP
