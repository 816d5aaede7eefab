#ifndef CSQN_CURVATURE_HPP
#define CSQN_CURVATURE_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "csqn/common.hpp"
#include "csqn/linalg.hpp"
#include "csqn/rng.hpp"

namespace csqn::curvature {

// Diagonal of the empirical Fisher; doubles as B0 and as the sampling
// covariance source.
using FisherDiag = std::vector<double>;

enum class QnKind { Bfgs, Sr1 };
enum class YMode { FdHvp, GradDiff };

struct SamplingConfig {
    int pair_budget = 10;   // M, requested pair count
    double epsilon = 1e-4;  // covariance damping
    double kappa = 1e-12;   // acceptance threshold
    double fd_step = 1e-3;  // h, finite-difference step for Hessian-vector products
    YMode y_mode = YMode::FdHvp;
    int batch_size = 2048;  // curvature batch size

    void validate() const {
        if (pair_budget < 1) throw ConfigError("sampling: M must be >= 1");
        if (!(epsilon > 0.0)) throw ConfigError("sampling: epsilon must be positive");
        if (!(kappa > 0.0)) throw ConfigError("sampling: kappa must be positive");
        if (!(fd_step > 0.0)) throw ConfigError("sampling: fd step must be positive");
        if (batch_size < 1) throw ConfigError("sampling: batch size must be >= 1");
    }
};

// Accepted (s, y) column sets from the sampling loop.
struct CurvaturePairs {
    linalg::DenseMatrix s;  // N x m
    linalg::DenseMatrix y;  // N x m

    int count() const { return s.cols(); }
};

// Sigma_i = 1 / (Omega_i + eps * max(Omega)).
inline std::vector<double> sampling_covariance(const FisherDiag& omega, double epsilon) {
    double mx = 0.0;
    for (double v : omega) mx = std::max(mx, v);
    if (mx <= 0.0)
        throw NumericalError("sampling_covariance: Fisher diagonal is all zero");
    const double damp = epsilon * mx;
    std::vector<double> sigma(omega.size());
    for (size_t i = 0; i < omega.size(); ++i) sigma[i] = 1.0 / (omega[i] + damp);
    return sigma;
}

inline bool bfgs_accepts(const std::vector<double>& s, const std::vector<double>& y,
                         double kappa) {
    double sy = 0.0, ss = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
        sy += s[i] * y[i];
        ss += s[i] * s[i];
    }
    return sy > kappa * ss;
}

inline bool sr1_accepts(const std::vector<double>& s, const std::vector<double>& y,
                        const FisherDiag& b0, double kappa) {
    double sv = 0.0, ss = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
        sv += s[i] * (y[i] - b0[i] * s[i]);
        ss += s[i] * s[i];
    }
    return std::abs(sv) >= kappa * ss;
}

using GradFn = std::function<std::vector<double>(const std::vector<double>&)>;

// Draws s via x~ ~ N(theta*, Sigma) and forms y either as a directional
// finite difference of gradients (invariant to the scale of Sigma) or as the
// plain gradient difference. Rejected pairs are resampled, up to 3M attempts;
// attempt i uses its own substream so results do not depend on the rejection
// history or thread scheduling.
inline CurvaturePairs sample_sy_with_cov(const std::vector<double>& theta_star,
                                         const SamplingConfig& cfg,
                                         const FisherDiag& omega,
                                         const std::vector<double>& sigma,
                                         const GradFn& grad_fn, QnKind kind,
                                         uint64_t seed,
                                         const std::vector<double>* g0_opt = nullptr) {
    cfg.validate();
    const size_t n = theta_star.size();
    if (omega.size() != n || sigma.size() != n)
        throw DimensionError("sample_sy: diagonal length mismatch");

    std::vector<double> stddev(n);
    for (size_t i = 0; i < n; ++i) stddev[i] = std::sqrt(sigma[i]);

    std::vector<double> g0 = g0_opt ? *g0_opt : grad_fn(theta_star);

    std::vector<std::vector<double>> s_cols, y_cols;
    const int budget = 3 * cfg.pair_budget;
    std::vector<double> probe(n), s(n);

    for (int attempt = 0; attempt < budget &&
                          static_cast<int>(s_cols.size()) < cfg.pair_budget;
         ++attempt) {
        RngStream rng = RngStream::derive(seed, StreamId::Curvature,
                                          {static_cast<uint64_t>(attempt)});
        double norm_sq = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double delta = stddev[i] * rng.normal();
            s[i] = -delta;  // s = theta* - x~
            norm_sq += s[i] * s[i];
        }
        const double norm = std::sqrt(norm_sq);
        if (!(norm > 0.0)) continue;

        std::vector<double> y(n);
        if (cfg.y_mode == YMode::FdHvp) {
            const double step = cfg.fd_step;
            for (size_t i = 0; i < n; ++i)
                probe[i] = theta_star[i] + step * (s[i] / norm);
            const std::vector<double> gp = grad_fn(probe);
            const double scale = norm / step;
            for (size_t i = 0; i < n; ++i) y[i] = (gp[i] - g0[i]) * scale;
        } else {
            for (size_t i = 0; i < n; ++i) probe[i] = theta_star[i] - s[i];  // = x~
            const std::vector<double> gt = grad_fn(probe);
            for (size_t i = 0; i < n; ++i) y[i] = g0[i] - gt[i];
        }

        const bool ok = (kind == QnKind::Bfgs) ? bfgs_accepts(s, y, cfg.kappa)
                                               : sr1_accepts(s, y, omega, cfg.kappa);
        if (!ok) continue;
        s_cols.push_back(s);
        y_cols.push_back(std::move(y));
    }

    if (s_cols.empty())
        throw NumericalError("sample_sy: no pair accepted after " +
                             std::to_string(budget) + " attempts");

    const int m = static_cast<int>(s_cols.size());
    CurvaturePairs pairs{linalg::DenseMatrix(static_cast<int>(n), m),
                         linalg::DenseMatrix(static_cast<int>(n), m)};
    for (int j = 0; j < m; ++j)
        for (size_t i = 0; i < n; ++i) {
            pairs.s(static_cast<int>(i), j) = s_cols[j][i];
            pairs.y(static_cast<int>(i), j) = y_cols[j][i];
        }
    return pairs;
}

inline CurvaturePairs sample_sy(const std::vector<double>& theta_star,
                                const SamplingConfig& cfg, const FisherDiag& omega,
                                const GradFn& grad_fn, QnKind kind, uint64_t seed,
                                const std::vector<double>* g0_opt = nullptr) {
    return sample_sy_with_cov(theta_star, cfg, omega,
                              sampling_covariance(omega, cfg.epsilon), grad_fn, kind,
                              seed, g0_opt);
}

namespace detail {

// C(a,b) = sum_i lhs(i,a) * w_i * rhs(i,b); w == nullptr means weights of 1.
inline linalg::DenseMatrix weighted_cross_gram(const linalg::DenseMatrix& lhs,
                                               const linalg::DenseMatrix& rhs,
                                               const double* w) {
    linalg::DenseMatrix c(lhs.cols(), rhs.cols());
#pragma omp parallel for schedule(static)
    for (int a = 0; a < lhs.cols(); ++a) {
        double* ca = c.row(a);
        for (int i = 0; i < lhs.rows(); ++i) {
            const double f = w ? lhs(i, a) * w[i] : lhs(i, a);
            const double* ri = rhs.row(i);
            for (int b = 0; b < rhs.cols(); ++b) ca[b] += f * ri[b];
        }
    }
    return c;
}

inline double eig_cond(const linalg::SymEig& eig) {
    double lo = HUGE_VAL, hi = 0.0;
    for (double v : eig.eigenvalues) {
        lo = std::min(lo, std::abs(v));
        hi = std::max(hi, std::abs(v));
    }
    if (lo == 0.0) return HUGE_VAL;
    return hi / lo;
}

// x := M^-1 t through the eigendecomposition (pseudo-solve).
inline std::vector<double> eig_solve(const linalg::SymEig& eig,
                                     const std::vector<double>& t) {
    const int m = static_cast<int>(eig.eigenvalues.size());
    std::vector<double> tmp(m, 0.0), out(m, 0.0);
    for (int j = 0; j < m; ++j) {
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += eig.eigenvectors(i, j) * t[i];
        tmp[j] = s / eig.eigenvalues[j];
    }
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += eig.eigenvectors(i, j) * tmp[j];
        out[i] = s;
    }
    return out;
}

constexpr double kCondLimit = 1e12;

}  // namespace detail

// Compact form of m BFGS updates: B = B0 - U mid^-1 U^T with U = [B0 S | Y]
// and mid = [[S^T B0 S, L], [L^T, -D]].
struct CompactBfgsFactor {
    linalg::DenseMatrix u;    // N x 2m
    linalg::DenseMatrix mid;  // 2m x 2m
    linalg::SymEig mid_eig;
    std::vector<double> b0;  // diagonal at build time; empty on factors loaded from disk
    int pair_count = 0;

    bool empty() const { return pair_count == 0; }
};

// Low-rank PSD correction: B = B0 + Z Z^T.
struct LowRankFactor {
    linalg::DenseMatrix z;  // N x c
    bool clamped = false;
    std::vector<int> provenance;  // task id(s)

    bool empty() const { return z.cols() == 0; }
};

using Factor = std::variant<CompactBfgsFactor, LowRankFactor>;

inline CompactBfgsFactor build_bfgs(const FisherDiag& b0, const CurvaturePairs& pairs) {
    const int m = pairs.count();
    CompactBfgsFactor f;
    f.b0 = b0;
    f.pair_count = m;
    if (m == 0) return f;

    const int n = pairs.s.rows();
    if (static_cast<size_t>(n) != b0.size())
        throw DimensionError("build_bfgs: B0 length mismatch");

    f.u = linalg::DenseMatrix(n, 2 * m);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        double* ui = f.u.row(i);
        const double* si = pairs.s.row(i);
        const double* yi = pairs.y.row(i);
        for (int j = 0; j < m; ++j) {
            ui[j] = b0[i] * si[j];
            ui[m + j] = yi[j];
        }
    }

    const linalg::DenseMatrix stb0s =
        detail::weighted_cross_gram(pairs.s, pairs.s, b0.data());
    const linalg::DenseMatrix sty = detail::weighted_cross_gram(pairs.s, pairs.y, nullptr);

    f.mid = linalg::DenseMatrix(2 * m, 2 * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            f.mid(i, j) = stb0s(i, j);
            const double lij = (i > j) ? sty(i, j) : 0.0;  // L strictly lower
            f.mid(i, m + j) = lij;
            f.mid(m + j, i) = lij;
            f.mid(m + i, m + j) = (i == j) ? -sty(i, i) : 0.0;  // -D
        }

    f.mid_eig = linalg::sym_eig(f.mid);
    if (detail::eig_cond(f.mid_eig) > detail::kCondLimit)
        throw NumericalError("build_bfgs: singular middle matrix with " +
                             std::to_string(m) + " pairs");
    return f;
}

// SR1 raw factors: B = B0 + X A^-1 X^T with X = Y - B0 S and
// A = D + L + L^T - S^T B0 S.
struct Sr1Factor {
    linalg::DenseMatrix x;  // N x m
    linalg::DenseMatrix a;  // m x m symmetric
};

inline Sr1Factor build_sr1(const FisherDiag& b0, const CurvaturePairs& pairs) {
    const int m = pairs.count();
    Sr1Factor f;
    if (m == 0) return f;

    const int n = pairs.s.rows();
    if (static_cast<size_t>(n) != b0.size())
        throw DimensionError("build_sr1: B0 length mismatch");

    f.x = linalg::DenseMatrix(n, m);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        double* xi = f.x.row(i);
        const double* si = pairs.s.row(i);
        const double* yi = pairs.y.row(i);
        for (int j = 0; j < m; ++j) xi[j] = yi[j] - b0[i] * si[j];
    }

    const linalg::DenseMatrix stb0s =
        detail::weighted_cross_gram(pairs.s, pairs.s, b0.data());
    const linalg::DenseMatrix sty = detail::weighted_cross_gram(pairs.s, pairs.y, nullptr);

    f.a = linalg::DenseMatrix(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const double dl = (i > j) ? sty(i, j) : (i < j) ? sty(j, i) : sty(i, i);
            f.a(i, j) = dl - stb0s(i, j);
        }

    if (detail::eig_cond(linalg::sym_eig(f.a)) > detail::kCondLimit)
        throw NumericalError("build_sr1: singular A matrix with " + std::to_string(m) +
                             " pairs");
    return f;
}

// Z such that Z Z^T equals (the PSD part of) X A^-1 X^T: Cholesky of A^-1
// when it is positive definite, otherwise the eigenvalue-clamped EVD + QR
// route. Either way Z Z^T is positive semidefinite.
inline LowRankFactor z_from_sr1(const linalg::DenseMatrix& x,
                                const linalg::DenseMatrix& a) {
    LowRankFactor out;
    const int m = a.cols();
    if (m == 0) return out;

    const linalg::SymEig eig = linalg::sym_eig(a);
    for (double g : eig.eigenvalues)
        if (g == 0.0) throw NumericalError("z_from_sr1: A is singular");

    std::vector<double> gamma(m);  // eigenvalues of A^-1
    bool pd = true;
    for (int i = 0; i < m; ++i) {
        gamma[i] = 1.0 / eig.eigenvalues[i];
        if (gamma[i] <= 0.0) pd = false;
    }

    if (pd) {
        linalg::DenseMatrix ainv(m, m);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                double s = 0.0;
                for (int k = 0; k < m; ++k)
                    s += eig.eigenvectors(i, k) * gamma[k] * eig.eigenvectors(j, k);
                ainv(i, j) = s;
            }
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < i; ++j) {
                const double v = 0.5 * (ainv(i, j) + ainv(j, i));
                ainv(i, j) = v;
                ainv(j, i) = v;
            }
        if (auto l = linalg::cholesky(ainv)) {
            out.z = linalg::matmul(x, *l);
            out.clamped = false;
            return out;
        }
        // fall through to the clamped route when Cholesky loses positivity
    }

    linalg::DenseMatrix vg(m, m);  // (V sqrt(Gamma'))^T
    for (int i = 0; i < m; ++i) {
        const double root = gamma[i] > 0.0 ? std::sqrt(gamma[i]) : 0.0;
        for (int j = 0; j < m; ++j) vg(i, j) = root * eig.eigenvectors(j, i);
    }
    const linalg::QrResult f = linalg::qr(vg);
    out.z = linalg::matmul(x, linalg::transpose(f.r));
    out.clamped = true;
    return out;
}

inline LowRankFactor z_from_sr1(const Sr1Factor& f) { return z_from_sr1(f.x, f.a); }

// PSD projection of the BFGS correction -U mid^-1 U^T through its 2m x 2m
// core; used when a reduction strategy needs a Z-form factor for BFGS.
inline LowRankFactor bfgs_to_psd_z(const CompactBfgsFactor& f) {
    LowRankFactor out;
    if (f.empty()) return out;
    const int c2 = f.u.cols();

    const linalg::QrResult qru = linalg::qr(f.u);

    // K = -mid^-1 via its eigendecomposition
    linalg::DenseMatrix k(c2, c2);
    for (int i = 0; i < c2; ++i)
        for (int j = 0; j < c2; ++j) {
            double s = 0.0;
            for (int t = 0; t < c2; ++t)
                s += f.mid_eig.eigenvectors(i, t) * (1.0 / f.mid_eig.eigenvalues[t]) *
                     f.mid_eig.eigenvectors(j, t);
            k(i, j) = -s;
        }

    linalg::DenseMatrix core =
        linalg::matmul(linalg::matmul(qru.r, k), linalg::transpose(qru.r));
    for (int i = 0; i < c2; ++i)
        for (int j = 0; j < i; ++j) {
            const double v = 0.5 * (core(i, j) + core(j, i));
            core(i, j) = v;
            core(j, i) = v;
        }
    const linalg::SymEig eig = linalg::sym_eig(core);

    std::vector<int> keep;
    for (int i = c2 - 1; i >= 0; --i) {  // descending eigenvalue order
        if (eig.eigenvalues[i] > 0.0) keep.push_back(i);
        if (eig.eigenvalues[i] < 0.0) out.clamped = true;
    }
    if (keep.empty()) return out;

    linalg::DenseMatrix g(c2, static_cast<int>(keep.size()));
    for (size_t j = 0; j < keep.size(); ++j) {
        const double root = std::sqrt(eig.eigenvalues[keep[j]]);
        for (int i = 0; i < c2; ++i)
            g(i, static_cast<int>(j)) = root * eig.eigenvectors(i, keep[j]);
    }
    out.z = linalg::matmul(qru.q, g);
    return out;
}

// --- matvec / quadratic form against the implicit Hessians -----------------

// out += scale * Z (Z^T v)
inline void add_correction_matvec(const LowRankFactor& f, const double* v,
                                  double* out, double scale = 1.0) {
    if (f.empty()) return;
    const int n = f.z.rows(), c = f.z.cols();
    std::vector<double> w(c, 0.0);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += f.z(i, j) * v[i];
        w[j] = s * scale;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* zi = f.z.row(i);
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += zi[j] * w[j];
        out[i] += s;
    }
}

// out += scale * (-U mid^-1 U^T v)
inline void add_correction_matvec(const CompactBfgsFactor& f, const double* v,
                                  double* out, double scale = 1.0) {
    if (f.empty()) return;
    const int n = f.u.rows(), c = f.u.cols();
    std::vector<double> t(c, 0.0);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += f.u(i, j) * v[i];
        t[j] = s;
    }
    const std::vector<double> p = detail::eig_solve(f.mid_eig, t);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* ui = f.u.row(i);
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += ui[j] * p[j];
        out[i] -= scale * s;
    }
}

inline void add_correction_matvec(const Factor& f, const double* v, double* out,
                                  double scale = 1.0) {
    std::visit([&](const auto& ff) { add_correction_matvec(ff, v, out, scale); }, f);
}

// B v = B0 (.) v - U (mid^-1 (U^T v))
inline std::vector<double> factor_matvec(const CompactBfgsFactor& f,
                                         const std::vector<double>& v) {
    if (f.b0.empty())
        throw DimensionError("factor_matvec: BFGS factor has no B0 diagonal attached");
    if (v.size() != f.b0.size()) throw DimensionError("factor_matvec: length mismatch");
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = f.b0[i] * v[i];
    add_correction_matvec(f, v.data(), out.data());
    return out;
}

// B v = B0 (.) v + Z (Z^T v)
inline std::vector<double> factor_matvec(const FisherDiag& b0, const LowRankFactor& f,
                                         const std::vector<double>& v) {
    if (v.size() != b0.size()) throw DimensionError("factor_matvec: length mismatch");
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = b0[i] * v[i];
    add_correction_matvec(f, v.data(), out.data());
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double quad_form(const CompactBfgsFactor& f, const std::vector<double>& d) {
    const double val = dot(d, factor_matvec(f, d));
    const double dd = dot(d, d);
    if (val < -1e-8 * dd)
        warn("BFGS quadratic form is negative: " + std::to_string(val));
    return val;
}

inline double quad_form(const FisherDiag& b0, const LowRankFactor& f,
                        const std::vector<double>& d) {
    return dot(d, factor_matvec(b0, f, d));
}

// --- persistence ------------------------------------------------------------

// Versioned blob: header (kind, N, c, clamped flag, B0 snapshot reference),
// then column-major 64-bit floats for U/mid or Z.
inline void save_factor(std::ostream& os, const Factor& f, uint64_t b0_ref) {
    io::write_le<uint32_t>(os, 0x5a46u);  // "FZ" format tag
    io::write_le<uint32_t>(os, 1u);       // version
    if (std::holds_alternative<CompactBfgsFactor>(f)) {
        const auto& b = std::get<CompactBfgsFactor>(f);
        io::write_le<uint8_t>(os, 0);
        io::write_le<uint64_t>(os, b.u.rows());
        io::write_le<uint32_t>(os, static_cast<uint32_t>(b.u.cols()));
        io::write_le<uint8_t>(os, 0);
        io::write_le<uint64_t>(os, b0_ref);
        for (int j = 0; j < b.u.cols(); ++j)
            for (int i = 0; i < b.u.rows(); ++i) io::write_le<double>(os, b.u(i, j));
        for (int j = 0; j < b.mid.cols(); ++j)
            for (int i = 0; i < b.mid.rows(); ++i) io::write_le<double>(os, b.mid(i, j));
    } else {
        const auto& z = std::get<LowRankFactor>(f);
        io::write_le<uint8_t>(os, 1);
        io::write_le<uint64_t>(os, z.z.rows());
        io::write_le<uint32_t>(os, static_cast<uint32_t>(z.z.cols()));
        io::write_le<uint8_t>(os, z.clamped ? 1 : 0);
        io::write_le<uint64_t>(os, b0_ref);
        io::write_le<uint32_t>(os, static_cast<uint32_t>(z.provenance.size()));
        for (int p : z.provenance) io::write_le<int32_t>(os, p);
        for (int j = 0; j < z.z.cols(); ++j)
            for (int i = 0; i < z.z.rows(); ++i) io::write_le<double>(os, z.z(i, j));
    }
}

struct LoadedFactor {
    Factor factor;
    uint64_t b0_ref = 0;
};

inline LoadedFactor load_factor(std::istream& is) {
    if (io::read_le<uint32_t>(is) != 0x5a46u) throw DataError("bad factor blob tag");
    if (io::read_le<uint32_t>(is) != 1u) throw DataError("unsupported factor version");
    const uint8_t kind = io::read_le<uint8_t>(is);
    const uint64_t n = io::read_le<uint64_t>(is);
    const uint32_t c = io::read_le<uint32_t>(is);
    const uint8_t clamped = io::read_le<uint8_t>(is);
    const uint64_t ref = io::read_le<uint64_t>(is);

    if (kind == 0) {
        CompactBfgsFactor f;
        f.pair_count = static_cast<int>(c) / 2;
        if (c > 0) {
            f.u = linalg::DenseMatrix(static_cast<int>(n), static_cast<int>(c));
            for (uint32_t j = 0; j < c; ++j)
                for (uint64_t i = 0; i < n; ++i)
                    f.u(static_cast<int>(i), static_cast<int>(j)) = io::read_le<double>(is);
            f.mid = linalg::DenseMatrix(static_cast<int>(c), static_cast<int>(c));
            for (uint32_t j = 0; j < c; ++j)
                for (uint32_t i = 0; i < c; ++i)
                    f.mid(static_cast<int>(i), static_cast<int>(j)) = io::read_le<double>(is);
            f.mid_eig = linalg::sym_eig(f.mid);
        }
        return {Factor(std::move(f)), ref};
    }
    if (kind != 1) throw DataError("unknown factor kind");
    LowRankFactor f;
    f.clamped = clamped != 0;
    const uint32_t np = io::read_le<uint32_t>(is);
    for (uint32_t i = 0; i < np; ++i) f.provenance.push_back(io::read_le<int32_t>(is));
    if (c > 0) {
        f.z = linalg::DenseMatrix(static_cast<int>(n), static_cast<int>(c));
        for (uint32_t j = 0; j < c; ++j)
            for (uint64_t i = 0; i < n; ++i)
                f.z(static_cast<int>(i), static_cast<int>(j)) = io::read_le<double>(is);
    }
    return {Factor(std::move(f)), ref};
}

}  // namespace csqn::curvature

#endif  // CSQN_CURVATURE_HPP
