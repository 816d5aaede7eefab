#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "csqn/regularizer.hpp"
#include "oracles.hpp"

using namespace csqn;
using curvature::CurvaturePairs;
using curvature::LowRankFactor;
using linalg::DenseMatrix;
using reg::Method;
using reg::RegularizerState;
using reg::Strategy;

namespace {

nn::ParamVector random_theta(size_t n, uint64_t seed, float scale = 1.0f) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<float> dist(-scale, scale);
    nn::ParamVector v(n);
    for (float& x : v) x = dist(gen);
    return v;
}

std::vector<double> random_omega(size_t n, uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> dist(0.05, 1.5);
    std::vector<double> v(n);
    for (double& x : v) x = dist(gen);
    return v;
}

LowRankFactor random_z(int n, int c, uint64_t seed, int task_id) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> dist;
    LowRankFactor f;
    f.z = DenseMatrix(n, c);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) f.z(i, j) = 0.3 * dist(gen);
    f.provenance = {task_id};
    return f;
}

// Quadratic-oracle SR1 Z factor at dimension n.
LowRankFactor quadratic_z(int n, int m, const std::vector<double>& b0, uint64_t seed,
                          int task_id) {
    std::mt19937_64 gen(seed);
    oracle::Mat h = oracle::random_spd(n, gen, 1.0);
    CurvaturePairs p{DenseMatrix(n, m), DenseMatrix(n, m)};
    std::normal_distribution<double> dist;
    for (int j = 0; j < m; ++j) {
        oracle::Vec s(n);
        for (double& v : s) v = dist(gen);
        const oracle::Vec y = oracle::mulv(h, s);
        for (int i = 0; i < n; ++i) {
            p.s(i, j) = s[i];
            p.y(i, j) = y[i];
        }
    }
    auto z = curvature::z_from_sr1(curvature::build_sr1(b0, p));
    z.provenance = {task_id};
    return z;
}

void fd_audit(const RegularizerState& st, const nn::ParamVector& theta, double tol) {
    const reg::Penalty p = reg::penalty(st, theta);
    std::vector<double> td(theta.begin(), theta.end());
    auto f = [&](const oracle::Vec& x) {
        nn::ParamVector xf(x.size());
        for (size_t i = 0; i < x.size(); ++i) xf[i] = static_cast<float>(x[i]);
        // evaluate at float-rounded points so the finite difference matches
        // the penalty's own float->double displacement
        return reg::penalty(st, xf).value;
    };
    double gmax = 0.0;
    for (double g : p.gradient) gmax = std::max(gmax, std::abs(g));
    std::mt19937_64 gen(999);
    int checked = 0;
    for (int k = 0; k < 400 && checked < 40; ++k) {
        const size_t i = gen() % td.size();
        const double xi = td[i];
        const double h = 1e-4 * std::max(1.0, std::abs(xi));
        // keep the probe exactly representable in float so rounding does not
        // perturb the difference quotient
        const double hp = static_cast<double>(static_cast<float>(xi + h)) - xi;
        const double hm = xi - static_cast<double>(static_cast<float>(xi - h));
        oracle::Vec x = td;
        x[i] = xi + hp;
        const double fp = f(x);
        x[i] = xi - hm;
        const double fm = f(x);
        const double fd = (fp - fm) / (hp + hm);
        if (std::abs(fd) < 1e-7 * gmax) continue;
        EXPECT_NEAR(p.gradient[i], fd, tol * std::max(std::abs(fd), gmax * 1e-3))
            << "coordinate " << i;
        ++checked;
    }
    EXPECT_GE(checked, 10);
}

}  // namespace

TEST(EwcPenalty, ZeroAtAnchor) {
    RegularizerState st = reg::make_state(Method::Ewc, Strategy::None, 10.0);
    nn::ParamVector theta = random_theta(20, 1);
    reg::finish_task(st, theta, random_omega(20, 2), std::nullopt, 1);
    const reg::Penalty p = reg::ewc_penalty(st, theta);
    EXPECT_EQ(p.value, 0.0);
    for (double g : p.gradient) EXPECT_EQ(g, 0.0);
}

TEST(EwcPenalty, HandArithmetic) {
    RegularizerState st = reg::make_state(Method::Ewc, Strategy::None, 2.0);
    nn::ParamVector anchor{0.0f, 0.0f};
    reg::finish_task(st, anchor, {1.0, 2.0}, std::nullopt, 1);
    nn::ParamVector theta{1.0f, 1.0f};
    const reg::Penalty p = reg::ewc_penalty(st, theta);
    EXPECT_DOUBLE_EQ(p.value, 3.0);  // (2/2) * (1*1 + 2*1)
    EXPECT_DOUBLE_EQ(p.gradient[0], 2.0);
    EXPECT_DOUBLE_EQ(p.gradient[1], 4.0);
}

TEST(EwcPenalty, GradientMatchesFiniteDifferences) {
    const int n = 50;
    RegularizerState st = reg::make_state(Method::Ewc, Strategy::None, 3.0);
    reg::finish_task(st, random_theta(n, 3), random_omega(n, 4), std::nullopt, 1);
    fd_audit(st, random_theta(n, 5), 1e-6);
}

TEST(CsqnPenalty, ZeroAtAnchor) {
    const int n = 24;
    RegularizerState st = reg::make_state(Method::CsqnSr1, Strategy::None, 5.0);
    nn::ParamVector theta = random_theta(n, 6);
    auto omega = random_omega(n, 7);
    reg::finish_task(st, theta, omega,
                     curvature::Factor(quadratic_z(n, 3, omega, 8, 1)), 1);
    const reg::Penalty p = reg::csqn_penalty(st, theta);
    EXPECT_EQ(p.value, 0.0);
    for (double g : p.gradient) EXPECT_EQ(g, 0.0);
}

TEST(CsqnPenalty, NoFactorsDegeneratesToEwcExactly) {
    const int n = 40;
    RegularizerState csqn = reg::make_state(Method::CsqnSr1, Strategy::None, 7.0);
    RegularizerState ewc = reg::make_state(Method::Ewc, Strategy::None, 7.0);
    nn::ParamVector anchor = random_theta(n, 9);
    auto omega = random_omega(n, 10);
    LowRankFactor empty;
    reg::finish_task(csqn, anchor, omega, curvature::Factor(empty), 1);
    reg::finish_task(ewc, anchor, omega, std::nullopt, 1);

    nn::ParamVector theta = random_theta(n, 11);
    const reg::Penalty a = reg::csqn_penalty(csqn, theta);
    const reg::Penalty b = reg::ewc_penalty(ewc, theta);
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.gradient, b.gradient);
}

TEST(CsqnPenalty, DenseTwoTaskOracle) {
    const int n = 30;
    const double lambda = 4.0;
    RegularizerState st = reg::make_state(Method::CsqnSr1, Strategy::None, lambda);

    auto omega1 = random_omega(n, 12), omega2 = random_omega(n, 13);
    nn::ParamVector anchor1 = random_theta(n, 14), anchor2 = random_theta(n, 15);
    LowRankFactor z1 = quadratic_z(n, 3, omega1, 16, 1);
    LowRankFactor z2 = quadratic_z(n, 4, omega2, 17, 2);
    reg::finish_task(st, anchor1, omega1, curvature::Factor(z1), 1);
    reg::finish_task(st, anchor2, omega2, curvature::Factor(z2), 2);

    // dense Sum_j B^(j) = diag(omega1 + omega2) + z1 z1^T + z2 z2^T
    oracle::Mat big = oracle::zeros(n, n);
    for (int i = 0; i < n; ++i) big[i][i] = omega1[i] + omega2[i];
    for (const auto& z : {z1, z2})
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < z.z.cols(); ++k) big[i][j] += z.z(i, k) * z.z(j, k);

    nn::ParamVector theta = random_theta(n, 18);
    oracle::Vec d(n);
    for (int i = 0; i < n; ++i)
        d[i] = static_cast<double>(theta[i]) - static_cast<double>(anchor2[i]);
    const oracle::Vec bd = oracle::mulv(big, d);
    const double expect_value = 0.5 * lambda * oracle::dot(d, bd);

    const reg::Penalty p = reg::csqn_penalty(st, theta);
    EXPECT_NEAR(p.value, expect_value, 1e-8 * std::abs(expect_value));
    for (int i = 0; i < n; ++i)
        EXPECT_NEAR(p.gradient[i], lambda * bd[i],
                    1e-8 * std::max(1.0, std::abs(lambda * bd[i])));
}

TEST(CsqnPenalty, GradientAuditAllStrategies) {
    const int n = 60;
    for (Strategy strat : {Strategy::None, Strategy::Ct, Strategy::Btree, Strategy::Mrt}) {
        RegularizerState st = reg::make_state(Method::CsqnSr1, strat, 2.5, 4);
        for (int t = 1; t <= 3; ++t) {  // T=3 leaves a BTREE mid-merge stack {1, 0}
            auto omega = random_omega(n, 20 + t);
            reg::finish_task(st, random_theta(n, 30 + t), omega,
                             curvature::Factor(quadratic_z(n, 4, omega, 40 + t, t)), t);
        }
        if (strat == Strategy::Btree) {
            ASSERT_EQ(st.factors.size(), 2u);
            EXPECT_EQ(st.factors[0].level, 1);
            EXPECT_EQ(st.factors[1].level, 0);
        }
        fd_audit(st, random_theta(n, 50), 2e-6);
    }
}

TEST(CsqnPenalty, Sr1PenaltyNonnegativeEverywhere) {
    const int n = 32;
    RegularizerState st = reg::make_state(Method::CsqnSr1, Strategy::None, 1.0);
    for (int t = 1; t <= 2; ++t) {
        auto omega = random_omega(n, 60 + t);
        reg::finish_task(st, random_theta(n, 70 + t), omega,
                         curvature::Factor(quadratic_z(n, 3, omega, 80 + t, t)), t);
    }
    for (uint64_t s = 0; s < 300; ++s) {
        const reg::Penalty p = reg::csqn_penalty(st, random_theta(n, 1000 + s, 2.0f));
        EXPECT_GE(p.value, 0.0);
    }
}

TEST(FinishTask, StoresFactorUnderNone) {
    const int n = 10;
    RegularizerState st = reg::make_state(Method::CsqnSr1, Strategy::None, 1.0);
    reg::finish_task(st, random_theta(n, 90), random_omega(n, 91),
                     curvature::Factor(random_z(n, 2, 92, 1)), 1);
    EXPECT_EQ(st.factors.size(), 1u);
    EXPECT_EQ(st.tasks_done, 1);
}

TEST(FinishTask, EwcIgnoresFactors) {
    const int n = 10;
    RegularizerState st = reg::make_state(Method::Ewc, Strategy::None, 1.0);
    reg::finish_task(st, random_theta(n, 93), random_omega(n, 94), std::nullopt, 1);
    reg::finish_task(st, random_theta(n, 95), random_omega(n, 96), std::nullopt, 2);
    EXPECT_TRUE(st.factors.empty());
    EXPECT_EQ(st.tasks_done, 2);
}

TEST(FinishTask, MrtKeepsOnlyLatestFactor) {
    const int n = 10;
    RegularizerState st = reg::make_state(Method::CsqnSr1, Strategy::Mrt, 1.0);
    auto omega1 = random_omega(n, 97), omega2 = random_omega(n, 98);
    reg::finish_task(st, random_theta(n, 99), omega1,
                     curvature::Factor(random_z(n, 2, 100, 1)), 1);
    reg::finish_task(st, random_theta(n, 101), omega2,
                     curvature::Factor(random_z(n, 2, 102, 2)), 2);
    ASSERT_EQ(st.factors.size(), 1u);
    EXPECT_EQ(st.factors[0].task_id, 2);
    // task 1 only survives through the accumulated diagonal
    for (int i = 0; i < n; ++i)
        EXPECT_DOUBLE_EQ(st.b0_acc[i], omega1[i] + omega2[i]);
}

TEST(FinishTask, B0AccumulationOrderInsensitive) {
    const int n = 16;
    std::vector<std::vector<double>> omegas;
    for (int t = 0; t < 4; ++t) omegas.push_back(random_omega(n, 110 + t));

    RegularizerState a = reg::make_state(Method::Ewc, Strategy::None, 1.0);
    RegularizerState b = reg::make_state(Method::Ewc, Strategy::None, 1.0);
    nn::ParamVector anchor = random_theta(n, 120);
    for (int t = 0; t < 4; ++t)
        reg::finish_task(a, anchor, omegas[t], std::nullopt, t + 1);
    for (int t = 3; t >= 0; --t)
        reg::finish_task(b, anchor, omegas[t], std::nullopt, 4 - t);
    for (int i = 0; i < n; ++i)
        EXPECT_NEAR(a.b0_acc[i], b.b0_acc[i], 1e-15 * std::abs(a.b0_acc[i]));
}

TEST(ReduceCt, EmptyNewInputIsNoOp) {
    const int n = 12, c = 3;
    LowRankFactor prev = random_z(n, c, 130, 1);
    LowRankFactor merged = reg::reduce_ct(prev, LowRankFactor{}, c);
    EXPECT_EQ(merged.z.data(), prev.z.data());
}

TEST(ReduceCt, TwoOrthogonalColumnsKeepLargerTimesSqrt2) {
    const int n = 10;
    LowRankFactor a, b;
    a.z = DenseMatrix(n, 1);
    b.z = DenseMatrix(n, 1);
    a.z(0, 0) = 3.0;  // norm 3 along e0
    b.z(1, 0) = 1.0;  // norm 1 along e1, orthogonal
    LowRankFactor merged = reg::reduce_ct(a, b, 1);
    ASSERT_EQ(merged.z.cols(), 1);
    // Z~ Z~^T = 2 * a a^T
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double expect = (i == 0 && j == 0) ? 2.0 * 9.0 : 0.0;
            EXPECT_NEAR(merged.z(i, 0) * merged.z(j, 0), expect, 1e-12);
        }
}

TEST(ReduceCt, TraceCompensationIdentity) {
    const int n = 40, total = 6, c = 3;
    LowRankFactor a = random_z(n, 4, 131, 1);
    LowRankFactor b = random_z(n, 2, 132, 2);
    LowRankFactor merged = reg::reduce_ct(a, b, c);
    ASSERT_EQ(merged.z.cols(), c);

    // oracle: eigenvalues of the dense concat Gram give the top-c energy
    oracle::Mat zz = oracle::zeros(n, n);
    for (const auto& f : {a, b})
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < f.z.cols(); ++k) zz[i][j] += f.z(i, k) * f.z(j, k);
    oracle::Vec evals;
    oracle::Mat v;
    oracle::jacobi_eig(zz, evals, v);
    std::sort(evals.begin(), evals.end(), std::greater<double>());
    double top = 0.0;
    for (int k = 0; k < c; ++k) top += evals[k];

    double trace = 0.0;
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < c; ++k) trace += merged.z(i, k) * merged.z(i, k);
    EXPECT_NEAR(trace, double(total) / c * top, 1e-9 * top);
}

TEST(ReduceBtree, StackShapes) {
    const int n = 8, c = 2;
    std::vector<reg::StoredFactor> stack;
    reg::reduce_btree(stack, random_z(n, c, 140, 1), c, 1);
    ASSERT_EQ(stack.size(), 1u);
    EXPECT_EQ(stack[0].level, 0);

    reg::reduce_btree(stack, random_z(n, c, 141, 2), c, 2);
    ASSERT_EQ(stack.size(), 1u);
    EXPECT_EQ(stack[0].level, 1);

    reg::reduce_btree(stack, random_z(n, c, 142, 3), c, 3);
    ASSERT_EQ(stack.size(), 2u);  // no merge across unequal levels
    EXPECT_EQ(stack[0].level, 1);
    EXPECT_EQ(stack[1].level, 0);

    reg::reduce_btree(stack, random_z(n, c, 143, 4), c, 4);
    ASSERT_EQ(stack.size(), 1u);  // two-step merge into a single factor
    EXPECT_EQ(stack[0].level, 2);
}

TEST(ReduceBtree, LosslessBudgetMatchesNone) {
    const int n = 24, m = 2, T = 4;
    RegularizerState none = reg::make_state(Method::CsqnSr1, Strategy::None, 1.0);
    // column budget >= total columns means merges only concatenate
    RegularizerState btree = reg::make_state(Method::CsqnSr1, Strategy::Btree, 1.0, m * T);

    nn::ParamVector anchor = random_theta(n, 150);
    for (int t = 1; t <= T; ++t) {
        auto omega = random_omega(n, 150 + t);
        LowRankFactor z = quadratic_z(n, m, omega, 160 + t, t);
        reg::finish_task(none, anchor, omega, curvature::Factor(z), t);
        reg::finish_task(btree, anchor, omega, curvature::Factor(z), t);
    }
    EXPECT_EQ(btree.factors.size(), 1u);

    for (uint64_t s = 0; s < 50; ++s) {
        nn::ParamVector theta = random_theta(n, 2000 + s);
        const double pn = reg::csqn_penalty(none, theta).value;
        const double pb = reg::csqn_penalty(btree, theta).value;
        EXPECT_NEAR(pn, pb, 1e-9 * std::max(1.0, std::abs(pn)));
    }
}

TEST(MemoryCost, ReportedColumnCounts) {
    const int n = 6;
    // NONE with SR1, M=20 columns per task, T=5
    RegularizerState none = reg::make_state(Method::CsqnSr1, Strategy::None, 1.0);
    for (int t = 1; t <= 5; ++t)
        reg::finish_task(none, random_theta(n, 170 + t), random_omega(n, 180 + t),
                         curvature::Factor(random_z(n, 20, 190 + t, t)), t);
    auto mc = reg::strategy_memory_cost(none);
    EXPECT_EQ(mc.factor_columns, 100);
    EXPECT_EQ(mc.diagonal_count, 1);

    RegularizerState ct = reg::make_state(Method::CsqnSr1, Strategy::Ct, 1.0, 20);
    for (int t = 1; t <= 7; ++t)
        reg::finish_task(ct, random_theta(n, 200 + t), random_omega(n, 210 + t),
                         curvature::Factor(random_z(n, 20, 220 + t, t)), t);
    EXPECT_LE(reg::strategy_memory_cost(ct).factor_columns, 20);

    RegularizerState bt = reg::make_state(Method::CsqnSr1, Strategy::Btree, 1.0, 4);
    for (int t = 1; t <= 8; ++t)
        reg::finish_task(bt, random_theta(n, 230 + t), random_omega(n, 240 + t),
                         curvature::Factor(random_z(n, 4, 250 + t, t)), t);
    EXPECT_EQ(reg::strategy_memory_cost(bt).factor_count, 1);  // popcount(8) = 1
}

TEST(Persistence, StateRoundTripPreservesPenalties) {
    const int n = 20;
    RegularizerState st = reg::make_state(Method::CsqnBfgs, Strategy::None, 3.0);
    for (int t = 1; t <= 2; ++t) {
        auto omega = random_omega(n, 260 + t);
        std::mt19937_64 gen(270 + t);
        oracle::Mat h = oracle::random_spd(n, gen, 1.0);
        CurvaturePairs p{DenseMatrix(n, 2), DenseMatrix(n, 2)};
        std::normal_distribution<double> dist;
        for (int j = 0; j < 2; ++j) {
            oracle::Vec s(n);
            for (double& v : s) v = dist(gen);
            const oracle::Vec y = oracle::mulv(h, s);
            for (int i = 0; i < n; ++i) {
                p.s(i, j) = s[i];
                p.y(i, j) = y[i];
            }
        }
        reg::finish_task(st, random_theta(n, 280 + t), omega,
                         curvature::Factor(curvature::build_bfgs(omega, p)), t);
    }

    const std::string path =
        (std::filesystem::temp_directory_path() / "csqn_state.bin").string();
    reg::save_state(path, st);
    RegularizerState loaded = reg::load_state(path);
    std::filesystem::remove(path);

    EXPECT_EQ(loaded.tasks_done, st.tasks_done);
    EXPECT_EQ(loaded.anchor, st.anchor);
    EXPECT_EQ(loaded.b0_acc, st.b0_acc);
    nn::ParamVector theta = random_theta(n, 290);
    const reg::Penalty a = reg::csqn_penalty(st, theta);
    const reg::Penalty b = reg::csqn_penalty(loaded, theta);
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.gradient, b.gradient);
}

TEST(Validation, StrategiesRequireCsqn) {
    EXPECT_THROW(reg::make_state(Method::Ewc, Strategy::Ct, 1.0, 4), ConfigError);
    EXPECT_THROW(reg::make_state(Method::CsqnSr1, Strategy::None, -1.0), ConfigError);
}
