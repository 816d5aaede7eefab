#ifndef CSQN_LINALG_HPP
#define CSQN_LINALG_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "csqn/common.hpp"

namespace csqn::linalg {

// Row-major dense matrix of 64-bit floats. Sized for tall-skinny N x c
// factors (c <= ~80) and small c x c systems; nothing here targets matrices
// beyond ~1k x 1k dense.
class DenseMatrix {
  public:
    DenseMatrix() = default;
    DenseMatrix(int rows, int cols)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {
        if (rows < 0 || cols < 0) throw DimensionError("negative matrix dimension");
    }
    DenseMatrix(int rows, int cols, std::vector<double> entries)
        : rows_(rows), cols_(cols), data_(std::move(entries)) {
        if (data_.size() != static_cast<size_t>(rows) * cols)
            throw DimensionError("entry count does not match rows*cols");
    }

    static DenseMatrix identity(int n) {
        DenseMatrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    double& operator()(int i, int j) { return data_[static_cast<size_t>(i) * cols_ + j]; }
    double operator()(int i, int j) const { return data_[static_cast<size_t>(i) * cols_ + j]; }

    double* row(int i) { return data_.data() + static_cast<size_t>(i) * cols_; }
    const double* row(int i) const { return data_.data() + static_cast<size_t>(i) * cols_; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

  private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

struct SymEig {
    std::vector<double> eigenvalues;  // ascending
    DenseMatrix eigenvectors;         // orthonormal columns, same order
};

struct QrResult {
    DenseMatrix q;  // orthonormal columns, rows x cols of input
    DenseMatrix r;  // upper triangular, cols x cols, nonnegative diagonal
};

inline double frobenius_norm(const DenseMatrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

inline DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix t(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

// Standard product with fixed (i,k,j) loop order; summation order never
// depends on thread count or reduction reordering.
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
    DenseMatrix c(a.rows(), b.cols());
    const int n = b.cols();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.rows(); ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (int j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

inline std::vector<double> matvec(const DenseMatrix& a, const std::vector<double>& v) {
    if (a.cols() != static_cast<int>(v.size()))
        throw DimensionError("matvec: length mismatch");
    std::vector<double> out(a.rows(), 0.0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i);
        double s = 0.0;
        for (int k = 0; k < a.cols(); ++k) s += ai[k] * v[k];
        out[i] = s;
    }
    return out;
}

// G = Z^T Z without materializing the transpose; O(N c^2) over row-major Z.
inline DenseMatrix gram(const DenseMatrix& z) {
    const int c = z.cols();
    DenseMatrix g(c, c);
#pragma omp parallel for schedule(static)
    for (int a = 0; a < c; ++a) {
        for (int i = 0; i < z.rows(); ++i) {
            const double* zi = z.row(i);
            const double zia = zi[a];
            double* ga = g.row(a);
            for (int b = a; b < c; ++b) ga[b] += zia * zi[b];
        }
    }
    for (int a = 0; a < c; ++a)
        for (int b = 0; b < a; ++b) g(a, b) = g(b, a);
    return g;
}

inline void check_square_symmetric(const DenseMatrix& a, double rel_tol,
                                   const char* who) {
    if (a.rows() != a.cols())
        throw DimensionError(std::string(who) + ": matrix not square");
    double scale = 0.0, dev = 0.0;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = i + 1; j < a.cols(); ++j) {
            scale = std::max(scale, std::max(std::abs(a(i, j)), std::abs(a(j, i))));
            dev = std::max(dev, std::abs(a(i, j) - a(j, i)));
        }
    if (dev > rel_tol * std::max(1.0, scale))
        throw DimensionError(std::string(who) + ": matrix not symmetric");
}

// Cholesky of a symmetric matrix. A non-positive pivot is a branch condition
// for the caller, not an error, so failure is signalled via nullopt.
inline std::optional<DenseMatrix> cholesky(const DenseMatrix& a) {
    check_square_symmetric(a, 1e-8, "cholesky");
    const int n = a.rows();
    DenseMatrix l(n, n);
    for (int j = 0; j < n; ++j) {
        double d = a(j, j);
        for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0)) return std::nullopt;
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (int i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

// Cyclic Jacobi eigensolver with fixed sweep order (p,q row-cyclic), intended
// for n <= 200. Eigenvalues ascending; ties keep original index order. Each
// eigenvector's largest-magnitude component is made positive so outputs are
// unique and bit-stable.
inline SymEig sym_eig(const DenseMatrix& input) {
    check_square_symmetric(input, 1e-8, "sym_eig");
    const int n = input.rows();
    DenseMatrix a = input;
    // enforce exact symmetry so the iteration is on a single well-defined matrix
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double m = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = m;
            a(j, i) = m;
        }
    DenseMatrix v = DenseMatrix::identity(n);

    double norm = frobenius_norm(a);
    if (norm == 0.0) norm = 1.0;
    const double stop = 1e-15 * norm;
    const int max_sweeps = 60;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(2.0 * off) <= stop) break;

        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double app = a(p, p);
                const double aqq = a(q, q);
                if (std::abs(apq) <= 1e-18 * (std::abs(app) + std::abs(aqq)))
                    continue;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0)
                                     ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                     : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                for (int k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return a(i, i) < a(j, j); });

    SymEig out;
    out.eigenvalues.resize(n);
    out.eigenvectors = DenseMatrix(n, n);
    for (int j = 0; j < n; ++j) {
        const int src = order[j];
        out.eigenvalues[j] = a(src, src);
        int arg = 0;
        double best = 0.0;
        for (int i = 0; i < n; ++i) {
            const double av = std::abs(v(i, src));
            if (av > best) {
                best = av;
                arg = i;
            }
        }
        const double sign = (v(arg, src) < 0.0) ? -1.0 : 1.0;
        for (int i = 0; i < n; ++i) out.eigenvectors(i, j) = sign * v(i, src);
    }
    return out;
}

// Householder QR for rows >= cols; thin Q. R's diagonal is made nonnegative
// so the factorization is unique.
inline QrResult qr(const DenseMatrix& input) {
    const int m = input.rows();
    const int n = input.cols();
    if (m < n) throw DimensionError("qr: rows < cols");

    DenseMatrix r = input;
    std::vector<std::vector<double>> reflectors;
    reflectors.reserve(n);

    for (int k = 0; k < n; ++k) {
        double norm = 0.0;
        for (int i = k; i < m; ++i) norm += r(i, k) * r(i, k);
        norm = std::sqrt(norm);

        std::vector<double> u(m - k, 0.0);
        if (norm > 0.0) {
            const double alpha = (r(k, k) >= 0.0) ? -norm : norm;
            for (int i = k; i < m; ++i) u[i - k] = r(i, k);
            u[0] -= alpha;
            double unorm = 0.0;
            for (double x : u) unorm += x * x;
            unorm = std::sqrt(unorm);
            if (unorm > 0.0) {
                for (double& x : u) x /= unorm;
                for (int j = k; j < n; ++j) {
                    double dot = 0.0;
                    for (int i = k; i < m; ++i) dot += u[i - k] * r(i, j);
                    for (int i = k; i < m; ++i) r(i, j) -= 2.0 * dot * u[i - k];
                }
            }
        }
        reflectors.push_back(std::move(u));
    }

    // Q = H_0 ... H_{n-1} applied to the thin identity
    DenseMatrix q(m, n);
    for (int j = 0; j < n; ++j) q(j, j) = 1.0;
    for (int k = n - 1; k >= 0; --k) {
        const std::vector<double>& u = reflectors[k];
        for (int j = 0; j < n; ++j) {
            double dot = 0.0;
            for (int i = k; i < m; ++i) dot += u[i - k] * q(i, j);
            for (int i = k; i < m; ++i) q(i, j) -= 2.0 * dot * u[i - k];
        }
    }

    DenseMatrix rr(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) rr(i, j) = r(i, j);
    for (int i = 0; i < n; ++i) {
        if (rr(i, i) < 0.0) {
            for (int j = i; j < n; ++j) rr(i, j) = -rr(i, j);
            for (int k = 0; k < m; ++k) q(k, i) = -q(k, i);
        }
    }
    return {std::move(q), std::move(rr)};
}

// Best Frobenius rank-`keep` compression of Z Z^T computed via the c x c Gram
// matrix Z^T Z; returns Z~ = Z V_keep with columns ordered by descending
// singular value, ties broken by first-occurrence eigenvector index.
inline DenseMatrix gram_thin_svd(const DenseMatrix& z, int keep) {
    if (keep <= 0) throw DimensionError("gram_thin_svd: keep must be positive");
    if (keep > z.cols()) throw DimensionError("gram_thin_svd: keep exceeds column count");

    const SymEig eig = sym_eig(gram(z));
    const int c = z.cols();
    std::vector<int> order(c);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
        return eig.eigenvalues[i] > eig.eigenvalues[j];
    });

    DenseMatrix vk(c, keep);
    for (int j = 0; j < keep; ++j)
        for (int i = 0; i < c; ++i) vk(i, j) = eig.eigenvectors(i, order[j]);
    return matmul(z, vk);
}

}  // namespace csqn::linalg

#endif  // CSQN_LINALG_HPP
