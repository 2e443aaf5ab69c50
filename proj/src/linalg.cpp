#include "trajex/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "trajex/error.hpp"

namespace trajex {

namespace {

constexpr double kJacobiTolerance = 1e-12;
constexpr int kJacobiMaxSweeps = 60;
constexpr double kZeroNorm = 1e-300;

// Column-major working copy: `cols` columns of length `len`.
struct ColumnSet {
    std::size_t len = 0;
    std::size_t cols = 0;
    std::vector<double> buf;

    double* col(std::size_t j) { return buf.data() + j * len; }
    const double* col(std::size_t j) const { return buf.data() + j * len; }
};

// One-sided (Hestenes) Jacobi on the columns of `a`; rotations are mirrored
// into `v` (cols x cols, column-major) when requested.
void hestenes_jacobi(ColumnSet& a, std::vector<double>* v) {
    const std::size_t n = a.cols;
    const std::size_t len = a.len;
    if (v != nullptr) {
        v->assign(n * n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            (*v)[j * n + j] = 1.0;
        }
    }
    for (int sweep = 0; sweep < kJacobiMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double* ap = a.col(p);
                double* aq = a.col(q);
                double alpha = 0.0;
                double beta = 0.0;
                double gamma = 0.0;
                for (std::size_t i = 0; i < len; ++i) {
                    alpha += ap[i] * ap[i];
                    beta += aq[i] * aq[i];
                    gamma += ap[i] * aq[i];
                }
                if (alpha == 0.0 || beta == 0.0 ||
                    std::abs(gamma) <= kJacobiTolerance * std::sqrt(alpha) * std::sqrt(beta)) {
                    continue;
                }
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < len; ++i) {
                    const double x = ap[i];
                    const double y = aq[i];
                    ap[i] = c * x - s * y;
                    aq[i] = s * x + c * y;
                }
                if (v != nullptr) {
                    double* vp = v->data() + p * n;
                    double* vq = v->data() + q * n;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double x = vp[i];
                        const double y = vq[i];
                        vp[i] = c * x - s * y;
                        vq[i] = s * x + c * y;
                    }
                }
            }
        }
        if (!rotated) {
            break;
        }
    }
}

void check_svd_input(const Matrix& m, std::size_t max_elements) {
    if (m.rows() == 0 || m.cols() == 0) {
        fail(ErrorKind::InvalidArgument, "SVD of an empty matrix");
    }
    if (m.size() > max_elements) {
        fail(ErrorKind::SizeExceeded, "SVD input " + std::to_string(m.rows()) + "x" +
                                          std::to_string(m.cols()) + " exceeds cap of " +
                                          std::to_string(max_elements) + " entries");
    }
    require_finite(m, "svd");
}

// Columns of m (or of m^T when m is wide), so the column count is min(rows, cols).
ColumnSet tall_columns(const Matrix& m) {
    ColumnSet a;
    const bool wide = m.cols() > m.rows();
    a.len = wide ? m.cols() : m.rows();
    a.cols = wide ? m.rows() : m.cols();
    a.buf.resize(a.len * a.cols);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (wide) {
                a.buf[r * a.len + c] = m(r, c);
            } else {
                a.buf[c * a.len + r] = m(r, c);
            }
        }
    }
    return a;
}

std::vector<std::size_t> descending_order(const Vector& s) {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    return order;
}

Vector column_norms(const ColumnSet& a) {
    Vector s(a.cols);
    for (std::size_t j = 0; j < a.cols; ++j) {
        s[j] = norm2(std::span<const double>(a.col(j), a.len));
    }
    return s;
}

void mat_vec(const Matrix& m, std::span<const double> x, std::span<double> y) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        y[r] = dot(m.row(r), x);
    }
}

void mat_t_vec(const Matrix& m, std::span<const double> x, std::span<double> y) {
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double xr = x[r];
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            y[c] += xr * row[c];
        }
    }
}

void scale_to_unit(std::span<double> x, double norm) {
    for (double& e : x) {
        e /= norm;
    }
}

Rank1Factor degenerate_factor(std::size_t rows, std::size_t cols) {
    Rank1Factor f;
    f.u.assign(rows, 0.0);
    f.v.assign(cols, 0.0);
    f.u[0] = 1.0;
    f.v[0] = 1.0;
    f.degenerate = true;
    return f;
}

}  // namespace

double frobenius_norm(const Matrix& m) {
    return norm2(m.data());
}

SpectrumSummary full_svd(const Matrix& m, std::size_t max_elements) {
    check_svd_input(m, max_elements);
    ColumnSet a = tall_columns(m);
    hestenes_jacobi(a, nullptr);
    Vector s = column_norms(a);
    std::sort(s.begin(), s.end(), std::greater<>());
    return {std::move(s)};
}

ThinSvd thin_svd(const Matrix& m, std::size_t max_elements) {
    check_svd_input(m, max_elements);
    const bool wide = m.cols() > m.rows();
    ColumnSet a = tall_columns(m);
    std::vector<double> rot;
    hestenes_jacobi(a, &rot);
    const Vector s = column_norms(a);
    const auto order = descending_order(s);
    const std::size_t r = a.cols;

    // Rotated columns give (unnormalized) left vectors of the tall matrix;
    // accumulated rotations give its right vectors.
    Matrix left(a.len, r);
    Matrix right(r, r);
    ThinSvd out;
    out.singular_values.resize(r);
    for (std::size_t k = 0; k < r; ++k) {
        const std::size_t j = order[k];
        out.singular_values[k] = s[j];
        for (std::size_t i = 0; i < a.len; ++i) {
            left(i, k) = s[j] > 0.0 ? a.col(j)[i] / s[j] : 0.0;
        }
        for (std::size_t i = 0; i < r; ++i) {
            right(i, k) = rot[j * r + i];
        }
    }
    if (wide) {
        out.u = std::move(right);
        out.v = std::move(left);
    } else {
        out.u = std::move(left);
        out.v = std::move(right);
    }
    return out;
}

void apply_sign_convention(Rank1Factor& f) {
    for (double x : f.u) {
        if (std::abs(x) > 1e-12) {
            if (x < 0.0) {
                for (double& e : f.u) e = -e;
                for (double& e : f.v) e = -e;
            }
            return;
        }
    }
}

Rank1Factor top_singular_triplet(const Matrix& m, double tol, int max_iter) {
    if (m.rows() == 0 || m.cols() == 0) {
        fail(ErrorKind::InvalidArgument, "top_singular_triplet of an empty matrix");
    }
    require_finite(m, "top_singular_triplet");
    const double fro = frobenius_norm(m);
    if (fro < kZeroNorm) {
        return degenerate_factor(m.rows(), m.cols());
    }
    // Keep the iteration away from subnormal/overflow territory.
    const bool rescale = fro < 1e-150 || fro > 1e150;
    Matrix scaled;
    if (rescale) {
        scaled = (1.0 / fro) * m;
    }
    const Matrix& a = rescale ? scaled : m;
    const double a_fro = rescale ? 1.0 : fro;

    const std::size_t rows = a.rows();
    const std::size_t cols = a.cols();
    Vector v(cols, 1.0 / std::sqrt(static_cast<double>(cols)));
    Vector u(rows);
    Vector z(cols);

    mat_vec(a, v, u);
    double sigma = norm2(u);
    if (sigma < kZeroNorm * a_fro) {
        v[0] += 1e-6;
        scale_to_unit(v, norm2(v));
        mat_vec(a, v, u);
        sigma = norm2(u);
    }
    if (sigma < kZeroNorm * a_fro) {
        // Start from the heaviest column; it cannot lie in the null space.
        std::size_t best = 0;
        double best_norm = -1.0;
        for (std::size_t c = 0; c < cols; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                s += a(r, c) * a(r, c);
            }
            if (s > best_norm) {
                best_norm = s;
                best = c;
            }
        }
        std::fill(v.begin(), v.end(), 0.0);
        v[best] = 1.0;
        mat_vec(a, v, u);
        sigma = norm2(u);
    }
    scale_to_unit(u, sigma);

    double prev_sigma = 0.0;
    double rel_change = 1.0;
    double residual = 0.0;
    // Directions feed downstream predictors, so hold them to tol as well,
    // down to what roundoff allows.
    const double roundoff = 1e3 * std::numeric_limits<double>::epsilon() * a_fro;
    for (int iter = 0; iter < max_iter; ++iter) {
        mat_t_vec(a, u, z);
        residual = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double d = z[c] - sigma * v[c];
            residual += d * d;
        }
        residual = std::sqrt(residual);
        if (iter > 0 && rel_change <= tol && residual <= std::max(tol * sigma, roundoff)) {
            break;
        }
        scale_to_unit(z, norm2(z));
        v.swap(z);
        mat_vec(a, v, u);
        prev_sigma = sigma;
        sigma = norm2(u);
        scale_to_unit(u, sigma);
        rel_change = std::abs(sigma - prev_sigma) / sigma;
    }
    const bool direction_done = rel_change <= tol && residual <= std::max(tol * sigma, roundoff);
    if (!direction_done && m.size() <= kDefaultSvdMaxElements) {
        // Near-tied top pair: power iteration crawls, Jacobi does not.
        const ThinSvd svd = thin_svd(a);
        Rank1Factor f{svd.singular_values.at(0), Vector(rows), Vector(cols), false};
        for (std::size_t r = 0; r < rows; ++r) {
            f.u[r] = svd.u(r, 0);
        }
        for (std::size_t c = 0; c < cols; ++c) {
            f.v[c] = svd.v(c, 0);
        }
        if (rescale) {
            f.sigma *= fro;
        }
        apply_sign_convention(f);
        return f;
    }
    if (rel_change > tol && residual > 1e-6 * sigma) {
        fail(ErrorKind::NotConverged,
             "power iteration stalled after " + std::to_string(max_iter) +
                 " iterations (relative sigma change " + std::to_string(rel_change) + ")");
    }

    Rank1Factor f{rescale ? sigma * fro : sigma, std::move(u), std::move(v), false};
    apply_sign_convention(f);
    return f;
}

Matrix rank1_reconstruct(const Rank1Factor& f) {
    if (f.degenerate) {
        return Matrix(f.u.size(), f.v.size());
    }
    return outer(f.sigma, f.u, f.v);
}

double energy_ratio(const Matrix& m) {
    if (frobenius_norm(m) == 0.0) {
        fail(ErrorKind::DegenerateMatrix, "energy ratio of a zero matrix is undefined");
    }
    const SpectrumSummary s = full_svd(m);
    const double total = std::accumulate(s.singular_values.begin(), s.singular_values.end(), 0.0);
    return s.singular_values.front() / total;
}

}  // namespace trajex
