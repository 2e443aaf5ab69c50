#pragma once

#include <cstddef>

#include "trajex/matrix.hpp"

namespace trajex {

// Best rank-1 approximation sigma * u * v^T of a matrix.
//
// u and v always have unit norm. For a zero source matrix the factor is
// marked degenerate with sigma = 0 and u = v = e1, since frozen parameters
// legitimately produce zero deltas. Sign convention: the first component of
// u with magnitude above 1e-12 is positive (u and v flip together).
struct Rank1Factor {
    double sigma = 0.0;
    Vector u;
    Vector v;
    bool degenerate = false;

    friend bool operator==(const Rank1Factor&, const Rank1Factor&) = default;
};

struct SpectrumSummary {
    Vector singular_values;  // nonincreasing, all >= 0
};

// Thin SVD; column j of `u` / `v` is the j-th left / right singular vector.
struct ThinSvd {
    Vector singular_values;
    Matrix u;
    Matrix v;
};

inline constexpr std::size_t kDefaultSvdMaxElements = std::size_t{4096} * 4096;

double frobenius_norm(const Matrix& m);

// All min(rows, cols) singular values via one-sided Jacobi. Throws
// SizeExceeded above `max_elements` entries rather than truncating.
SpectrumSummary full_svd(const Matrix& m, std::size_t max_elements = kDefaultSvdMaxElements);
ThinSvd thin_svd(const Matrix& m, std::size_t max_elements = kDefaultSvdMaxElements);

// Largest singular triplet by alternating power iteration from the
// normalized all-ones vector. Near-ties between sigma1 and sigma2 return the
// converged sigma with whatever direction the iteration reached; callers that
// need a unique direction must check the spectral gap themselves.
Rank1Factor top_singular_triplet(const Matrix& m, double tol = 1e-10, int max_iter = 1000);

void apply_sign_convention(Rank1Factor& f);

Matrix rank1_reconstruct(const Rank1Factor& f);

// sigma1 / sum(sigma_i) over the exact spectrum. Throws DegenerateMatrix for
// the zero matrix.
double energy_ratio(const Matrix& m);

}  // namespace trajex
