#include "trajex/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trajex/error.hpp"

namespace trajex {

namespace {

const char* kind_names[] = {
    "InvalidArgument", "NonFinite", "SizeExceeded", "NotConverged", "DegenerateMatrix",
    "IoError", "FormatError", "ShapeMismatch", "MissingTarget", "NonMonotonicSteps",
    "SchemaMismatch", "IndexOutOfRange", "InsufficientCheckpoints", "NonPositiveImprovement",
    "DimensionMismatch", "EmptyGroup", "DivergedTraining", "MissingPredictor",
    "ZeroNormPrediction", "EmptyTrajectory",
};

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

std::string_view to_string(ErrorKind kind) noexcept {
    return kind_names[static_cast<int>(kind)];
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        fail(ErrorKind::ShapeMismatch, "matrix data length " + std::to_string(data_.size()) +
                                           " does not match " + std::to_string(rows) + "x" +
                                           std::to_string(cols));
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            fail(ErrorKind::ShapeMismatch, "ragged row list");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "matrix add");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "matrix subtract");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] -= other.data_[i];
    }
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& x : data_) {
        x *= s;
    }
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            t(c, r) = m(r, c);
        }
    }
    return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        fail(ErrorKind::ShapeMismatch, "matmul " + shape_str(a) + " * " + shape_str(b));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) {
                continue;
            }
            auto src = b.row(k);
            for (std::size_t j = 0; j < dst.size(); ++j) {
                dst[j] += aik * src[j];
            }
        }
    }
    return out;
}

Matrix outer(double s, std::span<const double> u, std::span<const double> v) {
    Matrix out(u.size(), v.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double su = s * u[i];
        auto dst = out.row(i);
        for (std::size_t j = 0; j < v.size(); ++j) {
            dst[j] = su * v[j];
        }
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        fail(ErrorKind::DimensionMismatch, "dot of lengths " + std::to_string(a.size()) + " and " +
                                               std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm2(std::span<const double> x) {
    // Scaled accumulation so tiny or huge entries do not under/overflow.
    double scale = 0.0;
    for (double v : x) {
        scale = std::max(scale, std::abs(v));
    }
    if (scale == 0.0) {
        return 0.0;
    }
    double s = 0.0;
    for (double v : x) {
        const double t = v / scale;
        s += t * t;
    }
    return scale * std::sqrt(s);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

bool all_finite(std::span<const double> x) noexcept {
    return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& m, const char* what) {
    if (!all_finite(m.data())) {
        fail(ErrorKind::NonFinite, std::string(what) + ": matrix contains NaN or Inf");
    }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        fail(ErrorKind::ShapeMismatch,
             std::string(what) + ": " + shape_str(a) + " vs " + shape_str(b));
    }
}

}  // namespace trajex
