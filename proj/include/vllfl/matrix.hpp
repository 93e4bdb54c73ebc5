#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vllfl/errors.hpp"
#include "vllfl/rng.hpp"

namespace vllfl {

// Dense row-major matrix of doubles. The single container for every vector
// and matrix in the project (queries, projections, token embeddings,
// prompts, attention intermediates). Vectors are 1 x n or n x 1 matrices.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows_init) {
        Matrix m(rows_init.size(), rows_init.size() ? rows_init.begin()->size() : 0);
        std::size_t i = 0;
        for (const auto& row : rows_init) {
            if (row.size() != m.cols) throw shape_error("from_rows: ragged rows");
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    // Gaussian-filled matrix; draws row-major from the given stream.
    static Matrix randn(std::size_t r, std::size_t c, RngStream& stream,
                        double mean = 0.0, double stddev = 1.0) {
        Matrix m(r, c);
        for (double& v : m.data) v = stream.next_normal(mean, stddev);
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(),
                           [](double v) { return std::isfinite(v); });
    }

    Matrix& operator+=(const Matrix& other) {
        if (!same_shape(other)) throw shape_error("operator+=: shape mismatch");
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
        return *this;
    }

    Matrix& operator*=(double s) {
        for (double& v : data) v *= s;
        return *this;
    }
};

inline std::string shape_string(const Matrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

// Standard matrix product. a.cols must equal b.rows.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw shape_error("matmul: " + shape_string(a) + " * " + shape_string(b));
    }
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.data[k * b.cols];
            double* orow = &out.data[i * out.cols];
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
    return out;
}

// matmul(transpose(a), b) without materializing the transpose.
inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) {
        throw shape_error("matmul_at_b: " + shape_string(a) + "^T * " + shape_string(b));
    }
    Matrix out(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = &a.data[k * a.cols];
        const double* brow = &b.data[k * b.cols];
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* orow = &out.data[i * out.cols];
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

// matmul(a, transpose(b)) without materializing the transpose.
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) {
        throw shape_error("matmul_a_bt: " + shape_string(a) + " * " + shape_string(b) + "^T");
    }
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = &a.data[i * a.cols];
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = &b.data[j * b.cols];
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            out(i, j) = acc;
        }
    }
    return out;
}

// Row-wise softmax with per-row max subtraction, so rows of any finite
// magnitude (up to ~1e6 and far beyond) normalize without overflow.
inline Matrix softmax_rows(const Matrix& a) {
    Matrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = &a.data[i * a.cols];
        double* orow = &out.data[i * out.cols];
        double mx = row[0];
        for (std::size_t j = 1; j < a.cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (std::size_t j = 0; j < a.cols; ++j) orow[j] /= sum;
    }
    return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw shape_error("hadamard: shape mismatch");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace vllfl
