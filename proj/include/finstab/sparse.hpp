#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace finstab {

struct Triplet {
    std::uint32_t row;
    std::uint32_t col;
    double value;

    bool operator==(const Triplet&) const = default;
};

/// Rectangular sparse matrix in coordinate form, entries ordered by
/// (col, row). Column-major order keeps per-institution sums contiguous.
struct SparseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Triplet> entries;

    std::size_t nnz() const { return entries.size(); }

    /// y = A x
    void multiply(std::span<const double> x, std::span<double> y) const {
        if (x.size() != cols || y.size() != rows) throw std::invalid_argument("multiply: size mismatch");
        std::fill(y.begin(), y.end(), 0.0);
        for (const auto& e : entries) y[e.row] += e.value * x[e.col];
    }

    /// y = A^T x
    void multiply_transpose(std::span<const double> x, std::span<double> y) const {
        if (x.size() != rows || y.size() != cols) throw std::invalid_argument("multiply_transpose: size mismatch");
        std::fill(y.begin(), y.end(), 0.0);
        for (const auto& e : entries) y[e.col] += e.value * x[e.row];
    }

    std::vector<double> column_sums() const {
        std::vector<double> s(cols, 0.0);
        for (const auto& e : entries) s[e.col] += e.value;
        return s;
    }

    std::vector<double> row_sums() const {
        std::vector<double> s(rows, 0.0);
        for (const auto& e : entries) s[e.row] += e.value;
        return s;
    }

    bool operator==(const SparseMatrix&) const = default;
};

}  // namespace finstab
