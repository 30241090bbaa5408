#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pfssl/errors.hpp"

namespace pfssl {

// Row-major dense matrix of feature rows.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

    std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }

    void append_row(std::span<const double> r) {
        if (rows == 0 && cols == 0) cols = r.size();
        if (r.size() != cols) throw ShapeError("row width does not match matrix columns");
        values.insert(values.end(), r.begin(), r.end());
        ++rows;
    }

    bool empty() const noexcept { return rows == 0; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

}  // namespace pfssl
