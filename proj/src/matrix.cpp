// Copyright (C) 2026 The mixkvq Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "mixkvq/matrix.hpp"

#include <algorithm>

#include "mixkvq/error.hpp"

namespace mixkvq {

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m;
    for (const auto& r : rows) {
        m.push_row(r);
    }
    return m;
}

void Matrix::push_row(std::span<const double> values) {
    if (rows_ == 0 && data_.empty() && cols_ == 0) {
        cols_ = values.size();
    }
    require(values.size() == cols_, ErrorCode::InvalidInput, "row width does not match matrix columns");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

void Matrix::clear_rows() noexcept {
    data_.clear();
    rows_ = 0;
}

Matrix Matrix::slice_rows(std::size_t begin, std::size_t end) const {
    require(begin <= end && end <= rows_, ErrorCode::InvalidInput, "row slice out of range");
    Matrix out(end - begin, cols_);
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
              data_.begin() + static_cast<std::ptrdiff_t>(end * cols_), out.data_.begin());
    return out;
}

std::vector<double> Matrix::column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        out[r] = (*this)(r, c);
    }
    return out;
}

}  // namespace mixkvq
