#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "lpr/errors.hpp"

namespace lpr {

// Dense row-major matrix of doubles. Row vectors are 1 x n matrices.
class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols, double fill = 0.0) : rows_(rows), cols_(cols) {
        if (rows < 0 || cols < 0)
            throw ParamError("Matrix dims must be non-negative, got " + shape_str(rows, cols));
        data_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill);
    }

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = static_cast<int>(init.size());
        cols_ = rows_ > 0 ? static_cast<int>(init.begin()->size()) : 0;
        data_.reserve(static_cast<std::size_t>(rows_) * cols_);
        for (const auto &r : init) {
            if (static_cast<int>(r.size()) != cols_)
                throw ShapeError("ragged initializer: expected " + std::to_string(cols_) +
                                 " cols, got " + std::to_string(r.size()));
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double &operator()(int r, int c) noexcept { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const noexcept { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    double *row(int r) noexcept { return data_.data() + static_cast<std::size_t>(r) * cols_; }
    const double *row(int r) const noexcept { return data_.data() + static_cast<std::size_t>(r) * cols_; }

    double *data() noexcept { return data_.data(); }
    const double *data() const noexcept { return data_.data(); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Matrix &o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape() const { return shape_str(rows_, cols_); }

    static std::string shape_str(int r, int c) {
        return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
    }

    bool all_finite() const noexcept {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

inline Matrix zeros_like(const Matrix &m) { return Matrix(m.rows(), m.cols()); }

inline double max_abs_diff(const Matrix &a, const Matrix &b) {
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff: " + a.shape() + " vs " + b.shape());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

} // namespace lpr
