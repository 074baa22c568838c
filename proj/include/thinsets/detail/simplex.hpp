#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "thinsets/error.hpp"

namespace thinsets::detail {

/// Dense tableau simplex for   max c.x  s.t.  A x <= b,  x >= 0,  b >= 0.
///
/// b >= 0 makes the slack basis feasible, so no phase one is needed. Bland's
/// rule guards against cycling on the heavily degenerate programs produced by
/// the bounded-Lipschitz dual (most right-hand sides are zero).
class DenseSimplex {
public:
    DenseSimplex(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), width_(cols + rows + 1),
          tab_((rows + 1) * (cols + rows + 1), 0.0), basis_(rows) {
        for (std::size_t r = 0; r < rows_; ++r) {
            at(r, cols_ + r) = 1.0;
            basis_[r] = cols_ + r;
        }
    }

    void set_objective(std::size_t col, double value) { at(rows_, col) = -value; }
    void set_coefficient(std::size_t row, std::size_t col, double value) { at(row, col) = value; }
    void set_rhs(std::size_t row, double value) {
        if (value < 0.0) throw InvalidArgument("simplex: negative right-hand side");
        at(row, width_ - 1) = value;
    }

    /// Runs to optimality and returns the optimal objective value.
    double solve(std::size_t max_pivots = 100000) {
        constexpr double eps = 1e-12;
        for (std::size_t it = 0; it < max_pivots; ++it) {
            // Bland: smallest index with negative reduced cost enters.
            std::size_t enter = width_;
            for (std::size_t c = 0; c + 1 < width_; ++c) {
                if (at(rows_, c) < -eps) {
                    enter = c;
                    break;
                }
            }
            if (enter == width_) return at(rows_, width_ - 1);

            std::size_t leave = rows_;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < rows_; ++r) {
                const double a = at(r, enter);
                if (a > eps) {
                    const double ratio = at(r, width_ - 1) / a;
                    if (ratio < best - eps ||
                        (std::abs(ratio - best) <= eps && leave < rows_ && basis_[r] < basis_[leave])) {
                        best = ratio;
                        leave = r;
                    }
                }
            }
            if (leave == rows_) throw NumericError("simplex: unbounded program");
            pivot(leave, enter);
        }
        throw NumericError("simplex: pivot limit reached");
    }

    /// Value of structural variable `col` at the current basis.
    [[nodiscard]] double value(std::size_t col) const {
        for (std::size_t r = 0; r < rows_; ++r)
            if (basis_[r] == col) return at(r, width_ - 1);
        return 0.0;
    }

private:
    double& at(std::size_t r, std::size_t c) { return tab_[r * width_ + c]; }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return tab_[r * width_ + c]; }

    void pivot(std::size_t row, std::size_t col) {
        const double p = at(row, col);
        for (std::size_t c = 0; c < width_; ++c) at(row, c) /= p;
        for (std::size_t r = 0; r <= rows_; ++r) {
            if (r == row) continue;
            const double f = at(r, col);
            if (f == 0.0) continue;
            for (std::size_t c = 0; c < width_; ++c) at(r, c) -= f * at(row, c);
        }
        basis_[row] = col;
    }

    std::size_t rows_;
    std::size_t cols_;
    std::size_t width_;
    std::vector<double> tab_;
    std::vector<std::size_t> basis_;
};

}  // namespace thinsets::detail
