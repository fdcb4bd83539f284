#pragma once

#include <cstddef>
#include <vector>

namespace samqa {

/// Dense row-major cost matrix.
struct CostMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    CostMatrix() = default;
    CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Minimum-cost rectangular assignment (shortest augmenting path Hungarian method
/// with potentials). Returns, per row, the assigned column or -1 when the matrix
/// has more rows than columns and the row is left over. Exactly min(rows, cols)
/// pairs are assigned.
std::vector<int> solve_assignment(const CostMatrix& cost);

}  // namespace samqa
