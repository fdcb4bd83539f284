#include "samqa/assignment.hpp"

#include <limits>

namespace samqa {
namespace {

// Requires rows <= cols. Potentials u (rows) and v (cols), 1-based with a
// virtual column 0 used as the augmenting path root.
std::vector<int> assign_wide(const CostMatrix& cost) {
    const std::size_t n = cost.rows, m = cost.cols;
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);

    for (std::size_t i = 1; i <= n; ++i) {
        owner[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = owner[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (owner[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> row_to_col(n, -1);
    for (std::size_t j = 1; j <= m; ++j)
        if (owner[j] != 0) row_to_col[owner[j] - 1] = static_cast<int>(j - 1);
    return row_to_col;
}

}  // namespace

std::vector<int> solve_assignment(const CostMatrix& cost) {
    if (cost.rows == 0 || cost.cols == 0) return std::vector<int>(cost.rows, -1);
    if (cost.rows <= cost.cols) return assign_wide(cost);

    CostMatrix transposed(cost.cols, cost.rows);
    for (std::size_t r = 0; r < cost.rows; ++r)
        for (std::size_t c = 0; c < cost.cols; ++c) transposed(c, r) = cost(r, c);
    const auto col_to_row = assign_wide(transposed);
    std::vector<int> row_to_col(cost.rows, -1);
    for (std::size_t c = 0; c < col_to_row.size(); ++c)
        if (col_to_row[c] >= 0) row_to_col[col_to_row[c]] = static_cast<int>(c);
    return row_to_col;
}

}  // namespace samqa
