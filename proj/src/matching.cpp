#include "attr/loss.hpp"

#include <limits>

namespace attr {

namespace {

// Kuhn-Munkres with potentials, O(n^3), minimizing. Returns row -> col.
std::vector<int> hungarian_square(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n) + 1, 0), v(static_cast<size_t>(n) + 1, 0);
  std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<size_t>(n) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[static_cast<size_t>(j)] > 0) row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)]) - 1] = j - 1;
  return row_to_col;
}

}  // namespace

MatchResult hungarian_match(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int g = static_cast<int>(cost.cols());
  MatchResult res;
  if (n == 0 || g == 0) return res;

  const bool transposed = g > n;
  const int big = std::max(n, g);
  // Pad with zero-cost dummy columns; every real column still gets assigned.
  Eigen::MatrixXd square = Eigen::MatrixXd::Zero(big, big);
  if (transposed)
    square.block(0, 0, g, n) = cost.transpose();
  else
    square.block(0, 0, n, g) = cost;

  const std::vector<int> assign = hungarian_square(square);
  for (int r = 0; r < big; ++r) {
    const int c = assign[static_cast<size_t>(r)];
    const int query = transposed ? c : r;
    const int gt = transposed ? r : c;
    if (query < n && gt < g) res.pairs.emplace_back(query, gt);
  }
  std::sort(res.pairs.begin(), res.pairs.end());

  std::vector<char> matched(static_cast<size_t>(n), 0);
  for (const auto& [q, j] : res.pairs) matched[static_cast<size_t>(q)] = 1;
  for (int q = 0; q < n; ++q)
    if (!matched[static_cast<size_t>(q)]) res.unmatched_queries.push_back(q);
  return res;
}

}  // namespace attr
