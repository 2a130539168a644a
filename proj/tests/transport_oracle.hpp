#pragma once

#include <cmath>
#include <limits>
#include <vector>

namespace trlhf::testing {

// All ways to place `units` indistinguishable units into `bins` bins.
inline std::vector<std::vector<int>> compositions(int units, int bins) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(bins, 0);
  auto rec = [&](auto&& self, int k, int left) -> void {
    if (k == bins - 1) {
      cur[k] = left;
      out.push_back(cur);
      return;
    }
    for (int v = 0; v <= left; ++v) {
      cur[k] = v;
      self(self, k + 1, left - v);
    }
  };
  rec(rec, 0, units);
  return out;
}

// Minimum cost of moving integer masses a onto b, where a unit moved from bin i
// to bin j costs |pos[i] - pos[j]| / units. Every integer plan is enumerated,
// with branch-and-bound pruning on the running cost.
inline double min_transport_cost(const std::vector<int>& a, const std::vector<int>& b,
                                 const std::vector<double>& pos, int units) {
  const int n = static_cast<int>(a.size());
  std::vector<int> capacity = b;
  double best = std::numeric_limits<double>::infinity();
  auto rec = [&](auto&& self, int i, int j, int row_left, double cost) -> void {
    if (cost >= best) return;
    if (i == n) {
      best = cost;
      return;
    }
    if (row_left == 0) {
      self(self, i + 1, 0, i + 1 < n ? a[i + 1] : 0, cost);
      return;
    }
    if (j == n) return;
    const double d = std::abs(pos[i] - pos[j]);
    for (int t = std::min(row_left, capacity[j]); t >= 0; --t) {
      capacity[j] -= t;
      self(self, i, j + 1, row_left - t, cost + t * d);
      capacity[j] += t;
    }
  };
  rec(rec, 0, 0, a[0], 0.0);
  return best / units;
}

}  // namespace trlhf::testing
