#include "cdet/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cdet {

std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  int n = static_cast<int>(cost.size());
  int k = n > 0 ? static_cast<int>(cost[0].size()) : 0;
  if (k == 0) return {};
  if (k > n) {
    throw std::invalid_argument("hungarian: " + std::to_string(k) + " ground truths exceed " +
                                std::to_string(n) + " queries");
  }
  for (const auto& row : cost) {
    if (static_cast<int>(row.size()) != k) {
      throw std::invalid_argument("hungarian: ragged cost matrix");
    }
    for (double c : row) {
      if (!std::isfinite(c)) throw std::invalid_argument("hungarian: non-finite cost");
    }
  }

  // Potentials with augmenting paths; rows are ground truths, columns are
  // queries, 1-indexed with column 0 as the virtual start.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(k) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= k; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<size_t>(n) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      int i0 = p[static_cast<size_t>(j0)], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        double cur = cost[static_cast<size_t>(j) - 1][static_cast<size_t>(i0) - 1] -
                     u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
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
      int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> gt_to_query(static_cast<size_t>(k), -1);
  for (int j = 1; j <= n; ++j) {
    if (p[static_cast<size_t>(j)] != 0) {
      gt_to_query[static_cast<size_t>(p[static_cast<size_t>(j)]) - 1] = j - 1;
    }
  }
  return gt_to_query;
}

MatchResult conditional_match(const DetectionOutput& pred, const std::vector<GroundTruth>& gts,
                              const std::string& condition_word, const MatchWeights& w) {
  std::vector<int> keep;
  for (size_t g = 0; g < gts.size(); ++g) {
    if (gts[g].name == condition_word) keep.push_back(static_cast<int>(g));
  }
  MatchResult res;
  if (keep.empty()) return res;

  int n = static_cast<int>(pred.boxes.size());
  std::vector<std::vector<double>> cost(static_cast<size_t>(n),
                                        std::vector<double>(keep.size(), 0.0));
  for (int i = 0; i < n; ++i) {
    double p_matched = pred.match_probs.at(static_cast<int64_t>(i) * 2);
    for (size_t j = 0; j < keep.size(); ++j) {
      auto [l1, giou_loss] = box_loss(pred.boxes[static_cast<size_t>(i)],
                                      gts[static_cast<size_t>(keep[j])].box);
      cost[static_cast<size_t>(i)][j] = w.cls * (-p_matched) + w.box * (l1 + giou_loss);
    }
  }

  std::vector<int> assign = hungarian(cost);
  for (size_t j = 0; j < assign.size(); ++j) {
    res.pairs.emplace_back(assign[j], keep[j]);
  }
  std::sort(res.pairs.begin(), res.pairs.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
  return res;
}

}  // namespace cdet
