// Conditional bipartite matching between decoder queries and ground truth.
// Only boxes whose name equals the condition word take part; everything the
// matcher touches is plain values, never the autodiff graph.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cdet/box.hpp"
#include "cdet/decoder.hpp"

namespace cdet {

// cost is (n_queries, n_gts) with n_gts <= n_queries; returns, per ground
// truth, the query index of the minimum-total-cost injective assignment.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);

struct GroundTruth {
  std::string name;
  Box box;  // normalized center-size
};

struct MatchWeights {
  double cls = 1.0;
  double box = 5.0;
};

struct MatchResult {
  // (query index, index into the original gts list), ordered by gt index.
  std::vector<std::pair<int, int>> pairs;
};

// Filters gts to the condition word, prices each (query, gt) pair at
// cls * (-p_matched) + box * (l1 + giou loss), and assigns optimally.
MatchResult conditional_match(const DetectionOutput& pred, const std::vector<GroundTruth>& gts,
                              const std::string& condition_word, const MatchWeights& w = {});

}  // namespace cdet
