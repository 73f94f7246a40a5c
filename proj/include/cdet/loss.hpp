// Loss assembly over detection, language, and noun supervision.
#pragma once

#include <vector>

#include "cdet/matching.hpp"

namespace cdet {

struct LossWeights {
  double cls = 1.0;
  double box = 5.0;
  double lm = 1.0;
  double noun = 1.0;
  // Queries left unassigned train toward not-matched at this weight; keeps
  // 20 mostly-negative queries from drowning the couple of positives.
  double negative_weight = 0.1;

  enum class BoxMode { sum, l1, giou };
  BoxMode box_mode = BoxMode::sum;
};

// One conditioned decoder pass plus its assignment.
struct DetectionSupervision {
  DetectionOutput out;
  MatchResult match;
  std::vector<GroundTruth> gts;  // list the matcher saw; pairs index into it
};

struct LossBreakdown {
  double cls = 0;
  double box_l1 = 0;
  double box_giou = 0;
  double lm = 0;
  double noun = 0;
  double total = 0;
  Tensor graph;  // differentiable total, always defined
};

// Weighted two-class cross entropy over all queries of one condition.
Tensor matched_class_loss(const DetectionSupervision& det, double negative_weight);

// lm_logit_rows: (S, V) at supervised positions with their target ids;
// noun_logit_rows: (T, 1) with 0/1 targets. Either side may be empty via a
// default-constructed Tensor with an empty target list.
LossBreakdown compute_loss(const std::vector<DetectionSupervision>& dets,
                           const Tensor& lm_logit_rows, const std::vector<int>& lm_targets,
                           const Tensor& noun_logit_rows, const std::vector<double>& noun_targets,
                           const LossWeights& w);

}  // namespace cdet
