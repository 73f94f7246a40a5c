#include "cdet/loss.hpp"

#include <iostream>
#include <stdexcept>

namespace cdet {

Tensor matched_class_loss(const DetectionSupervision& det, double negative_weight) {
  int n = det.out.match_logits.shape()[0];
  std::vector<int> target(static_cast<size_t>(n), 1);  // column 1 = not matched
  std::vector<double> weight(static_cast<size_t>(n), negative_weight);
  for (const auto& [query, gt] : det.match.pairs) {
    (void)gt;
    if (query < 0 || query >= n) throw std::out_of_range("loss: assigned query out of range");
    target[static_cast<size_t>(query)] = 0;
    weight[static_cast<size_t>(query)] = 1.0;
  }
  Tensor logp = pick(log_softmax(det.out.match_logits, 1), target);
  Tensor wt = Tensor::from_values({n}, weight);
  double wsum = 0;
  for (double v : weight) wsum += v;
  return mul_scalar(sum(mul(logp, wt)), -1.0 / wsum);
}

LossBreakdown compute_loss(const std::vector<DetectionSupervision>& dets,
                           const Tensor& lm_logit_rows, const std::vector<int>& lm_targets,
                           const Tensor& noun_logit_rows, const std::vector<double>& noun_targets,
                           const LossWeights& w) {
  LossBreakdown out;

  // Classification: mean over conditions of the per-condition weighted CE.
  Tensor cls = Tensor::scalar(0.0);
  if (!dets.empty()) {
    for (const auto& det : dets) cls = cls + matched_class_loss(det, w.negative_weight);
    cls = mul_scalar(cls, 1.0 / static_cast<double>(dets.size()));
  }

  // Box terms: pooled mean over every assigned pair across conditions.
  std::vector<Tensor> pred_rows;
  std::vector<double> gt_vals;
  for (const auto& det : dets) {
    for (const auto& [query, gt] : det.match.pairs) {
      if (gt < 0 || gt >= static_cast<int>(det.gts.size())) {
        throw std::out_of_range("loss: assigned ground truth out of range");
      }
      pred_rows.push_back(slice(det.out.box_params, 0, query, query + 1));
      const Box& b = det.gts[static_cast<size_t>(gt)].box;
      gt_vals.insert(gt_vals.end(), {b.cx, b.cy, b.w, b.h});
    }
  }
  Tensor box_l1 = Tensor::scalar(0.0);
  Tensor box_giou = Tensor::scalar(0.0);
  if (!pred_rows.empty()) {
    Tensor pred = pred_rows.size() == 1 ? pred_rows[0] : concat(pred_rows, 0);
    Tensor gt = Tensor::from_values({static_cast<int>(pred_rows.size()), 4}, gt_vals);
    box_l1 = mean(rows_l1(pred, gt));
    box_giou = Tensor::scalar(1.0) - mean(rows_giou(pred, gt));  // giou loss is 1 - giou
  }

  // Token cross entropy at supervised positions.
  Tensor lm_ce = Tensor::scalar(0.0);
  if (lm_targets.empty()) {
    std::cerr << "loss: no supervised language positions; lm term is 0\n";
  } else {
    if (!lm_logit_rows.defined() || lm_logit_rows.shape()[0] != static_cast<int>(lm_targets.size())) {
      throw std::invalid_argument("loss: lm logit rows do not line up with targets");
    }
    lm_ce = neg(mean(pick(log_softmax(lm_logit_rows, 1), lm_targets)));
  }

  // Noun head: binary cross entropy over the given positions.
  Tensor noun = Tensor::scalar(0.0);
  if (!noun_targets.empty()) {
    if (!noun_logit_rows.defined() ||
        noun_logit_rows.shape()[0] != static_cast<int>(noun_targets.size())) {
      throw std::invalid_argument("loss: noun logit rows do not line up with targets");
    }
    Tensor t = Tensor::from_values({static_cast<int>(noun_targets.size()), 1}, noun_targets);
    noun = bce_with_logits(noun_logit_rows, t);
  }

  Tensor box;
  switch (w.box_mode) {
    case LossWeights::BoxMode::sum:
      box = box_l1 + box_giou;
      break;
    case LossWeights::BoxMode::l1:
      box = box_l1;
      break;
    case LossWeights::BoxMode::giou:
      box = box_giou;
      break;
  }

  out.graph = mul_scalar(cls, w.cls) + mul_scalar(box, w.box) + mul_scalar(lm_ce, w.lm) +
              mul_scalar(noun, w.noun);
  out.cls = cls.item();
  out.box_l1 = box_l1.item();
  out.box_giou = box_giou.item();
  out.lm = lm_ce.item();
  out.noun = noun.item();
  out.total = out.graph.item();
  return out;
}

}  // namespace cdet
