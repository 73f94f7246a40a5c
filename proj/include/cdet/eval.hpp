// Cloze-test evaluation: name accuracy at k plus pooled detection AP over
// the 0.50:0.05:0.95 IoU sweep. Predictions carry a mask index; a detection
// only counts against a ground truth of the same mask.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "cdet/data.hpp"
#include "cdet/model.hpp"

namespace cdet {

struct EvalSettings {
  int k = 5;                 // candidate names per mask; accuracy/AP use 1 and k
  double score_floor = 0.05;  // boxes scored below this are dropped
  bool score_matched_only = false;  // rank by p_matched alone instead of the product
  bool ablate_z = false;            // build the language prefix without local tokens
  std::map<std::string, std::string> synonyms;  // applied after lowercase/trim
};

// Lowercase, trim ascii whitespace, then map through the synonym table once.
std::string normalize_name(const std::string& name,
                           const std::map<std::string, std::string>& synonyms = {});

// One cloze slot: ranked names plus the conditioned decoder output.
struct ClozePrediction {
  int image_id = 0;
  int mask_index = 0;
  std::vector<std::string> names;  // normalized, descending probability
  std::vector<double> probs;
  DetectionOutput det;
};

struct EvalGt {
  int image_id = 0;
  int mask_index = 0;
  std::string name;  // normalized
  Box box;
};

// One scored box flattened out of a ClozePrediction.
struct BoxPrediction {
  int image_id = 0;
  int mask_index = 0;
  std::vector<std::string> names;  // candidate set, descending
  double score = 0;
  Box box;
};

// Greedy TP/FP assignment in descending score order (ties: input order). A
// prediction is TP iff an unmatched gt shares image and mask index, its name
// is the top-1 (k=1) or among the top-k candidates, and IoU clears the
// threshold; the max-IoU such gt is taken, lowest index on ties.
struct MatchLabels {
  std::vector<int> order;  // prediction indices, the greedy visit order
  std::vector<char> tp;    // aligned with order
};
MatchLabels classify_matches(const std::vector<BoxPrediction>& preds,
                             const std::vector<EvalGt>& gts, double iou_threshold, int k);

// 101-point interpolated AP (COCO convention) over labels sorted by score
// descending. Zero ground truths yields 0; *flagged set when passed.
double average_precision(const std::vector<char>& tp_by_descending_score, int total_gts,
                         bool* flagged = nullptr);

// Fraction of ground-truth masks whose name sits in the top-k candidates,
// as a percentage. Masks without a prediction count as wrong and are flagged.
double accuracy_at_k(const std::vector<ClozePrediction>& preds, const std::vector<EvalGt>& gts,
                     int k, std::vector<std::string>* flags = nullptr);

struct EvalReport {
  double acc1 = 0, acc5 = 0;  // percentages
  double ap1 = 0, ap5 = 0;    // averaged over the IoU sweep
  std::vector<double> thresholds;  // 0.50 .. 0.95
  std::vector<double> ap1_per_threshold;
  std::vector<double> ap5_per_threshold;
  int n_gts = 0;
  int n_box_predictions = 0;
  int n_masks = 0;
  std::vector<std::string> flags;
};

// Runs the cloze readout and the conditioned decoder on every sample, then
// aggregates the four headline metrics. Deterministic; throws on an empty
// dataset.
EvalReport evaluate(const ContextDet& model, const std::vector<CodeSample>& data,
                    const EvalSettings& settings = {});

// Lower-level entry: metrics from already-extracted predictions.
EvalReport aggregate_metrics(const std::vector<ClozePrediction>& preds,
                             const std::vector<EvalGt>& gts, const EvalSettings& settings);

std::string report_json(const EvalReport& r);
std::string report_table(const EvalReport& r);

}  // namespace cdet
