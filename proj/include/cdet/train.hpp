// Optimization loop: task sampling, augmentation, teacher-forced forward,
// conditional matching, loss, AdamW. One Rng drives every stochastic choice
// so a restored (seed, counter) replays the run exactly.
#pragma once

#include <functional>
#include <vector>

#include "cdet/data.hpp"
#include "cdet/loss.hpp"
#include "cdet/model.hpp"
#include "cdet/optimizer.hpp"

namespace cdet {

struct TrainConfig {
  int steps = 600;
  int batch_size = 4;
  double lr = 1e-3;          // desk-scale default; 1e-4 matches the large-scale recipe
  int warmup_steps = 0;      // linear ramp 0 -> lr over this many steps
  double lr_floor = 1.0;     // cosine decay to lr * lr_floor; 1.0 keeps lr constant
  double weight_decay = 0.05;
  uint64_t seed = 0;
  double flip_prob = 0.5;    // horizontal flip with mirrored boxes
  double qa_prob = 0.2;      // presence-question samples
  double caption_prob = 0.2; // next-token captioning samples
  bool freeze_lm = false;
  LossWeights weights;
  int log_every = 25;
};

struct TrainLogEntry {
  int step = 0;  // 1-based
  LossBreakdown loss;
};

class Trainer {
 public:
  Trainer(ContextDet& model, const TrainConfig& cfg);

  // One forward/backward/update over explicit samples (tests use this).
  LossBreakdown step(const std::vector<const CodeSample*>& batch);

  // steps() batches sampled with replacement from data.
  void run(const std::vector<CodeSample>& data,
           const std::function<void(const TrainLogEntry&)>& on_log = {});

  // Scheduled rate for a 1-based step; pure in (cfg, step) so a resumed run
  // recomputes the same values it would have seen.
  double lr_at(int step) const;

  AdamW& opt() { return opt_; }
  Rng& rng() { return rng_; }
  ContextDet& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  int step_count() const { return step_count_; }
  void set_step_count(int s) { step_count_ = s; }

 private:
  struct SamplePieces {
    std::vector<DetectionSupervision> dets;
    std::vector<Tensor> lm_rows;   // (1, V) logit rows
    std::vector<int> lm_targets;
    std::vector<Tensor> noun_rows;  // (1, 1) logit rows
    std::vector<double> noun_targets;
  };
  void forward_cloze(const CodeSample& s, const Tensor& z, const Tensor& c,
                     const std::vector<GroundTruth>& gts, SamplePieces& out) const;
  void forward_caption(const CodeSample& s, const Tensor& z, const Tensor& c,
                       const std::vector<GroundTruth>& gts, SamplePieces& out) const;
  void forward_qa(const CodeSample& s, const Tensor& z, const Tensor& c,
                  const std::vector<GroundTruth>& gts, SamplePieces& out);

  ContextDet& model_;
  TrainConfig cfg_;
  AdamW opt_;
  Rng rng_;
  int step_count_ = 0;
};

}  // namespace cdet
