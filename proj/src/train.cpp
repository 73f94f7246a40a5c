#include "cdet/train.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cdet/matching.hpp"

namespace cdet {

namespace {

std::vector<GroundTruth> ground_truths(const CodeSample& s, bool flipped) {
  std::vector<GroundTruth> gts;
  gts.reserve(s.annotations.size());
  for (const auto& ann : s.annotations) {
    gts.push_back(GroundTruth{ann.name, flipped ? hflip(ann.box) : ann.box});
  }
  return gts;
}

}  // namespace

Trainer::Trainer(ContextDet& model, const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      opt_(model.params().refs(), AdamW::Options{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}),
      rng_(cfg.seed) {
  if (cfg.batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
  if (cfg.steps < 0) throw std::invalid_argument("train: steps must be non-negative");
  if (cfg.warmup_steps < 0) throw std::invalid_argument("train: warmup_steps must be non-negative");
  if (cfg.lr_floor < 0 || cfg.lr_floor > 1) {
    throw std::invalid_argument("train: lr_floor must lie in [0,1]");
  }
  if (cfg.flip_prob < 0 || cfg.flip_prob > 1 || cfg.qa_prob < 0 || cfg.caption_prob < 0 ||
      cfg.qa_prob + cfg.caption_prob > 1) {
    throw std::invalid_argument("train: task probabilities must lie in [0,1] and sum below 1");
  }
  if (cfg.freeze_lm) model_.set_lm_frozen(true);
  if (!model_.config().use_visual_prefix) {
    // With z ablated the local-token path never enters the graph; freeze it
    // so the optimizer does not demand gradients for it.
    for (Parameter* p : model_.params().refs()) {
      if (p->name.rfind("enc.local.", 0) == 0 || p->name.rfind("lm.z_proj", 0) == 0) {
        p->frozen = true;
      }
    }
  }
}

void Trainer::forward_cloze(const CodeSample& s, const Tensor& z, const Tensor& c,
                            const std::vector<GroundTruth>& gts, SamplePieces& out) const {
  const LanguageModel& lm = model_.lm();
  const Vocabulary& vocab = model_.vocab();
  Cloze cz = make_cloze(s, vocab.mask_id());
  Tensor states = lm.states(model_.prefix_for(z, cz.ids));
  int off = model_.text_offset_for(z);

  std::vector<int> mask_rows;
  for (size_t i = 0; i < cz.positions.size(); ++i) {
    const CodeAnnotation& ann = s.annotations[static_cast<size_t>(cz.annotation_order[i])];
    mask_rows.push_back(off + cz.positions[i]);
    out.lm_targets.push_back(vocab.id_of(ann.name));

    DetectionSupervision det;
    det.gts = gts;
    Tensor e = slice(states, 0, off + cz.positions[i], off + cz.positions[i] + 1);
    det.out = model_.decoder().detect(c, Condition{ann.name, ann.mask_index, e});
    det.match = conditional_match(det.out, det.gts, ann.name,
                                  MatchWeights{cfg_.weights.cls, cfg_.weights.box});
    out.dets.push_back(std::move(det));
  }
  out.lm_rows.push_back(lm.vocab_logits(take_rows(states, mask_rows)));

  int l = static_cast<int>(cz.ids.size());
  std::vector<int> noun_rows;
  for (int j = off > 0 ? 0 : 1; j < l; ++j) {
    noun_rows.push_back(off + j - 1);
    bool is_obj = cz.ids[static_cast<size_t>(j)] == vocab.mask_id() ||
                  vocab.is_noun(cz.ids[static_cast<size_t>(j)]);
    out.noun_targets.push_back(is_obj ? 1.0 : 0.0);
  }
  out.noun_rows.push_back(lm.noun_logits(take_rows(states, noun_rows)));
}

void Trainer::forward_caption(const CodeSample& s, const Tensor& z, const Tensor& c,
                              const std::vector<GroundTruth>& gts, SamplePieces& out) const {
  const LanguageModel& lm = model_.lm();
  const Vocabulary& vocab = model_.vocab();
  const std::vector<int>& ids = s.token_ids;
  Tensor states = lm.states(model_.prefix_for(z, ids));
  int off = model_.text_offset_for(z);
  int l = static_cast<int>(ids.size());

  // Next-token supervision: each state predicts the following token, the
  // last one predicts [EOS]; with a visual prefix the final z row predicts
  // the opening token too.
  std::vector<int> pred_rows;
  if (off > 0) {
    pred_rows.push_back(off - 1);
    out.lm_targets.push_back(ids[0]);
  }
  for (int j = 0; j + 1 < l; ++j) {
    pred_rows.push_back(off + j);
    out.lm_targets.push_back(ids[static_cast<size_t>(j) + 1]);
  }
  pred_rows.push_back(off + l - 1);
  out.lm_targets.push_back(vocab.eos_id());
  out.lm_rows.push_back(lm.vocab_logits(take_rows(states, pred_rows)));

  // A generated token is conditioned on the state that emitted it.
  for (const auto& ann : s.annotations) {
    int pos = ann.span_start;
    if (pos == 0 && off == 0) continue;  // no emitting state exists
    DetectionSupervision det;
    det.gts = gts;
    Tensor e = slice(states, 0, off + pos - 1, off + pos);
    det.out = model_.decoder().detect(c, Condition{ann.name, pos, e});
    det.match = conditional_match(det.out, det.gts, ann.name,
                                  MatchWeights{cfg_.weights.cls, cfg_.weights.box});
    out.dets.push_back(std::move(det));
  }

  std::vector<int> noun_rows;
  for (int j = off > 0 ? 0 : 1; j < l; ++j) {
    noun_rows.push_back(off + j - 1);
    out.noun_targets.push_back(vocab.is_noun(ids[static_cast<size_t>(j)]) ? 1.0 : 0.0);
  }
  out.noun_rows.push_back(lm.noun_logits(take_rows(states, noun_rows)));
}

void Trainer::forward_qa(const CodeSample& s, const Tensor& z, const Tensor& c,
                         const std::vector<GroundTruth>& gts, SamplePieces& out) {
  const LanguageModel& lm = model_.lm();
  const Vocabulary& vocab = model_.vocab();

  bool ask_present = rng_.uniform() < 0.5 && !s.annotations.empty();
  std::string name;
  if (ask_present) {
    name = s.annotations[static_cast<size_t>(
                             rng_.randint(0, static_cast<int>(s.annotations.size())))]
               .name;
  } else {
    std::vector<int> absent;
    for (int id : vocab.noun_ids()) {
      bool present = false;
      for (const auto& ann : s.annotations) {
        if (vocab.id_of(ann.name) == id) present = true;
      }
      if (!present) absent.push_back(id);
    }
    if (absent.empty()) {
      ask_present = true;
      name = s.annotations[0].name;
    } else {
      name = vocab.word_of(absent[static_cast<size_t>(
          rng_.randint(0, static_cast<int>(absent.size())))]);
    }
  }
  bool present = false;
  for (const auto& ann : s.annotations) {
    if (ann.name == name) present = true;
  }

  std::vector<int> ids = vocab.tokenize("question : does the " + name +
                                        " appear in this picture ? answer : " +
                                        (present ? "yes" : "no"));
  Tensor states = lm.states(model_.prefix_for(z, ids));
  int off = model_.text_offset_for(z);
  int l = static_cast<int>(ids.size());

  // Supervise the answer token and the closing [EOS].
  std::vector<int> pred_rows = {off + l - 2, off + l - 1};
  out.lm_targets.push_back(ids[static_cast<size_t>(l) - 1]);
  out.lm_targets.push_back(vocab.eos_id());
  out.lm_rows.push_back(lm.vocab_logits(take_rows(states, pred_rows)));

  // The class word inside the prompt owns the state at its own position.
  int name_pos = -1;
  int name_id = vocab.id_of(name);
  for (int j = 0; j < l; ++j) {
    if (ids[static_cast<size_t>(j)] == name_id) {
      name_pos = j;
      break;
    }
  }
  DetectionSupervision det;
  det.gts = gts;
  Tensor e = slice(states, 0, off + name_pos, off + name_pos + 1);
  det.out = model_.decoder().detect(c, Condition{name, name_pos, e});
  det.match = conditional_match(det.out, det.gts, name,
                                MatchWeights{cfg_.weights.cls, cfg_.weights.box});
  out.dets.push_back(std::move(det));

  std::vector<int> noun_rows;
  for (int j = off > 0 ? 0 : 1; j < l; ++j) {
    noun_rows.push_back(off + j - 1);
    out.noun_targets.push_back(vocab.is_noun(ids[static_cast<size_t>(j)]) ? 1.0 : 0.0);
  }
  out.noun_rows.push_back(lm.noun_logits(take_rows(states, noun_rows)));
}

double Trainer::lr_at(int step) const {
  if (cfg_.warmup_steps > 0 && step <= cfg_.warmup_steps) {
    return cfg_.lr * static_cast<double>(step) / cfg_.warmup_steps;
  }
  if (cfg_.lr_floor >= 1.0 || cfg_.steps <= cfg_.warmup_steps) return cfg_.lr;
  double span = static_cast<double>(cfg_.steps - cfg_.warmup_steps);
  double progress = static_cast<double>(step - cfg_.warmup_steps) / span;
  progress = std::min(1.0, std::max(0.0, progress));
  double shape = 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
  return cfg_.lr * (cfg_.lr_floor + (1.0 - cfg_.lr_floor) * shape);
}

LossBreakdown Trainer::step(const std::vector<const CodeSample*>& batch) {
  if (batch.empty()) throw std::invalid_argument("train: empty batch");
  SamplePieces all;
  for (const CodeSample* sp : batch) {
    double task_draw = rng_.uniform();
    bool flip = rng_.uniform() < cfg_.flip_prob;
    const Image img = flip ? hflip(sp->raster) : sp->raster;
    std::vector<GroundTruth> gts = ground_truths(*sp, flip);

    Tensor v = model_.encoder().extract_features(img);
    Tensor z = model_.config().use_visual_prefix ? model_.encoder().local_tokens(v) : Tensor{};
    Tensor c = model_.encoder().full_tokens(v);

    if (task_draw < cfg_.qa_prob) {
      forward_qa(*sp, z, c, gts, all);
    } else if (task_draw < cfg_.qa_prob + cfg_.caption_prob) {
      forward_caption(*sp, z, c, gts, all);
    } else {
      forward_cloze(*sp, z, c, gts, all);
    }
  }

  Tensor lm_rows = all.lm_rows.empty()
                       ? Tensor{}
                       : (all.lm_rows.size() == 1 ? all.lm_rows[0] : concat(all.lm_rows, 0));
  Tensor noun_rows = all.noun_rows.empty()
                         ? Tensor{}
                         : (all.noun_rows.size() == 1 ? all.noun_rows[0] : concat(all.noun_rows, 0));
  LossBreakdown lb =
      compute_loss(all.dets, lm_rows, all.lm_targets, noun_rows, all.noun_targets, cfg_.weights);
  if (!std::isfinite(lb.total)) {
    std::ostringstream os;
    os << "train: non-finite loss at step " << step_count_ + 1 << " (cls=" << lb.cls
       << " box_l1=" << lb.box_l1 << " box_giou=" << lb.box_giou << " lm=" << lb.lm
       << " noun=" << lb.noun << ")";
    throw std::runtime_error(os.str());
  }
  opt_.zero_grad();
  backward(lb.graph);
  opt_.set_lr(lr_at(step_count_ + 1));
  opt_.step();
  ++step_count_;
  return lb;
}

void Trainer::run(const std::vector<CodeSample>& data,
                  const std::function<void(const TrainLogEntry&)>& on_log) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  while (step_count_ < cfg_.steps) {
    std::vector<const CodeSample*> batch;
    batch.reserve(static_cast<size_t>(cfg_.batch_size));
    for (int b = 0; b < cfg_.batch_size; ++b) {
      batch.push_back(&data[static_cast<size_t>(rng_.randint(0, static_cast<int>(data.size())))]);
    }
    LossBreakdown lb = step(batch);
    if (on_log && (step_count_ % cfg_.log_every == 0 || step_count_ == cfg_.steps)) {
      on_log(TrainLogEntry{step_count_, lb});
    }
  }
}

}  // namespace cdet
