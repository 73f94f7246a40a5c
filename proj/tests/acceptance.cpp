// Acceptance gate: nine go/no-go checks over the assembled pipeline, each
// printed as exactly one PASS/FAIL line. Oracles are independent of the
// library code they judge: enumeration, brute-force curves, hand-derived
// constants, and central finite differences.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cdet/box.hpp"
#include "cdet/checkpoint.hpp"
#include "cdet/data.hpp"
#include "cdet/eval.hpp"
#include "cdet/loss.hpp"
#include "cdet/matching.hpp"
#include "cdet/model.hpp"
#include "cdet/rng.hpp"
#include "cdet/synth.hpp"
#include "cdet/train.hpp"
#include "fd_check.hpp"

using namespace cdet;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int idx, const std::string& label, bool ok, const std::string& detail) {
  std::printf("criterion %d [%s] %s (%s)\n", idx, ok ? "PASS" : "FAIL", label.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor rand_tensor(const Shape& shape, Rng& rng, double std = 1.0) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return Tensor::from_values(shape, rng.normals(static_cast<size_t>(n), 0.0, std));
}

Box rand_box(Rng& rng) {
  double w = rng.uniform(0.05, 0.4);
  double h = rng.uniform(0.05, 0.4);
  return Box{rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h};
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity: every loss term and the weighted total against
// central finite differences, on loss-level micro instances plus two
// end-to-end instances that run the full encoder/LM/decoder graph.

DetectionSupervision synth_det(const Tensor& raw_logits, const Tensor& raw_box,
                               const std::vector<std::pair<int, int>>& pairs,
                               const std::vector<GroundTruth>& gts) {
  DetectionSupervision det;
  det.out.match_logits = raw_logits;
  det.out.match_probs = softmax(raw_logits, 1);
  det.out.box_params = sigmoid(raw_box);
  det.match.pairs = pairs;
  det.gts = gts;
  return det;
}

bool criterion1(std::string& detail) {
  auto t0 = Clock::now();
  int instances = 0, checks = 0;
  double worst = 0;

  // Term masks: cls, box, lm, noun alone, then everything at defaults.
  std::vector<LossWeights> masks(5);
  masks[0].box = masks[0].lm = masks[0].noun = 0;
  masks[1].cls = masks[1].lm = masks[1].noun = 0;
  masks[2].cls = masks[2].box = masks[2].noun = 0;
  masks[3].cls = masks[3].box = masks[3].lm = 0;

  Rng seeder(1009);
  for (int inst = 0; inst < 20; ++inst) {
    uint64_t s = seeder.next_u64();
    Rng mk(s);
    int nq = 3 + mk.randint(0, 3);
    int vsz = 5 + mk.randint(0, 4);
    Tensor logits = rand_tensor({nq, 2}, mk);
    Tensor raw_box = rand_tensor({nq, 4}, mk);
    Tensor lm_rows = rand_tensor({1 + mk.randint(0, 3), vsz}, mk);
    Tensor noun_rows = rand_tensor({1 + mk.randint(0, 3), 1}, mk);
    for (Tensor* t : {&logits, &raw_box, &lm_rows, &noun_rows}) t->set_requires_grad(true);

    std::vector<GroundTruth> gts = {GroundTruth{"a", rand_box(mk)}, GroundTruth{"a", rand_box(mk)}};
    std::vector<std::pair<int, int>> pairs = {{mk.randint(0, nq), 0}};
    {
      int q2 = mk.randint(0, nq);
      if (q2 != pairs[0].first) pairs.push_back({q2, 1});
    }
    std::vector<int> lm_targets;
    for (int r = 0; r < lm_rows.shape()[0]; ++r) lm_targets.push_back(mk.randint(0, vsz));
    std::vector<double> noun_targets;
    for (int r = 0; r < noun_rows.shape()[0]; ++r) noun_targets.push_back(mk.randint(0, 2));

    Parameter pl{"logits", logits, false}, pb{"box", raw_box, false}, pm{"lm", lm_rows, false},
        pn{"noun", noun_rows, false};
    ParamRefs params = {&pl, &pb, &pm, &pn};
    for (const auto& w : masks) {
      auto loss_fn = [&]() {
        auto det = synth_det(logits, raw_box, pairs, gts);
        return compute_loss({det}, lm_rows, lm_targets, noun_rows, noun_targets, w).graph;
      };
      auto res = cdet::testing::fd_check(loss_fn, params, 3, 1e-6, 1e-4, s ^ 0x9e3779b9);
      checks += res.checked;
      worst = std::max(worst, res.max_rel);
      if (!res.ok()) {
        detail = "loss-level instance " + std::to_string(inst) + " worst " + res.worst;
        return false;
      }
    }
    ++instances;
  }

  // End-to-end: image -> encoder -> prefix -> states -> condition -> decoder
  // -> Eq.7 total, differentiated against every model parameter.
  for (int inst = 0; inst < 2; ++inst) {
    ModelConfig mc;
    mc.encoder.image_size = 32;
    mc.encoder.patch = 16;
    mc.encoder.d = 8;
    mc.encoder.d1 = 16;
    mc.encoder.d2 = 16;
    mc.encoder.p = 4;
    mc.encoder.layers = 1;
    mc.encoder.heads = 2;
    mc.lm.d1 = 16;
    mc.lm.layers = 1;
    mc.lm.heads = 2;
    mc.lm.max_positions = 64;
    mc.decoder.n_queries = 3;
    mc.decoder.d1 = 16;
    mc.decoder.d2 = 16;
    mc.decoder.layers = 1;
    mc.decoder.heads = 2;
    Grammar g;
    Vocabulary vocab = vocab_from_grammar(g);
    ContextDet model(mc, vocab, 500 + static_cast<uint64_t>(inst));

    Rng mk(900 + static_cast<uint64_t>(inst));
    Image img(32, 32, RGB{});
    for (auto& px : img.data) px = static_cast<float>(mk.uniform());
    std::vector<int> ids = vocab.tokenize("a photo of a redsquare above a bluedisc");
    int mask_pos = 4;
    std::vector<int> masked = ids;
    masked[static_cast<size_t>(mask_pos)] = vocab.mask_id();
    std::vector<GroundTruth> gts = {GroundTruth{"redsquare", rand_box(mk)}};
    std::vector<std::pair<int, int>> pairs = {{mk.randint(0, mc.decoder.n_queries), 0}};
    LossWeights w;

    auto loss_fn = [&]() {
      Tensor v = model.encoder().extract_features(img);
      Tensor z = model.encoder().local_tokens(v);
      Tensor c = model.encoder().full_tokens(v);
      Tensor states = model.lm().states(model.prefix_for(z, masked));
      int off = model.text_offset_for(z);
      Tensor e = slice(states, 0, off + mask_pos, off + mask_pos + 1);
      DetectionSupervision det;
      det.out = model.decoder().detect(c, Condition{"redsquare", 0, e});
      det.match.pairs = pairs;
      det.gts = gts;
      Tensor lm_row = model.lm().vocab_logits(e);
      Tensor noun_row = model.lm().noun_logits(slice(states, 0, off, off + 2));
      return compute_loss({det}, lm_row, {vocab.id_of("redsquare")}, noun_row, {0.0, 1.0}, w)
          .graph;
    };
    auto res = cdet::testing::fd_check(loss_fn, model.params().refs(), 2, 1e-6, 1e-4,
                                       77 + static_cast<uint64_t>(inst));
    checks += res.checked;
    worst = std::max(worst, res.max_rel);
    if (!res.ok()) {
      detail = "end-to-end instance " + std::to_string(inst) + " worst " + res.worst;
      return false;
    }
    ++instances;
  }

  double secs = seconds_since(t0);
  std::ostringstream os;
  os << instances << " instances, " << checks << " coords, max rel " << worst << ", "
     << static_cast<int>(secs) << "s";
  detail = os.str();
  return instances >= 20 && secs < 120.0;
}

// ---------------------------------------------------------------------------
// 2. Matching optimality against exhaustive permutation search.

double brute_force_min(const std::vector<std::vector<double>>& cost) {
  int n = static_cast<int>(cost.size());
  int k = static_cast<int>(cost[0].size());
  std::vector<int> queries(static_cast<size_t>(n));
  std::iota(queries.begin(), queries.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0;
    for (int j = 0; j < k; ++j) total += cost[static_cast<size_t>(queries[static_cast<size_t>(j)])][static_cast<size_t>(j)];
    best = std::min(best, total);
  } while (std::next_permutation(queries.begin(), queries.end()));
  return best;
}

bool criterion2(std::string& detail) {
  Rng rng(2027);
  for (int it = 0; it < 200; ++it) {
    int n = 1 + rng.randint(0, 7);
    int k = 1 + rng.randint(0, n);
    std::vector<std::vector<double>> cost(static_cast<size_t>(n),
                                          std::vector<double>(static_cast<size_t>(k)));
    bool coarse = rng.uniform() < 0.3;  // tie-heavy matrices stress the solver
    for (auto& row : cost) {
      for (double& v : row) {
        v = rng.uniform(-5.0, 5.0);
        if (coarse) v = std::round(v);
      }
    }
    std::vector<int> got = hungarian(cost);
    double got_cost = 0;
    for (int j = 0; j < k; ++j) got_cost += cost[static_cast<size_t>(got[static_cast<size_t>(j)])][static_cast<size_t>(j)];
    double want = brute_force_min(cost);
    if (got_cost != want) {
      std::ostringstream os;
      os << "matrix " << it << " (" << n << "x" << k << "): got " << got_cost << " want " << want;
      detail = os.str();
      return false;
    }
  }
  detail = "200 matrices, exact equality";
  return true;
}

// ---------------------------------------------------------------------------
// 3. Conditional filter soundness: assigned ground truths always carry the
// condition's name.

bool criterion3(std::string& detail) {
  Rng rng(3001);
  const char* pool[5] = {"redsquare", "bluedisc", "greencross", "bluetriangle", "whitedisc"};
  int assignments = 0;
  for (int it = 0; it < 500; ++it) {
    int nq = 4 + rng.randint(0, 5);
    std::vector<double> probs;
    std::vector<double> params;
    std::vector<Box> boxes;
    for (int q = 0; q < nq; ++q) {
      double p = rng.uniform();
      probs.push_back(p);
      probs.push_back(1 - p);
      Box b = rand_box(rng);
      boxes.push_back(b);
      params.insert(params.end(), {b.cx, b.cy, b.w, b.h});
    }
    DetectionOutput out;
    out.match_probs = Tensor::from_values({nq, 2}, probs);
    out.box_params = Tensor::from_values({nq, 4}, params);
    out.boxes = boxes;

    std::vector<GroundTruth> gts;
    int ng = 1 + rng.randint(0, 6);
    for (int gi = 0; gi < ng; ++gi) {
      gts.push_back(GroundTruth{pool[rng.randint(0, 5)], rand_box(rng)});
    }
    // Sometimes condition on a name absent from the scene.
    std::string cond = rng.uniform() < 0.2 ? "orangecross" : pool[rng.randint(0, 5)];
    MatchResult res = conditional_match(out, gts, cond);
    int with_name = 0;
    for (const auto& g : gts) with_name += g.name == cond ? 1 : 0;
    int expect = std::min(with_name, nq);
    if (static_cast<int>(res.pairs.size()) != expect) {
      detail = "scene " + std::to_string(it) + ": pair count " +
               std::to_string(res.pairs.size()) + " expected " + std::to_string(expect);
      return false;
    }
    for (const auto& [q, gi] : res.pairs) {
      if (gts[static_cast<size_t>(gi)].name != cond) {
        detail = "scene " + std::to_string(it) + ": assigned gt named " +
                 gts[static_cast<size_t>(gi)].name + " under condition " + cond;
        return false;
      }
      ++assignments;
    }
  }
  detail = "500 scenes, " + std::to_string(assignments) + " assignments, zero violations";
  return true;
}

// ---------------------------------------------------------------------------
// 4. Geometry properties and the two hand-derived pins.

bool criterion4(std::string& detail) {
  Rng rng(4001);
  for (int it = 0; it < 10000; ++it) {
    Box a = rand_box(rng), b = rand_box(rng);
    double iab = iou(a, b), iba = iou(b, a);
    double gab = giou(a, b), gba = giou(b, a);
    bool ok = iab == iba && gab == gba && iab >= 0.0 && iab <= 1.0 && gab > -1.0 &&
              gab <= iab + 1e-15 && gab <= 1.0 && giou(a, a) == 1.0;
    if (!ok) {
      std::ostringstream os;
      os << "pair " << it << ": iou " << iab << "/" << iba << " giou " << gab << "/" << gba;
      detail = os.str();
      return false;
    }
  }
  Box p1 = Box::from_corners(0, 0, 2, 2), p2 = Box::from_corners(1, 1, 3, 3);
  if (std::fabs(iou(p1, p2) - 1.0 / 7.0) > 1e-12) {
    detail = "IoU pin off: " + std::to_string(iou(p1, p2));
    return false;
  }
  Box q1 = Box::from_corners(0, 0, 1, 1), q2 = Box::from_corners(1, 1, 2, 2);
  if (std::fabs(giou(q1, q2) - (-0.5)) > 1e-12) {
    detail = "GIoU pin off: " + std::to_string(giou(q1, q2));
    return false;
  }
  detail = "10000 pairs + both pins at 1e-12";
  return true;
}

// ---------------------------------------------------------------------------
// 5. Evaluator equals enumeration/PR oracles; top-5 supersets top-1.

double ap_oracle(const std::vector<char>& tp, int total_gts) {
  if (total_gts <= 0) return 0.0;
  double ap = 0;
  for (int r = 0; r <= 100; ++r) {
    double want = static_cast<double>(r) / 100.0;
    double best = 0;
    int cum = 0;
    for (size_t i = 0; i < tp.size(); ++i) {
      cum += tp[i] ? 1 : 0;
      double recall = static_cast<double>(cum) / total_gts;
      double precision = static_cast<double>(cum) / static_cast<double>(i + 1);
      if (recall >= want - 1e-12) best = std::max(best, precision);
    }
    ap += best;
  }
  return ap / 101.0;
}

MatchLabels match_oracle(const std::vector<BoxPrediction>& preds, const std::vector<EvalGt>& gts,
                         double thr, int k) {
  MatchLabels out;
  out.order.resize(preds.size());
  std::iota(out.order.begin(), out.order.end(), 0);
  std::sort(out.order.begin(), out.order.end(), [&](int a, int b) {
    if (preds[static_cast<size_t>(a)].score != preds[static_cast<size_t>(b)].score) {
      return preds[static_cast<size_t>(a)].score > preds[static_cast<size_t>(b)].score;
    }
    return a < b;
  });
  struct Pair {
    size_t pos;
    int gt;
    double v;
  };
  std::vector<Pair> pairs;
  for (size_t pos = 0; pos < out.order.size(); ++pos) {
    const auto& p = preds[static_cast<size_t>(out.order[pos])];
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      const auto& g = gts[gi];
      if (g.image_id != p.image_id || g.mask_index != p.mask_index) continue;
      int take = std::min<int>(k, static_cast<int>(p.names.size()));
      bool named = false;
      for (int i = 0; i < take; ++i) named = named || p.names[static_cast<size_t>(i)] == g.name;
      if (!named) continue;
      double v = iou(p.box, g.box);
      if (v >= thr) pairs.push_back({pos, static_cast<int>(gi), v});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.pos != b.pos) return a.pos < b.pos;
    if (a.v != b.v) return a.v > b.v;
    return a.gt < b.gt;
  });
  out.tp.assign(preds.size(), 0);
  std::vector<char> pred_done(preds.size(), 0), gt_done(gts.size(), 0);
  for (const auto& pr : pairs) {
    if (pred_done[pr.pos] || gt_done[static_cast<size_t>(pr.gt)]) continue;
    pred_done[pr.pos] = 1;
    gt_done[static_cast<size_t>(pr.gt)] = 1;
    out.tp[pr.pos] = 1;
  }
  return out;
}

bool criterion5(std::string& detail) {
  Rng rng(5003);
  const char* names[3] = {"a", "b", "c"};
  for (int set = 0; set < 100; ++set) {
    // Ground truths occupy distinct (image, mask) slots, mirroring the
    // one-annotation-per-mask shape of real cloze data.
    std::vector<std::pair<int, int>> slots;
    for (int img = 0; img < 2; ++img) {
      for (int m = 0; m < 3; ++m) slots.push_back({img, m});
    }
    for (size_t i = slots.size(); i > 1; --i) {
      std::swap(slots[i - 1], slots[static_cast<size_t>(rng.randint(0, static_cast<int>(i)))]);
    }
    std::vector<EvalGt> gts;
    int ng = 1 + rng.randint(0, 4);
    for (int i = 0; i < ng; ++i) {
      gts.push_back(EvalGt{slots[static_cast<size_t>(i)].first, slots[static_cast<size_t>(i)].second,
                           names[rng.randint(0, 3)], rand_box(rng)});
    }
    std::vector<BoxPrediction> preds;
    int np = 1 + rng.randint(0, 8);
    for (int i = 0; i < np; ++i) {
      BoxPrediction p;
      auto slot = slots[static_cast<size_t>(rng.randint(0, static_cast<int>(slots.size())))];
      p.image_id = slot.first;
      p.mask_index = slot.second;
      std::vector<int> perm = {0, 1, 2};
      std::swap(perm[0], perm[static_cast<size_t>(rng.randint(0, 3))]);
      std::swap(perm[1], perm[static_cast<size_t>(1 + rng.randint(0, 2))]);
      for (int q : perm) p.names.push_back(names[q]);
      p.score = rng.uniform();
      p.box = rand_box(rng);
      preds.push_back(p);
    }

    // Cloze predictions with live decoder outputs, one per slot, so the
    // aggregate path exercises its own box flattening.
    std::vector<ClozePrediction> cpreds;
    for (const auto& slot : slots) {
      ClozePrediction cp;
      cp.image_id = slot.first;
      cp.mask_index = slot.second;
      std::vector<int> perm = {0, 1, 2};
      std::swap(perm[0], perm[static_cast<size_t>(rng.randint(0, 3))]);
      std::swap(perm[1], perm[static_cast<size_t>(1 + rng.randint(0, 2))]);
      for (int q : perm) cp.names.push_back(names[q]);
      cp.probs = {0.5, 0.3, 0.2};
      int nq = 2 + rng.randint(0, 3);
      std::vector<double> mp;
      for (int q = 0; q < nq; ++q) {
        double pm = rng.uniform();
        mp.push_back(pm);
        mp.push_back(1 - pm);
        cp.det.boxes.push_back(rand_box(rng));
      }
      cp.det.match_probs = Tensor::from_values({nq, 2}, mp);
      cpreds.push_back(cp);
    }

    for (double thr : {0.5, 0.75}) {
      for (int k : {1, 3}) {
        MatchLabels got = classify_matches(preds, gts, thr, k);
        MatchLabels want = match_oracle(preds, gts, thr, k);
        if (got.order != want.order || got.tp != want.tp) {
          detail = "set " + std::to_string(set) + ": match labels diverge at thr " +
                   std::to_string(thr) + " k " + std::to_string(k);
          return false;
        }
        double ap_got = average_precision(got.tp, static_cast<int>(gts.size()));
        double ap_want = ap_oracle(want.tp, static_cast<int>(gts.size()));
        if (std::fabs(ap_got - ap_want) > 1e-9) {
          detail = "set " + std::to_string(set) + ": AP " + std::to_string(ap_got) + " vs oracle " +
                   std::to_string(ap_want);
          return false;
        }
      }
    }

    EvalSettings es;
    EvalReport r = aggregate_metrics(cpreds, gts, es);
    if (r.acc5 < r.acc1 - 1e-12 || r.ap5 < r.ap1 - 1e-12) {
      detail = "set " + std::to_string(set) + ": superset invariant broken acc " +
               std::to_string(r.acc1) + "/" + std::to_string(r.acc5) + " ap " +
               std::to_string(r.ap1) + "/" + std::to_string(r.ap5);
      return false;
    }
  }
  detail = "100 sets, exact match labels, AP within 1e-9, acc5>=acc1, ap5>=ap1";
  return true;
}

// ---------------------------------------------------------------------------
// 6./7. Overfit sanity and the local-token ablation, one shared run.

struct OverfitOutcome {
  bool trained = false;
  double train_acc1 = 0, train_ap1 = 0, val_acc1 = 0, val_acc1_ablated = 0;
  double minutes = 0;
  std::string error;
};

OverfitOutcome run_overfit() {
  OverfitOutcome oc;
  auto t0 = Clock::now();

  Grammar grammar;
  SynthConfig train_cfg;
  train_cfg.count = 200;
  train_cfg.min_objects = 2;
  train_cfg.max_objects = 2;
  SynthConfig val_cfg = train_cfg;
  val_cfg.count = 50;
  val_cfg.id_base = 100000;
  Rng data_rng(77);
  std::vector<CodeSample> train_data = generate_synthetic(data_rng, train_cfg, grammar);
  std::vector<CodeSample> val_data = generate_synthetic(data_rng, val_cfg, grammar);
  Vocabulary vocab = vocab_from_grammar(grammar);

  ModelConfig mc;
  mc.encoder.image_size = 64;
  mc.encoder.patch = 8;
  mc.encoder.d = 96;
  mc.encoder.d1 = 64;
  mc.encoder.d2 = 64;
  mc.encoder.p = 16;
  mc.encoder.layers = 2;
  mc.encoder.heads = 4;
  mc.lm.d1 = 64;
  mc.lm.layers = 2;
  mc.lm.heads = 4;
  mc.lm.max_positions = 96;
  mc.decoder.n_queries = 8;
  mc.decoder.d1 = 64;
  mc.decoder.d2 = 64;
  mc.decoder.layers = 2;
  mc.decoder.heads = 4;
  ContextDet model(mc, vocab, 3);

  TrainConfig tc;
  tc.steps = 2000;
  tc.batch_size = 32;
  tc.lr = 1.5e-3;
  tc.warmup_steps = 100;
  tc.lr_floor = 0.1;
  tc.weight_decay = 0.02;
  tc.seed = 3;
  tc.qa_prob = 0.1;
  tc.caption_prob = 0.1;
  tc.log_every = 500;
  Trainer trainer(model, tc);
  try {
    trainer.run(train_data);
  } catch (const std::exception& e) {
    oc.error = e.what();
    return oc;
  }
  oc.trained = true;

  EvalReport train_r = evaluate(model, train_data);
  EvalReport val_r = evaluate(model, val_data);
  EvalSettings ablated;
  ablated.ablate_z = true;
  EvalReport val_abl = evaluate(model, val_data, ablated);
  oc.train_acc1 = train_r.acc1;
  oc.train_ap1 = train_r.ap1;
  oc.val_acc1 = val_r.acc1;
  oc.val_acc1_ablated = val_abl.acc1;
  oc.minutes = seconds_since(t0) / 60.0;
  return oc;
}

// ---------------------------------------------------------------------------
// 8. Determinism and persistence at the training-loop level.

std::string loss_log(ContextDet& model, const TrainConfig& tc,
                     const std::vector<CodeSample>& data) {
  Trainer trainer(model, tc);
  std::ostringstream os;
  trainer.run(data, [&](const TrainLogEntry& e) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "step=%d total=%.17g cls=%.17g l1=%.17g giou=%.17g\n", e.step,
                  e.loss.total, e.loss.cls, e.loss.box_l1, e.loss.box_giou);
    os << buf;
  });
  return os.str();
}

ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.encoder.image_size = 64;
  mc.encoder.patch = 16;
  mc.encoder.d = 16;
  mc.encoder.d1 = 32;
  mc.encoder.d2 = 32;
  mc.encoder.p = 4;
  mc.encoder.layers = 1;
  mc.encoder.heads = 2;
  mc.lm.d1 = 32;
  mc.lm.layers = 1;
  mc.lm.heads = 2;
  mc.lm.max_positions = 96;
  mc.decoder.n_queries = 6;
  mc.decoder.d1 = 32;
  mc.decoder.d2 = 32;
  mc.decoder.layers = 1;
  mc.decoder.heads = 2;
  return mc;
}

bool criterion8(std::string& detail) {
  Grammar grammar;
  Vocabulary vocab = vocab_from_grammar(grammar);
  SynthConfig sc;
  sc.count = 12;
  Rng data_rng(901);
  std::vector<CodeSample> data = generate_synthetic(data_rng, sc, grammar);
  ModelConfig mc = tiny_model_config();

  TrainConfig tc;
  tc.steps = 8;
  tc.batch_size = 2;
  tc.seed = 51;
  tc.log_every = 1;

  ContextDet m1(mc, vocab, 9);
  ContextDet m2(mc, vocab, 9);
  std::string log1 = loss_log(m1, tc, data);
  std::string log2 = loss_log(m2, tc, data);
  if (log1 != log2) {
    detail = "same-seed loss logs differ";
    return false;
  }

  // Stop at 4, checkpoint, resume to 8; every parameter must land bit-equal
  // to the uninterrupted run.
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "cdet_acceptance";
  fs::create_directories(dir);
  std::string ckpt = (dir / "resume.ckpt").string();

  ContextDet half(mc, vocab, 9);
  TrainConfig tc_half = tc;
  tc_half.steps = 4;
  Trainer t_half(half, tc_half);
  t_half.run(data);
  save_checkpoint(ckpt, half, t_half.opt(), t_half.rng(), t_half.step_count());

  ContextDet resumed(mc, vocab, 9);
  TrainConfig tc_rest = tc;
  Trainer t_rest(resumed, tc_rest);
  int step = load_checkpoint(ckpt, resumed, t_rest.opt(), t_rest.rng());
  t_rest.set_step_count(step);
  t_rest.run(data);

  auto refs1 = m1.params().refs();
  auto refs2 = resumed.params().refs();
  for (size_t i = 0; i < refs1.size(); ++i) {
    if (refs1[i]->tensor.values() != refs2[i]->tensor.values()) {
      detail = "resumed parameters diverge at " + refs1[i]->name;
      return false;
    }
  }
  detail = "bit-identical logs over 8 steps; 4+4 resume equals 8 straight";
  return true;
}

// ---------------------------------------------------------------------------
// 9. Structural invariants of the assembled stacks.

bool criterion9(std::string& detail) {
  Grammar grammar;
  Vocabulary vocab = vocab_from_grammar(grammar);
  ModelConfig mc = tiny_model_config();
  ContextDet model(mc, vocab, 31);
  Rng rng(97);

  // Conditioning-row equality: with the queries zeroed the conditioned rows
  // all equal one shared offset; restored, each row is query + that offset.
  {
    const VisualDecoder& dec = model.decoder();
    Tensor e = rand_tensor({1, mc.decoder.d1}, rng);
    Tensor cq = dec.condition_queries(e);
    Parameter* qp = model.params().find("dec.queries");
    std::vector<double> saved = qp->tensor.values();
    std::fill(qp->tensor.values_mut().begin(), qp->tensor.values_mut().end(), 0.0);
    Tensor off = dec.condition_queries(e);
    qp->tensor.values_mut() = saved;
    int n = mc.decoder.n_queries, d2 = mc.decoder.d2;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d2; ++j) {
        if (off.at(i * d2 + j) != off.at(j)) {
          detail = "conditioning offset differs across query rows";
          return false;
        }
        if (cq.at(i * d2 + j) != qp->tensor.at(i * d2 + j) + off.at(j)) {
          detail = "conditioned query is not query plus shared offset";
          return false;
        }
      }
    }
  }

  // Per-condition independence: batched conditions equal one-at-a-time runs.
  {
    Tensor c = rand_tensor({model.encoder().m(), mc.decoder.d2}, rng);
    Condition c1{"redsquare", 0, rand_tensor({1, mc.decoder.d1}, rng)};
    Condition c2{"bluedisc", 1, rand_tensor({1, mc.decoder.d1}, rng)};
    auto batch = model.decoder().detect_for_conditions(c, {c1, c2});
    auto solo1 = model.decoder().detect(c, c1);
    auto solo2 = model.decoder().detect(c, c2);
    for (int64_t i = 0; i < solo1.match_probs.numel(); ++i) {
      if (batch[0].match_probs.at(i) != solo1.match_probs.at(i) ||
          batch[1].match_probs.at(i) != solo2.match_probs.at(i)) {
        detail = "batched conditions couple their outputs";
        return false;
      }
    }
    for (int64_t i = 0; i < solo1.box_params.numel(); ++i) {
      if (batch[0].box_params.at(i) != solo1.box_params.at(i) ||
          batch[1].box_params.at(i) != solo2.box_params.at(i)) {
        detail = "batched condition boxes diverge from solo runs";
        return false;
      }
    }
  }

  // Softmax normalization at 1e-9: decode distribution, match prob rows,
  // and the vocabulary softmax over random states.
  {
    std::vector<int> ids = vocab.tokenize("a photo of a redsquare");
    Tensor prefix = model.lm().build_prefix(Tensor{}, ids);
    auto step = model.lm().decode_step(prefix);
    double s = std::accumulate(step.dist.begin(), step.dist.end(), 0.0);
    if (std::fabs(s - 1.0) > 1e-9) {
      detail = "decode distribution sums to " + std::to_string(s);
      return false;
    }
    Tensor c = rand_tensor({model.encoder().m(), mc.decoder.d2}, rng);
    auto det = model.decoder().detect(c, Condition{"redsquare", 0,
                                                   rand_tensor({1, mc.decoder.d1}, rng)});
    for (int q = 0; q < mc.decoder.n_queries; ++q) {
      double row = det.match_probs.at(q * 2) + det.match_probs.at(q * 2 + 1);
      if (std::fabs(row - 1.0) > 1e-9) {
        detail = "match prob row " + std::to_string(q) + " sums to " + std::to_string(row);
        return false;
      }
    }
    Tensor states = model.lm().states(prefix);
    Tensor probs = softmax(model.lm().vocab_logits(states), 1);
    for (int r = 0; r < probs.shape()[0]; ++r) {
      double total = 0;
      for (int v = 0; v < probs.shape()[1]; ++v) total += probs.at(r * probs.shape()[1] + v);
      if (std::fabs(total - 1.0) > 1e-9) {
        detail = "vocab softmax row sums to " + std::to_string(total);
        return false;
      }
    }
  }

  // Prefix length p + l, and l alone when z is ablated.
  {
    std::vector<int> ids = vocab.tokenize("a photo of a redsquare above a bluedisc");
    Image img(3, 64, 64);
    for (auto& px : img.data) px = rng.uniform();
    Tensor v = model.encoder().extract_features(img);
    Tensor z = model.encoder().local_tokens(v);
    Tensor with_z = model.lm().build_prefix(z, ids);
    Tensor without = model.lm().build_prefix(Tensor{}, ids);
    int l = static_cast<int>(ids.size());
    if (with_z.shape()[0] != mc.encoder.p + l || without.shape()[0] != l) {
      detail = "prefix lengths " + std::to_string(with_z.shape()[0]) + "/" +
               std::to_string(without.shape()[0]) + " want " + std::to_string(mc.encoder.p + l) +
               "/" + std::to_string(l);
      return false;
    }
  }

  // Decode termination: emitted length never exceeds the budget, and a head
  // pinned toward [EOS] stops immediately.
  {
    std::vector<int> warm = vocab.tokenize("a photo of");
    auto out = model.lm().generate(model.lm().build_prefix(Tensor{}, warm), 5, vocab);
    if (static_cast<int>(out.ids.size()) > 5) {
      detail = "generation overran its budget";
      return false;
    }
    Parameter* hw = model.params().find("lm.vocab_head.w");
    Parameter* hb = model.params().find("lm.vocab_head.b");
    std::vector<double> saved_w = hw->tensor.values();
    std::vector<double> saved_b = hb->tensor.values();
    std::fill(hw->tensor.values_mut().begin(), hw->tensor.values_mut().end(), 0.0);
    std::fill(hb->tensor.values_mut().begin(), hb->tensor.values_mut().end(), 0.0);
    hb->tensor.values_mut()[static_cast<size_t>(vocab.eos_id())] = 10.0;
    auto pinned = model.lm().generate(model.lm().build_prefix(Tensor{}, warm), 5, vocab);
    hw->tensor.values_mut() = saved_w;
    hb->tensor.values_mut() = saved_b;
    if (!pinned.ids.empty() || !pinned.hit_eos) {
      detail = "pinned-EOS head still emitted tokens";
      return false;
    }
  }

  detail = "conditioning rows, independence, softmax, prefix length, termination";
  return true;
}

}  // namespace

int main() {
  std::string d;

  bool c1 = criterion1(d);
  report(1, "gradient fidelity vs central differences", c1, d);

  bool c2 = criterion2(d);
  report(2, "assignment optimality vs exhaustive search", c2, d);

  bool c3 = criterion3(d);
  report(3, "conditional filter soundness", c3, d);

  bool c4 = criterion4(d);
  report(4, "box geometry properties and pins", c4, d);

  bool c5 = criterion5(d);
  report(5, "evaluator vs enumeration and PR oracles", c5, d);

  OverfitOutcome oc = run_overfit();
  {
    std::ostringstream os;
    if (!oc.trained) {
      os << "training failed: " << oc.error;
    } else {
      os.setf(std::ios::fixed);
      os.precision(2);
      os << "train acc1 " << oc.train_acc1 << " ap1 " << oc.train_ap1 << ", held-out acc1 "
         << oc.val_acc1 << ", " << oc.minutes << " min";
    }
    bool c6 = oc.trained && oc.train_acc1 >= 95.0 && oc.train_ap1 >= 0.80 &&
              oc.val_acc1 >= 70.0 && oc.minutes < 15.0;
    report(6, "overfit sanity at 2000 steps", c6, os.str());

    std::ostringstream os7;
    os7.setf(std::ios::fixed);
    os7.precision(2);
    os7 << "held-out acc1 " << oc.val_acc1 << " -> " << oc.val_acc1_ablated << " without z";
    bool c7 = oc.trained && oc.val_acc1_ablated < oc.val_acc1;
    report(7, "removing local tokens degrades accuracy", c7,
           oc.trained ? os7.str() : "training failed");
  }

  bool c8 = criterion8(d);
  report(8, "seed determinism and resume identity", c8, d);

  bool c9 = criterion9(d);
  report(9, "structural invariants", c9, d);

  if (g_failures > 0) {
    std::printf("%d of 9 criteria failed\n", g_failures);
    return 1;
  }
  std::printf("all 9 criteria passed\n");
  return 0;
}
