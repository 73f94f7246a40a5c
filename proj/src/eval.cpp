#include "cdet/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace cdet {

std::string normalize_name(const std::string& name,
                           const std::map<std::string, std::string>& synonyms) {
  size_t b = 0, e = name.size();
  while (b < e && std::isspace(static_cast<unsigned char>(name[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(name[e - 1]))) --e;
  std::string s = name.substr(b, e - b);
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  // Chase chains to a fixpoint so normalize(normalize(x)) == normalize(x);
  // the step cap breaks synonym cycles.
  for (size_t hops = 0; hops <= synonyms.size(); ++hops) {
    auto it = synonyms.find(s);
    if (it == synonyms.end() || it->second == s) break;
    s = it->second;
  }
  return s;
}

namespace {

bool name_eligible(const BoxPrediction& p, const EvalGt& g, int k) {
  int take = std::min<int>(k, static_cast<int>(p.names.size()));
  for (int i = 0; i < take; ++i) {
    if (p.names[static_cast<size_t>(i)] == g.name) return true;
  }
  return false;
}

std::vector<int> descending_score_order(const std::vector<BoxPrediction>& preds) {
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (preds[static_cast<size_t>(a)].score != preds[static_cast<size_t>(b)].score) {
      return preds[static_cast<size_t>(a)].score > preds[static_cast<size_t>(b)].score;
    }
    return a < b;
  });
  return order;
}

}  // namespace

MatchLabels classify_matches(const std::vector<BoxPrediction>& preds,
                             const std::vector<EvalGt>& gts, double iou_threshold, int k) {
  MatchLabels out;
  out.order = descending_score_order(preds);
  out.tp.assign(preds.size(), 0);
  std::vector<char> taken(gts.size(), 0);
  for (size_t oi = 0; oi < out.order.size(); ++oi) {
    const BoxPrediction& p = preds[static_cast<size_t>(out.order[oi])];
    int best = -1;
    double best_iou = 0;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      const EvalGt& g = gts[gi];
      if (taken[gi] || g.image_id != p.image_id || g.mask_index != p.mask_index) continue;
      if (!name_eligible(p, g, k)) continue;
      double v = iou(p.box, g.box);
      if (v < iou_threshold) continue;
      if (best < 0 || v > best_iou) {
        best = static_cast<int>(gi);
        best_iou = v;
      }
    }
    if (best >= 0) {
      taken[static_cast<size_t>(best)] = 1;
      out.tp[oi] = 1;
    }
  }
  return out;
}

double average_precision(const std::vector<char>& tp_by_descending_score, int total_gts,
                         bool* flagged) {
  if (flagged) *flagged = false;
  if (total_gts <= 0) {
    if (flagged) *flagged = true;
    return 0.0;
  }
  size_t n = tp_by_descending_score.size();
  if (n == 0) return 0.0;

  std::vector<double> precision(n), recall(n);
  int cum = 0;
  for (size_t i = 0; i < n; ++i) {
    cum += tp_by_descending_score[i] ? 1 : 0;
    precision[i] = static_cast<double>(cum) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(cum) / static_cast<double>(total_gts);
  }
  // Monotone precision envelope from the right, then read the 101 recall
  // points off the (non-decreasing) recall array.
  for (size_t i = n - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0;
  size_t j = 0;
  for (int r = 0; r <= 100; ++r) {
    double want = static_cast<double>(r) / 100.0;
    while (j < n && recall[j] < want - 1e-12) ++j;
    if (j < n) ap += precision[j];
  }
  return ap / 101.0;
}

double accuracy_at_k(const std::vector<ClozePrediction>& preds, const std::vector<EvalGt>& gts,
                     int k, std::vector<std::string>* flags) {
  if (gts.empty()) {
    if (flags) flags->push_back("accuracy: no ground-truth masks");
    return 0.0;
  }
  std::map<std::pair<int, int>, const ClozePrediction*> by_mask;
  for (const auto& p : preds) by_mask[{p.image_id, p.mask_index}] = &p;
  int correct = 0;
  for (const auto& g : gts) {
    auto it = by_mask.find({g.image_id, g.mask_index});
    if (it == by_mask.end()) {
      if (flags) {
        flags->push_back("accuracy: no prediction for image " + std::to_string(g.image_id) +
                         " mask " + std::to_string(g.mask_index));
      }
      continue;
    }
    const auto& names = it->second->names;
    int take = std::min<int>(k, static_cast<int>(names.size()));
    for (int i = 0; i < take; ++i) {
      if (names[static_cast<size_t>(i)] == g.name) {
        ++correct;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(gts.size());
}

EvalReport aggregate_metrics(const std::vector<ClozePrediction>& preds,
                             const std::vector<EvalGt>& gts, const EvalSettings& settings) {
  EvalReport r;
  r.n_gts = static_cast<int>(gts.size());
  r.n_masks = static_cast<int>(preds.size());

  r.acc1 = accuracy_at_k(preds, gts, 1, &r.flags);
  r.acc5 = accuracy_at_k(preds, gts, settings.k, &r.flags);

  std::vector<BoxPrediction> boxes;
  for (const auto& p : preds) {
    double top1 = p.probs.empty() ? 0.0 : p.probs[0];
    int n = p.det.match_probs.defined() ? p.det.match_probs.shape()[0] : 0;
    for (int i = 0; i < n; ++i) {
      double matched = p.det.match_probs.at(i * 2);  // (N, 2) row-major, column 0
      double score = settings.score_matched_only ? matched : matched * top1;
      if (score < settings.score_floor) continue;
      boxes.push_back(BoxPrediction{p.image_id, p.mask_index, p.names, score,
                                    p.det.boxes[static_cast<size_t>(i)]});
    }
  }
  r.n_box_predictions = static_cast<int>(boxes.size());

  bool flagged_zero = false;
  for (int t = 0; t < 10; ++t) {
    double thr = 0.50 + 0.05 * t;
    r.thresholds.push_back(thr);
    for (int k : {1, settings.k}) {
      MatchLabels labels = classify_matches(boxes, gts, thr, k);
      bool flag = false;
      double ap = average_precision(labels.tp, r.n_gts, &flag);
      if (flag && !flagged_zero) {
        r.flags.push_back("ap: zero ground truths, AP pinned to 0");
        flagged_zero = true;
      }
      (k == 1 ? r.ap1_per_threshold : r.ap5_per_threshold).push_back(ap);
    }
  }
  r.ap1 = std::accumulate(r.ap1_per_threshold.begin(), r.ap1_per_threshold.end(), 0.0) / 10.0;
  r.ap5 = std::accumulate(r.ap5_per_threshold.begin(), r.ap5_per_threshold.end(), 0.0) / 10.0;
  return r;
}

EvalReport evaluate(const ContextDet& model, const std::vector<CodeSample>& data,
                    const EvalSettings& settings) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  NoGradGuard ng;
  const Vocabulary& vocab = model.vocab();

  std::vector<ClozePrediction> preds;
  std::vector<EvalGt> gts;
  for (const auto& sample : data) {
    Tensor v = model.encoder().extract_features(sample.raster);
    bool with_z = model.config().use_visual_prefix && !settings.ablate_z;
    Tensor z = with_z ? model.encoder().local_tokens(v) : Tensor{};
    Tensor c = model.encoder().full_tokens(v);

    Cloze cloze = make_cloze(sample, vocab.mask_id());
    auto readouts = model.lm().cloze_fill(z, cloze.ids, vocab, settings.k);
    for (size_t j = 0; j < readouts.size(); ++j) {
      const auto& ro = readouts[j];
      const CodeAnnotation& ann =
          sample.annotations[static_cast<size_t>(cloze.annotation_order[j])];
      ClozePrediction p;
      p.image_id = sample.image_id;
      p.mask_index = ann.mask_index;
      for (size_t i = 0; i < ro.top_ids.size(); ++i) {
        p.names.push_back(normalize_name(vocab.word_of(ro.top_ids[i]), settings.synonyms));
        p.probs.push_back(ro.top_probs[i]);
      }
      Condition cond{p.names.empty() ? std::string{} : p.names[0], ro.position, ro.e};
      p.det = model.decoder().detect(c, cond);
      preds.push_back(std::move(p));
    }
    for (const auto& ann : sample.annotations) {
      gts.push_back(EvalGt{sample.image_id, ann.mask_index,
                           normalize_name(ann.name, settings.synonyms), ann.box});
    }
  }
  return aggregate_metrics(preds, gts, settings);
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["acc1"] = r.acc1;
  j["acc5"] = r.acc5;
  j["ap1"] = r.ap1;
  j["ap5"] = r.ap5;
  j["thresholds"] = r.thresholds;
  j["ap1_per_threshold"] = r.ap1_per_threshold;
  j["ap5_per_threshold"] = r.ap5_per_threshold;
  j["n_gts"] = r.n_gts;
  j["n_box_predictions"] = r.n_box_predictions;
  j["n_masks"] = r.n_masks;
  j["flags"] = r.flags;
  return j.dump(2);
}

std::string report_table(const EvalReport& r) {
  char buf[128];
  std::string out;
  out += "metric        value\n";
  auto row = [&](const char* name, double v) {
    std::snprintf(buf, sizeof(buf), "%-12s %8.4f\n", name, v);
    out += buf;
  };
  row("Acc@1", r.acc1);
  row("Acc@5", r.acc5);
  row("AP@1", r.ap1);
  row("AP@5", r.ap5);
  std::snprintf(buf, sizeof(buf), "masks %d  gts %d  boxes %d\n", r.n_masks, r.n_gts,
                r.n_box_predictions);
  out += buf;
  out += "thr     AP@1     AP@5\n";
  for (size_t i = 0; i < r.thresholds.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.2f  %7.4f  %7.4f\n", r.thresholds[i],
                  r.ap1_per_threshold[i], r.ap5_per_threshold[i]);
    out += buf;
  }
  for (const auto& f : r.flags) out += "note: " + f + "\n";
  return out;
}

}  // namespace cdet
