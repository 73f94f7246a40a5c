#include "cdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cdet/rng.hpp"
#include "cdet/synth.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cdet;

namespace {

// Reference AP straight from the definition: for each of the 101 recall
// points, scan every prefix for the best precision at recall >= r.
double ap_oracle(const std::vector<char>& tp, int total_gts) {
  if (total_gts <= 0) return 0.0;
  size_t n = tp.size();
  double ap = 0;
  for (int r = 0; r <= 100; ++r) {
    double want = static_cast<double>(r) / 100.0;
    double best = 0;
    int cum = 0;
    for (size_t i = 0; i < n; ++i) {
      cum += tp[i] ? 1 : 0;
      double recall = static_cast<double>(cum) / total_gts;
      double precision = static_cast<double>(cum) / static_cast<double>(i + 1);
      if (recall >= want - 1e-12) best = std::max(best, precision);
    }
    ap += best;
  }
  return ap / 101.0;
}

// Reference matcher: materialize every eligible (pred, gt, iou) pair, order
// pairs by (greedy pred position, iou desc, gt index asc), then sweep.
MatchLabels match_oracle(const std::vector<BoxPrediction>& preds, const std::vector<EvalGt>& gts,
                         double thr, int k) {
  MatchLabels out;
  out.order.resize(preds.size());
  std::iota(out.order.begin(), out.order.end(), 0);
  std::sort(out.order.begin(), out.order.end(), [&](int a, int b) {
    if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
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
      for (int i = 0; i < take; ++i) named = named || p.names[i] == g.name;
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
    if (pred_done[pr.pos] || gt_done[pr.gt]) continue;
    pred_done[pr.pos] = 1;
    gt_done[pr.gt] = 1;
    out.tp[pr.pos] = 1;
  }
  return out;
}

Box rand_box(Rng& rng) {
  return Box{0.3 + 0.4 * rng.uniform(), 0.3 + 0.4 * rng.uniform(),
             0.08 + 0.32 * rng.uniform(), 0.08 + 0.32 * rng.uniform()};
}

struct Scene {
  std::vector<BoxPrediction> preds;
  std::vector<EvalGt> gts;
};

// Gts get distinct (image, mask) slots, matching the one-annotation-per-mask
// data contract the superset invariants rely on.
Scene random_scene(Rng& rng) {
  Scene s;
  const char* names[3] = {"a", "b", "c"};
  std::vector<std::pair<int, int>> slots;
  for (int img = 0; img < 2; ++img) {
    for (int m = 0; m < 3; ++m) slots.push_back({img, m});
  }
  for (size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[rng.randint(0, (int)i)]);
  int n_gts = 1 + rng.randint(0, 4);
  for (int i = 0; i < n_gts; ++i) {
    s.gts.push_back(EvalGt{slots[i].first, slots[i].second, names[rng.randint(0, 3)],
                           rand_box(rng)});
  }
  int n_preds = 1 + rng.randint(0, 8);
  for (int i = 0; i < n_preds; ++i) {
    BoxPrediction p;
    auto slot = slots[rng.randint(0, (int)slots.size())];
    p.image_id = slot.first;
    p.mask_index = slot.second;
    std::vector<int> perm = {0, 1, 2};
    std::swap(perm[0], perm[rng.randint(0, 3)]);
    std::swap(perm[1], perm[1 + rng.randint(0, 2)]);
    for (int q : perm) p.names.push_back(names[q]);
    p.score = rng.uniform();
    p.box = rand_box(rng);
    s.preds.push_back(p);
  }
  return s;
}

}  // namespace

TEST_CASE("name normalization lowercases, trims, chases synonym chains, idempotent") {
  CHECK(normalize_name("  RedSquare \t") == "redsquare");
  CHECK(normalize_name("") == "");
  std::map<std::string, std::string> syn = {{"crimsonbox", "redsquare"},
                                            {"scarletbox", "crimsonbox"}};
  CHECK(normalize_name(" ScarletBox", syn) == "redsquare");
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    std::string s;
    int len = rng.randint(0, 12);
    for (int j = 0; j < len; ++j) s.push_back(static_cast<char>(32 + rng.randint(0, 95)));
    std::string once = normalize_name(s, syn);
    CHECK(normalize_name(once, syn) == once);
  }
}

TEST_CASE("accuracy pins: all correct, two of three, missing prediction") {
  auto mk_pred = [](int img, int mask, std::vector<std::string> names) {
    ClozePrediction p;
    p.image_id = img;
    p.mask_index = mask;
    p.names = std::move(names);
    p.probs.assign(p.names.size(), 0.5);
    return p;
  };
  std::vector<EvalGt> gts = {{0, 0, "a", {}}, {0, 1, "b", {}}, {1, 0, "c", {}}};

  std::vector<ClozePrediction> all = {mk_pred(0, 0, {"a", "b"}), mk_pred(0, 1, {"b", "a"}),
                                      mk_pred(1, 0, {"c", "a"})};
  CHECK(accuracy_at_k(all, gts, 1) == 100.0);

  std::vector<ClozePrediction> two = {mk_pred(0, 0, {"a", "b"}), mk_pred(0, 1, {"x", "b"}),
                                      mk_pred(1, 0, {"c", "a"})};
  CHECK(accuracy_at_k(two, gts, 1) == doctest::Approx(200.0 / 3.0).epsilon(1e-12));
  CHECK(accuracy_at_k(two, gts, 2) == 100.0);  // "b" recovered in the top 2

  std::vector<std::string> flags;
  std::vector<ClozePrediction> missing = {mk_pred(0, 0, {"a"})};
  CHECK(accuracy_at_k(missing, gts, 1, &flags) == doctest::Approx(100.0 / 3.0).epsilon(1e-12));
  CHECK(flags.size() == 2);

  flags.clear();
  CHECK(accuracy_at_k(all, {}, 1, &flags) == 0.0);
  CHECK(flags.size() == 1);
}

TEST_CASE("match classification pins: perfect, wrong mask, top-5 rescue") {
  Box b{0.5, 0.5, 0.2, 0.2};
  std::vector<EvalGt> gts = {{0, 0, "a", b}};

  BoxPrediction perfect{0, 0, {"a", "b", "c", "d", "e"}, 0.9, b};
  for (int t = 0; t < 10; ++t) {
    auto lab = classify_matches({perfect}, gts, 0.50 + 0.05 * t, 1);
    CHECK(lab.tp == std::vector<char>{1});
  }

  BoxPrediction wrong_mask = perfect;
  wrong_mask.mask_index = 1;
  CHECK(classify_matches({wrong_mask}, gts, 0.5, 1).tp == std::vector<char>{0});

  BoxPrediction second_name{0, 0, {"x", "a"}, 0.9, b};
  CHECK(classify_matches({second_name}, gts, 0.5, 1).tp == std::vector<char>{0});
  CHECK(classify_matches({second_name}, gts, 0.5, 5).tp == std::vector<char>{1});

  // Each gt is consumed once: the higher-scored of two perfect preds wins.
  BoxPrediction dup = perfect;
  dup.score = 0.8;
  auto lab = classify_matches({dup, perfect}, gts, 0.5, 1);
  CHECK(lab.order == std::vector<int>{1, 0});
  CHECK(lab.tp == std::vector<char>{1, 0});
}

TEST_CASE("average precision pins and the hand-built PR curve") {
  CHECK(average_precision({1, 1}, 2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(average_precision({}, 3) == 0.0);

  bool flagged = false;
  CHECK(average_precision({1}, 0, &flagged) == 0.0);
  CHECK(flagged);

  // [TP, FP, TP] over 2 gts: envelope precisions (1, 2/3, 2/3); recall hits
  // 0.5 at rank 1 and 1.0 at rank 3 -> 51 points of 1 plus 50 of 2/3.
  double want = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
  CHECK(average_precision({1, 0, 1}, 2) == doctest::Approx(want).epsilon(1e-12));

  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    int gts = 1 + rng.randint(0, 10);
    int n = rng.randint(0, 30);
    std::vector<char> tp(static_cast<size_t>(n));
    for (auto& t : tp) t = rng.uniform() < 0.4 ? 1 : 0;
    CHECK(average_precision(tp, gts) == doctest::Approx(ap_oracle(tp, gts)).epsilon(1e-9));
  }
}

TEST_CASE("greedy matcher equals the pair-enumeration oracle on random scenes") {
  Rng rng(33);
  for (int scene = 0; scene < 100; ++scene) {
    Scene s = random_scene(rng);
    for (double thr : {0.5, 0.75}) {
      for (int k : {1, 3}) {
        MatchLabels got = classify_matches(s.preds, s.gts, thr, k);
        MatchLabels want = match_oracle(s.preds, s.gts, thr, k);
        REQUIRE(got.order == want.order);
        CHECK(got.tp == want.tp);
        int tps = 0;
        for (char t : got.tp) tps += t;
        CHECK(tps <= static_cast<int>(std::min(s.preds.size(), s.gts.size())));
      }
    }
  }
}

TEST_CASE("AP responds monotonically to threshold and candidate depth") {
  Rng rng(41);
  for (int scene = 0; scene < 60; ++scene) {
    Scene s = random_scene(rng);
    double prev1 = 2.0, prev5 = 2.0;
    for (int t = 0; t < 10; ++t) {
      double thr = 0.50 + 0.05 * t;
      double ap1 = average_precision(classify_matches(s.preds, s.gts, thr, 1).tp,
                                     static_cast<int>(s.gts.size()));
      double ap5 = average_precision(classify_matches(s.preds, s.gts, thr, 3).tp,
                                     static_cast<int>(s.gts.size()));
      CHECK(ap5 >= ap1 - 1e-12);
      CHECK(ap1 <= prev1 + 1e-12);
      CHECK(ap5 <= prev5 + 1e-12);
      prev1 = ap1;
      prev5 = ap5;
    }
  }
}

TEST_CASE("full evaluation on a tiny untrained model: shape, ranges, formats") {
  ModelConfig mc;
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
  mc.decoder.d1 = 32;
  mc.decoder.d2 = 32;
  mc.decoder.n_queries = 6;
  mc.decoder.layers = 1;
  mc.decoder.heads = 2;
  Vocabulary vocab = vocab_from_grammar(Grammar{});
  ContextDet model(mc, vocab, 3);

  Rng rng(7);
  SynthConfig sc;
  sc.count = 4;
  sc.max_objects = 2;
  auto data = generate_synthetic(rng, sc);

  CHECK_THROWS_AS(evaluate(model, {}), std::invalid_argument);

  EvalReport r = evaluate(model, data);
  int total_anns = 0;
  for (const auto& s : data) total_anns += static_cast<int>(s.annotations.size());
  CHECK(r.n_masks == total_anns);
  CHECK(r.n_gts == total_anns);
  CHECK(r.acc1 >= 0.0);
  CHECK(r.acc1 <= 100.0);
  CHECK(r.acc5 >= r.acc1);
  CHECK(r.acc5 <= 100.0);
  CHECK(r.ap1 >= 0.0);
  CHECK(r.ap5 >= r.ap1 - 1e-12);
  CHECK(r.ap5 <= 1.0);
  CHECK(r.thresholds.size() == 10);
  CHECK(r.ap1_per_threshold.size() == 10);

  auto j = nlohmann::json::parse(report_json(r));
  CHECK(j["acc1"].get<double>() == r.acc1);
  CHECK(j["ap5_per_threshold"].size() == 10);
  std::string table = report_table(r);
  CHECK(table.find("Acc@1") != std::string::npos);
  CHECK(table.find("AP@5") != std::string::npos);

  // Ablating the local tokens still produces a well-formed report.
  EvalSettings ab;
  ab.ablate_z = true;
  EvalReport ra = evaluate(model, data, ab);
  CHECK(ra.n_masks == total_anns);
  CHECK(std::isfinite(ra.ap1));

  // Determinism: same model and data, identical reports.
  EvalReport r2 = evaluate(model, data);
  CHECK(r2.acc1 == r.acc1);
  CHECK(r2.ap1 == r.ap1);
  CHECK(r2.ap5_per_threshold == r.ap5_per_threshold);
}
