// Command line surface: dataset synthesis, training, evaluation, and the
// cloze / caption / qa / open-vocabulary task modes.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
// Output is line oriented and machine parsable; formats are golden-file
// tested, so changes here are breaking.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdet/checkpoint.hpp"
#include "cdet/eval.hpp"
#include "cdet/model.hpp"
#include "cdet/synth.hpp"
#include "cdet/train.hpp"

namespace {

using namespace cdet;

// Anything the user got wrong (flags, files, vocabulary) as opposed to the
// program failing; main() maps this to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

// ----- shared option bundles -----

struct ModelFlags {
  int d = 32, d1 = 64, d2 = 64, p = 9, queries = 20;
  int enc_layers = 6, lm_layers = 2, dec_layers = 6, heads = 4;
  int image_size = 64, patch = 8, max_positions = 96;
  bool no_local_tokens = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--d", d, "patch feature width");
    cmd->add_option("--d1", d1, "language model width");
    cmd->add_option("--d2", d2, "decoder width");
    cmd->add_option("--p", p, "local token count (perfect square)");
    cmd->add_option("--queries", queries, "object queries per condition");
    cmd->add_option("--enc-layers", enc_layers, "encoder blocks");
    cmd->add_option("--lm-layers", lm_layers, "language model blocks");
    cmd->add_option("--dec-layers", dec_layers, "decoder blocks");
    cmd->add_option("--heads", heads, "attention heads (all stacks)");
    cmd->add_option("--image-size", image_size, "canvas edge in pixels");
    cmd->add_option("--patch", patch, "patch edge in pixels");
    cmd->add_option("--max-positions", max_positions, "language position table size");
    cmd->add_flag("--no-local-tokens", no_local_tokens,
                  "ablation: build the language prefix without visual tokens");
  }

  ModelConfig to_config() const {
    ModelConfig mc;
    mc.encoder.image_size = image_size;
    mc.encoder.patch = patch;
    mc.encoder.d = d;
    mc.encoder.d1 = d1;
    mc.encoder.d2 = d2;
    mc.encoder.p = p;
    mc.encoder.layers = enc_layers;
    mc.encoder.heads = heads;
    mc.lm.d1 = d1;
    mc.lm.layers = lm_layers;
    mc.lm.heads = heads;
    mc.lm.max_positions = max_positions;
    mc.decoder.n_queries = queries;
    mc.decoder.d1 = d1;
    mc.decoder.d2 = d2;
    mc.decoder.layers = dec_layers;
    mc.decoder.heads = heads;
    mc.use_visual_prefix = !no_local_tokens;
    return mc;
  }
};

void validate_model(const ModelConfig& mc) {
  require(mc.encoder.image_size > 0 && mc.encoder.patch > 0, "image-size and patch must be > 0");
  require(mc.encoder.image_size % mc.encoder.patch == 0, "patch must divide image-size");
  require(mc.encoder.d > 0 && mc.encoder.d1 > 0 && mc.encoder.d2 > 0, "widths must be > 0");
  int q = static_cast<int>(std::lround(std::sqrt(static_cast<double>(mc.encoder.p))));
  require(mc.encoder.p > 0 && q * q == mc.encoder.p, "p must be a perfect square");
  require(mc.decoder.n_queries > 0, "queries must be > 0");
  require(mc.encoder.layers > 0 && mc.lm.layers > 0 && mc.decoder.layers > 0,
          "layer counts must be > 0");
  require(mc.lm.heads > 0 && mc.lm.d1 % mc.lm.heads == 0, "heads must divide d1");
  require(mc.decoder.d2 % mc.decoder.heads == 0, "heads must divide d2");
  require(mc.lm.max_positions > 0, "max-positions must be > 0");
}

// Checkpoint header -> model + vocabulary, exactly as trained. The store
// pins parameter addresses, so the model lives behind a pointer.
struct LoadedModel {
  std::unique_ptr<ContextDet> model;
  std::unique_ptr<AdamW> opt;
  Rng rng{0};
  int step = 0;
};

LoadedModel load_model(const std::string& ckpt_path) {
  require(std::filesystem::exists(ckpt_path), "checkpoint not found: " + ckpt_path);
  CheckpointInfo info = peek_checkpoint(ckpt_path);
  Vocabulary vocab = Vocabulary::from_ordered(info.words, info.noun_flags);
  LoadedModel lm;
  lm.model = std::make_unique<ContextDet>(ContextDet::parse_arch(info.arch), vocab, 0);
  lm.opt = std::make_unique<AdamW>(lm.model->params().refs());
  lm.step = load_checkpoint(ckpt_path, *lm.model, *lm.opt, lm.rng);
  return lm;
}

std::string resolve_data_json(const std::string& path) {
  namespace fs = std::filesystem;
  std::string json = fs::is_directory(path) ? (fs::path(path) / "data.json").string() : path;
  require(fs::exists(json), "dataset not found: " + json);
  return json;
}

std::map<std::string, std::string> load_synonyms(const std::string& path) {
  std::map<std::string, std::string> out;
  if (path.empty()) return out;
  std::ifstream in(path);
  require(in.good(), "cannot read synonym table: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto eq = line.find('=');
    require(eq != std::string::npos,
            "synonym table line " + std::to_string(lineno) + ": expected 'alias = canonical'");
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t\r");
      size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    std::string alias = trim(line.substr(0, eq)), canon = trim(line.substr(eq + 1));
    require(!alias.empty() && !canon.empty(),
            "synonym table line " + std::to_string(lineno) + ": empty side");
    out[normalize_name(alias)] = normalize_name(canon);
  }
  return out;
}

std::vector<int> tokenize_or_fail(const Vocabulary& vocab, const std::string& text,
                                  const std::string& what) {
  try {
    return vocab.tokenize(text);
  } catch (const std::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

std::string fmt_box(const Box& b) {
  char buf[80];
  std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f,%.4f", b.cx, b.cy, b.w, b.h);
  return buf;
}

// Scored boxes of one detection pass, highest first, floor applied.
std::vector<std::pair<double, Box>> scored_boxes(const DetectionOutput& det, double floor) {
  std::vector<std::pair<double, Box>> out;
  int n = det.match_probs.defined() ? det.match_probs.shape()[0] : 0;
  for (int i = 0; i < n; ++i) {
    double s = det.match_probs.at(i * 2);  // (N, 2) row-major, column 0 = matched
    if (s >= floor) out.push_back({s, det.boxes[static_cast<size_t>(i)]});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  return out;
}

void draw_box_outline(Image& img, const Box& b, RGB color) {
  int W = img.width, H = img.height;
  int x0 = std::clamp(static_cast<int>(std::lround((b.cx - b.w / 2) * W)), 0, W - 1);
  int x1 = std::clamp(static_cast<int>(std::lround((b.cx + b.w / 2) * W)) - 1, 0, W - 1);
  int y0 = std::clamp(static_cast<int>(std::lround((b.cy - b.h / 2) * H)), 0, H - 1);
  int y1 = std::clamp(static_cast<int>(std::lround((b.cy + b.h / 2) * H)) - 1, 0, H - 1);
  for (int x = x0; x <= x1; ++x) {
    img.set_pixel(y0, x, color);
    img.set_pixel(y1, x, color);
  }
  for (int y = y0; y <= y1; ++y) {
    img.set_pixel(y, x0, color);
    img.set_pixel(y, x1, color);
  }
}

// Visual tokens for one image under the model's prefix setting.
struct Encoded {
  Tensor z;  // undefined when the prefix is text only
  Tensor c;
};

Encoded encode_image(const ContextDet& model, const Image& img) {
  Tensor v = model.encoder().extract_features(img);
  Encoded e;
  if (model.config().use_visual_prefix) e.z = model.encoder().local_tokens(v);
  e.c = model.encoder().full_tokens(v);
  return e;
}

Image load_image_or_fail(const std::string& path, const ContextDet& model) {
  require(std::filesystem::exists(path), "image not found: " + path);
  Image img = load_ppm(path);
  int want = model.config().encoder.image_size;
  require(img.width == want && img.height == want,
          "image must be " + std::to_string(want) + "x" + std::to_string(want) + ", got " +
              std::to_string(img.width) + "x" + std::to_string(img.height));
  return img;
}

// ----- synth -----

struct SynthArgs {
  std::string out;
  int train = 200, val = 40, test = 40;
  int min_objects = 1, max_objects = 3;
  uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  require(!a.out.empty(), "--out is required");
  require(a.train > 0 && a.val >= 0 && a.test >= 0, "split sizes must be positive");
  require(a.min_objects >= 1 && a.max_objects >= a.min_objects,
          "object counts must satisfy 1 <= min <= max");

  Grammar grammar;
  Vocabulary vocab = vocab_from_grammar(grammar);
  Rng rng(a.seed);
  struct Split {
    const char* name;
    int count;
    int id_base;
  };
  for (const Split s : {Split{"train", a.train, 0}, Split{"val", a.val, 100000},
                        Split{"test", a.test, 200000}}) {
    if (s.count == 0) continue;
    SynthConfig sc;
    sc.count = s.count;
    sc.min_objects = a.min_objects;
    sc.max_objects = a.max_objects;
    sc.id_base = s.id_base;
    auto samples = generate_synthetic(rng, sc, grammar);
    validate_against_vocab(samples, vocab);

    std::string dir = (std::filesystem::path(a.out) / s.name).string();
    save_corpus(samples, dir);

    int boxes = 0;
    std::set<std::string> names;
    for (const auto& smp : samples) {
      boxes += static_cast<int>(smp.annotations.size());
      for (const auto& ann : smp.annotations) names.insert(ann.name);
    }
    std::cout << "split=" << s.name << " images=" << samples.size() << " boxes=" << boxes
              << " unique_names=" << names.size() << " dir=" << dir << "\n";
  }
  return 0;
}

// ----- train -----

struct TrainArgs {
  ModelFlags model;
  std::string data;
  std::string out = "cdet.ckpt";
  std::string resume;
  TrainConfig tc;
  int eval_every = 0;  // 0 disables periodic validation
  std::string box_mode = "sum";
};

int cmd_train(TrainArgs& a) {
  require(!a.data.empty(), "--data is required");
  require(a.tc.steps > 0, "--steps must be > 0");
  require(a.tc.batch_size > 0, "--batch must be > 0");
  require(a.tc.lr > 0, "--lr must be > 0");
  require(a.tc.warmup_steps >= 0, "--warmup must be >= 0");
  require(a.tc.lr_floor >= 0 && a.tc.lr_floor <= 1, "--lr-floor must lie in [0,1]");
  require(a.tc.weight_decay >= 0, "--weight-decay must be >= 0");
  require(a.tc.flip_prob >= 0 && a.tc.flip_prob <= 1, "--flip-prob must lie in [0,1]");
  require(a.tc.qa_prob >= 0 && a.tc.caption_prob >= 0 &&
              a.tc.qa_prob + a.tc.caption_prob <= 1.0,
          "--qa-prob and --caption-prob must be nonnegative and sum to at most 1");
  require(a.tc.log_every > 0, "--log-every must be > 0");
  require(a.eval_every >= 0, "--eval-every must be >= 0");
  require(a.eval_every % a.tc.log_every == 0,
          "--eval-every must be a multiple of --log-every");
  if (a.box_mode == "sum") {
    a.tc.weights.box_mode = LossWeights::BoxMode::sum;
  } else if (a.box_mode == "l1") {
    a.tc.weights.box_mode = LossWeights::BoxMode::l1;
  } else if (a.box_mode == "giou") {
    a.tc.weights.box_mode = LossWeights::BoxMode::giou;
  } else {
    throw ConfigError("--box-mode must be sum, l1, or giou");
  }

  std::string train_json = resolve_data_json(
      (std::filesystem::path(a.data) / "train").string());
  std::string val_dir = (std::filesystem::path(a.data) / "val").string();
  bool have_val = std::filesystem::exists(std::filesystem::path(val_dir) / "data.json");
  require(a.eval_every == 0 || have_val,
          "--eval-every needs a val split under " + a.data);

  auto data = load_corpus(train_json);
  require(!data.empty(), "training split is empty");
  std::vector<CodeSample> val;
  if (a.eval_every > 0) val = load_corpus(resolve_data_json(val_dir));

  // Fresh runs build the grammar vocabulary; resumed runs must match the
  // checkpoint, so model and vocabulary come from its header instead.
  Vocabulary vocab = vocab_from_grammar(Grammar{});
  ModelConfig mc = a.model.to_config();
  if (!a.resume.empty()) {
    require(std::filesystem::exists(a.resume), "checkpoint not found: " + a.resume);
    CheckpointInfo info = peek_checkpoint(a.resume);
    mc = ContextDet::parse_arch(info.arch);
    vocab = Vocabulary::from_ordered(info.words, info.noun_flags);
  }
  validate_model(mc);
  validate_against_vocab(data, vocab);

  ContextDet model(mc, vocab, a.tc.seed);
  Trainer trainer(model, a.tc);
  if (!a.resume.empty()) {
    int step = load_checkpoint(a.resume, model, trainer.opt(), trainer.rng());
    trainer.set_step_count(step);
    require(step < a.tc.steps, "checkpoint already at step " + std::to_string(step) +
                                   "; raise --steps to continue");
    std::cout << "resumed step=" << step << " from=" << a.resume << "\n";
  }
  if (a.tc.freeze_lm) model.set_lm_frozen(true);

  trainer.run(data, [&](const TrainLogEntry& e) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "step=%d total=%.6f cls=%.6f l1=%.6f giou=%.6f lm=%.6f noun=%.6f\n", e.step,
                  e.loss.total, e.loss.cls, e.loss.box_l1, e.loss.box_giou, e.loss.lm,
                  e.loss.noun);
    std::cout << buf;
    if (a.eval_every > 0 && e.step % a.eval_every == 0 && e.step < trainer.config().steps) {
      EvalReport r = evaluate(model, val);
      std::snprintf(buf, sizeof(buf),
                    "eval step=%d split=val acc1=%.2f acc5=%.2f ap1=%.4f ap5=%.4f\n", e.step,
                    r.acc1, r.acc5, r.ap1, r.ap5);
      std::cout << buf;
    }
  });

  save_checkpoint(a.out, model, trainer.opt(), trainer.rng(), trainer.step_count());
  std::cout << "checkpoint=" << a.out << " step=" << trainer.step_count() << "\n";
  return 0;
}

// ----- eval -----

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string json_out;
  std::string synonyms;
  EvalSettings settings;
};

int cmd_eval(const EvalArgs& a) {
  require(!a.ckpt.empty(), "--ckpt is required");
  require(!a.data.empty(), "--data is required");
  require(a.settings.k >= 1, "--k must be >= 1");
  require(a.settings.score_floor >= 0 && a.settings.score_floor <= 1,
          "--score-floor must lie in [0,1]");

  EvalSettings settings = a.settings;
  settings.synonyms = load_synonyms(a.synonyms);
  auto data = load_corpus(resolve_data_json(a.data));
  require(!data.empty(), "dataset is empty: " + a.data);

  LoadedModel lm = load_model(a.ckpt);
  EvalReport r = evaluate(*lm.model, data, settings);
  std::cout << report_table(r);
  if (!a.json_out.empty()) {
    std::ofstream os(a.json_out);
    require(os.good(), "cannot write " + a.json_out);
    os << report_json(r) << "\n";
  }
  return 0;
}

// ----- cloze -----

struct ClozeArgs {
  std::string ckpt, image, caption, dump;
  int k = 5;
  double floor = 0.05;
};

int cmd_cloze(const ClozeArgs& a) {
  require(!a.ckpt.empty(), "--ckpt is required");
  require(!a.image.empty(), "--image is required");
  require(!a.caption.empty(), "--caption is required");
  require(a.k >= 1, "--k must be >= 1");

  LoadedModel lm = load_model(a.ckpt);
  const Vocabulary& vocab = lm.model->vocab();
  std::vector<int> ids = tokenize_or_fail(vocab, a.caption, "caption");
  int masks = 0;
  for (int id : ids) masks += id == vocab.mask_id() ? 1 : 0;
  require(masks > 0, "caption contains no [MASK] token");

  Image img = load_image_or_fail(a.image, *lm.model);
  NoGradGuard ng;
  Encoded enc = encode_image(*lm.model, img);
  auto readouts = lm.model->lm().cloze_fill(enc.z, ids, vocab, a.k);

  Image annotated = img;
  for (size_t m = 0; m < readouts.size(); ++m) {
    const auto& ro = readouts[m];
    std::string names;
    for (size_t i = 0; i < ro.top_ids.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s%s:%.4f", i ? "," : "",
                    vocab.word_of(ro.top_ids[i]).c_str(), ro.top_probs[i]);
      names += buf;
    }
    std::cout << "mask=" << m << " position=" << ro.position << " names=" << names << "\n";

    Condition cond{vocab.word_of(ro.top_ids[0]), ro.position, ro.e};
    DetectionOutput det = lm.model->decoder().detect(enc.c, cond);
    for (const auto& [score, box] : scored_boxes(det, a.floor)) {
      char buf[120];
      std::snprintf(buf, sizeof(buf), "mask=%zu box=%s score=%.4f\n", m, fmt_box(box).c_str(),
                    score);
      std::cout << buf;
      draw_box_outline(annotated, box, RGB{1, 1, 1});
    }
  }
  if (!a.dump.empty()) save_ppm(annotated, a.dump);
  return 0;
}

// ----- caption -----

struct CaptionArgs {
  std::string ckpt, image;
  int max_len = 24;
  double floor = 0.05;
  double noun_threshold = 0.5;
};

int cmd_caption(const CaptionArgs& a) {
  require(!a.ckpt.empty(), "--ckpt is required");
  require(!a.image.empty(), "--image is required");
  require(a.max_len > 0, "--max-len must be > 0");

  LoadedModel lm = load_model(a.ckpt);
  const Vocabulary& vocab = lm.model->vocab();
  Image img = load_image_or_fail(a.image, *lm.model);
  NoGradGuard ng;
  Encoded enc = encode_image(*lm.model, img);

  std::vector<int> prompt = vocab.tokenize("a photo of");
  auto result = lm.model->lm().generate(lm.model->prefix_for(enc.z, prompt), a.max_len, vocab);

  std::vector<int> full = prompt;
  full.insert(full.end(), result.ids.begin(), result.ids.end());
  std::cout << "caption=" << vocab.detokenize(full) << "\n";
  std::cout << "eos=" << (result.hit_eos ? "yes" : "no") << "\n";

  std::vector<Condition> conds;
  for (int i : noun_positions(result, a.noun_threshold)) {
    conds.push_back(Condition{vocab.word_of(result.ids[static_cast<size_t>(i)]),
                              static_cast<int>(prompt.size()) + i,
                              result.e[static_cast<size_t>(i)]});
  }
  for (const auto& det : lm.model->decoder().detect_for_conditions(enc.c, conds)) {
    for (const auto& [score, box] : scored_boxes(det, a.floor)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "noun=%s position=%d box=%s score=%.4f\n",
                    det.condition_word.c_str(), det.condition_position, fmt_box(box).c_str(),
                    score);
      std::cout << buf;
    }
  }
  return 0;
}

// ----- qa -----

struct QaArgs {
  std::string ckpt, image, question;
  std::vector<std::string> history;
  int max_len = 8;
  double floor = 0.05;
  double noun_threshold = 0.5;
};

int cmd_qa(const QaArgs& a) {
  require(!a.ckpt.empty(), "--ckpt is required");
  require(!a.image.empty(), "--image is required");
  require(!a.question.empty(), "--question is required");
  require(a.max_len > 0, "--max-len must be > 0");

  LoadedModel lm = load_model(a.ckpt);
  const Vocabulary& vocab = lm.model->vocab();
  Image img = load_image_or_fail(a.image, *lm.model);
  NoGradGuard ng;
  Encoded enc = encode_image(*lm.model, img);

  // Multi-round dialog is plain concatenation of earlier turns.
  std::string text;
  for (const auto& turn : a.history) text += turn + " ";
  text += "question : " + a.question + " answer :";
  std::vector<int> prompt = tokenize_or_fail(vocab, text, "question");

  auto result = lm.model->lm().generate(lm.model->prefix_for(enc.z, prompt), a.max_len, vocab);
  std::cout << "question=" << a.question << "\n";
  std::cout << "answer=" << vocab.detokenize(result.ids) << "\n";

  std::vector<Condition> conds;
  for (int i : noun_positions(result, a.noun_threshold)) {
    conds.push_back(Condition{vocab.word_of(result.ids[static_cast<size_t>(i)]),
                              static_cast<int>(prompt.size()) + i,
                              result.e[static_cast<size_t>(i)]});
  }
  for (const auto& det : lm.model->decoder().detect_for_conditions(enc.c, conds)) {
    for (const auto& [score, box] : scored_boxes(det, a.floor)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "noun=%s position=%d box=%s score=%.4f\n",
                    det.condition_word.c_str(), det.condition_position, fmt_box(box).c_str(),
                    score);
      std::cout << buf;
    }
  }
  return 0;
}

// ----- ov -----

struct OvArgs {
  std::string ckpt, image;
  std::vector<std::string> classes;
  double floor = 0.05;
};

int cmd_ov(const OvArgs& a) {
  require(!a.ckpt.empty(), "--ckpt is required");
  require(!a.image.empty(), "--image is required");

  LoadedModel lm = load_model(a.ckpt);
  const Vocabulary& vocab = lm.model->vocab();
  Image img = load_image_or_fail(a.image, *lm.model);
  NoGradGuard ng;
  Encoded enc = encode_image(*lm.model, img);

  for (const std::string& cls : a.classes) {
    std::vector<int> cls_ids = tokenize_or_fail(vocab, cls, "class '" + cls + "'");
    require(cls_ids.size() == 1, "class '" + cls + "' must be a single vocabulary word");

    std::string prompt_text = "question : does the " + cls +
                              " appear in this picture ? answer :";
    std::vector<int> prompt = tokenize_or_fail(vocab, prompt_text, "class '" + cls + "'");
    auto result = lm.model->lm().generate(lm.model->prefix_for(enc.z, prompt), 2, vocab);
    std::string answer = result.ids.empty() ? "" : vocab.word_of(result.ids[0]);
    bool yes = answer == "yes";
    std::cout << "class=" << cls << " answer=" << (yes ? "yes" : "no") << "\n";
    if (!yes) continue;

    // The class word inside the prompt owns its own-position state; that
    // latent steers the box decoder, mirroring training.
    Tensor states = lm.model->lm().states(lm.model->prefix_for(enc.z, prompt));
    int off = lm.model->text_offset_for(enc.z);
    int pos = -1;
    for (size_t j = 0; j < prompt.size(); ++j) {
      if (prompt[j] == cls_ids[0]) {
        pos = static_cast<int>(j);
        break;
      }
    }
    Tensor e = slice(states, 0, off + pos, off + pos + 1);
    DetectionOutput det = lm.model->decoder().detect(enc.c, Condition{cls, pos, e});
    for (const auto& [score, box] : scored_boxes(det, a.floor)) {
      char buf[140];
      std::snprintf(buf, sizeof(buf), "class=%s box=%s score=%.4f\n", cls.c_str(),
                    fmt_box(box).c_str(), score);
      std::cout << buf;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contextual detection pipeline: synthesize, train, evaluate, query"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "key = value file with a [verb] section per subcommand; flags win");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic CODE-format corpus");
  s->add_option("--out", synth.out, "output directory (train/ val/ test/ inside)");
  s->add_option("--train", synth.train, "training images");
  s->add_option("--val", synth.val, "validation images");
  s->add_option("--test", synth.test, "test images");
  s->add_option("--min-objects", synth.min_objects, "objects per scene, lower bound");
  s->add_option("--max-objects", synth.max_objects, "objects per scene, upper bound");
  s->add_option("--seed", synth.seed, "generator seed");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train on a synthesized corpus");
  train.model.attach(t);
  t->add_option("--data", train.data, "corpus root from synth");
  t->add_option("--out", train.out, "checkpoint path to write");
  t->add_option("--resume", train.resume, "checkpoint to continue from");
  t->add_option("--steps", train.tc.steps, "total optimization steps");
  t->add_option("--batch", train.tc.batch_size, "samples per step");
  t->add_option("--lr", train.tc.lr, "learning rate");
  t->add_option("--warmup", train.tc.warmup_steps, "linear warmup steps");
  t->add_option("--lr-floor", train.tc.lr_floor,
                "cosine-decay floor as a fraction of --lr; 1 keeps it constant");
  t->add_option("--weight-decay", train.tc.weight_decay, "decoupled weight decay");
  t->add_option("--seed", train.tc.seed, "run seed (init, sampling, augmentation)");
  t->add_option("--flip-prob", train.tc.flip_prob, "horizontal flip probability");
  t->add_option("--qa-prob", train.tc.qa_prob, "presence-question task share");
  t->add_option("--caption-prob", train.tc.caption_prob, "captioning task share");
  t->add_option("--log-every", train.tc.log_every, "steps between loss lines");
  t->add_option("--eval-every", train.eval_every,
                "steps between val evaluations (0 = off; multiple of --log-every)");
  t->add_option("--w-cls", train.tc.weights.cls, "classification weight");
  t->add_option("--w-box", train.tc.weights.box, "box weight");
  t->add_option("--w-lm", train.tc.weights.lm, "language weight");
  t->add_option("--w-noun", train.tc.weights.noun, "noun head weight");
  t->add_option("--box-mode", train.box_mode, "box term: sum, l1, or giou");
  t->add_flag("--freeze-lm", train.tc.freeze_lm, "keep language model weights fixed");

  EvalArgs eval_args;
  auto* e = app.add_subcommand("eval", "cloze metrics on a dataset split");
  e->add_option("--ckpt", eval_args.ckpt, "checkpoint to load");
  e->add_option("--data", eval_args.data, "split directory or data.json");
  e->add_option("--k", eval_args.settings.k, "candidate names per mask");
  e->add_option("--score-floor", eval_args.settings.score_floor, "drop boxes under this score");
  e->add_flag("--score-matched-only", eval_args.settings.score_matched_only,
              "rank boxes by match probability alone");
  e->add_flag("--ablate-z", eval_args.settings.ablate_z,
              "evaluate with a text-only language prefix");
  e->add_option("--json", eval_args.json_out, "also write the report as JSON here");
  e->add_option("--synonyms", eval_args.synonyms, "alias = canonical name table");

  ClozeArgs cloze;
  auto* c = app.add_subcommand("cloze", "fill [MASK] slots and box the answers");
  c->add_option("--ckpt", cloze.ckpt, "checkpoint to load");
  c->add_option("--image", cloze.image, "PPM image");
  c->add_option("--caption", cloze.caption, "caption containing [MASK] tokens");
  c->add_option("--k", cloze.k, "names per mask");
  c->add_option("--floor", cloze.floor, "minimum box score to print");
  c->add_option("--dump", cloze.dump, "write an annotated PPM here");

  CaptionArgs caption;
  auto* g = app.add_subcommand("caption", "generate a caption and box its objects");
  g->add_option("--ckpt", caption.ckpt, "checkpoint to load");
  g->add_option("--image", caption.image, "PPM image");
  g->add_option("--max-len", caption.max_len, "generation budget in tokens");
  g->add_option("--floor", caption.floor, "minimum box score to print");
  g->add_option("--noun-threshold", caption.noun_threshold, "noun head cutoff");

  QaArgs qa;
  auto* q = app.add_subcommand("qa", "answer a question about the image");
  q->add_option("--ckpt", qa.ckpt, "checkpoint to load");
  q->add_option("--image", qa.image, "PPM image");
  q->add_option("--question", qa.question, "question text (vocabulary words)");
  q->add_option("--history", qa.history, "earlier dialog turns, in order")->take_all();
  q->add_option("--max-len", qa.max_len, "answer budget in tokens");
  q->add_option("--floor", qa.floor, "minimum box score to print");
  q->add_option("--noun-threshold", qa.noun_threshold, "noun head cutoff");

  OvArgs ov;
  auto* o = app.add_subcommand("ov", "open-vocabulary presence queries with boxes");
  o->add_option("--ckpt", ov.ckpt, "checkpoint to load");
  o->add_option("--image", ov.image, "PPM image");
  o->add_option("--classes", ov.classes, "class names to query")
      ->delimiter(',')
      ->take_all();
  o->add_option("--floor", ov.floor, "minimum box score to print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(eval_args);
    if (c->parsed()) return cmd_cloze(cloze);
    if (g->parsed()) return cmd_caption(caption);
    if (q->parsed()) return cmd_qa(qa);
    if (o->parsed()) return cmd_ov(ov);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 0;
}
