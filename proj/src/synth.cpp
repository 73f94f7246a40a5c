#include "cdet/synth.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace cdet {

std::vector<std::string> Grammar::object_names() const {
  std::vector<std::string> names;
  for (const auto& c : colors) {
    for (const auto& s : shapes) names.push_back(c + s);
  }
  return names;
}

std::vector<std::string> Grammar::all_words() const {
  std::vector<std::string> words = object_names();
  // Caption template words.
  for (const char* w : {"a", "photo", "of", "above", "nothing"}) words.push_back(w);
  // Task prompt words (presence questions and answers).
  for (const char* w : {"question", "does", "the", "appear", "in", "this", "picture", "answer", "yes",
                        "no", "?", ":", ".", ","}) {
    words.push_back(w);
  }
  return words;
}

Vocabulary vocab_from_grammar(const Grammar& g) {
  return Vocabulary::build(g.all_words(), g.object_names());
}

RGB color_value(const std::string& color_word) {
  if (color_word == "red") return {0.90f, 0.10f, 0.10f};
  if (color_word == "green") return {0.10f, 0.80f, 0.15f};
  if (color_word == "blue") return {0.15f, 0.20f, 0.90f};
  if (color_word == "yellow") return {0.95f, 0.90f, 0.10f};
  if (color_word == "purple") return {0.60f, 0.15f, 0.80f};
  if (color_word == "orange") return {0.95f, 0.55f, 0.10f};
  if (color_word == "cyan") return {0.10f, 0.85f, 0.90f};
  if (color_word == "white") return {0.95f, 0.95f, 0.95f};
  throw std::invalid_argument("color_value: unknown color '" + color_word + "'");
}

ShapeKind shape_value(const std::string& shape_word) {
  if (shape_word == "square") return ShapeKind::square;
  if (shape_word == "disc") return ShapeKind::disc;
  if (shape_word == "triangle") return ShapeKind::triangle;
  if (shape_word == "cross") return ShapeKind::cross;
  throw std::invalid_argument("shape_value: unknown shape '" + shape_word + "'");
}

RGB canvas_background() { return {0.08f, 0.08f, 0.10f}; }

namespace {

// Half-extent range by object count: fewer objects, bigger shapes.
std::pair<int, int> size_range(int object_count, int canvas) {
  double unit = canvas / 64.0;
  switch (object_count) {
    case 1:
      return {static_cast<int>(12 * unit), static_cast<int>(17 * unit)};
    case 2:
      return {static_cast<int>(10 * unit), static_cast<int>(13 * unit)};
    default:
      return {static_cast<int>(8 * unit), static_cast<int>(9 * unit)};
  }
}

}  // namespace

std::vector<CodeSample> generate_synthetic(Rng& rng, const SynthConfig& cfg,
                                           const Grammar& grammar) {
  if (cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects) {
    throw std::invalid_argument("generate_synthetic: bad object count range");
  }
  if (cfg.max_objects > static_cast<int>(grammar.colors.size())) {
    throw std::invalid_argument("generate_synthetic: more objects than distinct colors");
  }
  {
    // Placement feasibility: the largest shape must fit the smallest band.
    auto [lo, hi] = size_range(cfg.max_objects, cfg.canvas);
    int band = cfg.canvas / std::max(1, cfg.max_objects);
    if (lo < 2 || band < 2 * hi + 3) {
      throw std::invalid_argument("generate_synthetic: canvas too small for max_objects");
    }
  }

  Vocabulary vocab = vocab_from_grammar(grammar);
  std::vector<CodeSample> samples;
  samples.reserve(static_cast<size_t>(cfg.count));

  for (int n = 0; n < cfg.count; ++n) {
    CodeSample s;
    s.image_id = cfg.id_base + n;
    s.height = s.width = cfg.canvas;
    s.raster = Image(cfg.canvas, cfg.canvas, canvas_background());

    int k = rng.randint(cfg.min_objects, cfg.max_objects + 1);

    // Distinct colors guarantee distinct names and unambiguous pixels.
    std::vector<int> color_ix(grammar.colors.size());
    std::iota(color_ix.begin(), color_ix.end(), 0);
    rng.shuffle(color_ix);

    std::string caption = "a photo of";
    if (k == 0) caption += " nothing";

    auto [s_lo, s_hi] = size_range(k, cfg.canvas);
    for (int i = 0; i < k; ++i) {
      const std::string& color = grammar.colors[static_cast<size_t>(color_ix[static_cast<size_t>(i)])];
      const std::string& shape =
          grammar.shapes[static_cast<size_t>(rng.randint(0, static_cast<int>(grammar.shapes.size())))];
      std::string name = color + shape;

      int ext = rng.randint(s_lo, s_hi + 1);
      int band_top = i * cfg.canvas / k;
      int band_bot = (i + 1) * cfg.canvas / k - 1;
      int cy = rng.randint(band_top + ext + 1, band_bot - ext);
      int cx = rng.randint(ext + 1, cfg.canvas - ext - 1);

      PixelBounds painted =
          draw_shape(s.raster, shape_value(shape), color_value(color), cx, cy, ext);

      CodeAnnotation a;
      a.box = bounds_to_box(painted, cfg.canvas, cfg.canvas);
      a.name = name;
      a.mask_index = i;
      caption += (i == 0 ? " a " : " above a ") + name;
      s.annotations.push_back(std::move(a));
    }

    s.caption = caption;
    s.token_ids = vocab.tokenize(caption);
    // Locate each name's span; names are single tokens by construction.
    size_t cursor = 0;
    for (auto& a : s.annotations) {
      int want = vocab.id_of(a.name);
      while (cursor < s.token_ids.size() && s.token_ids[cursor] != want) ++cursor;
      if (cursor == s.token_ids.size()) {
        throw std::logic_error("generate_synthetic: name not found in its own caption");
      }
      a.span_start = static_cast<int>(cursor);
      a.span_end = static_cast<int>(cursor + 1);
      ++cursor;
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace cdet
