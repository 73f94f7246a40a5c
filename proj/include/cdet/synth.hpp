// Synthetic scenes: colored shapes on a dark canvas with templated captions.
//
// Object names fuse color and shape into one word ("redsquare") so every
// name is a single token. Captions mention objects top to bottom and use
// only vertical relation words, which keeps them valid under horizontal
// flips. Objects get one horizontal band each, so boxes never overlap and
// the top-to-bottom order is unambiguous.
#pragma once

#include <string>
#include <vector>

#include "cdet/data.hpp"
#include "cdet/rng.hpp"
#include "cdet/vocab.hpp"

namespace cdet {

struct Grammar {
  std::vector<std::string> colors = {"red",    "green",  "blue", "yellow",
                                     "purple", "orange", "cyan", "white"};
  std::vector<std::string> shapes = {"square", "disc", "triangle", "cross"};

  std::vector<std::string> object_names() const;  // colors x shapes, fused
  // Everything any caption or task prompt can emit, object names included.
  std::vector<std::string> all_words() const;
};

// Deterministic for a fixed grammar: specials + sorted unique words.
Vocabulary vocab_from_grammar(const Grammar& g);

struct SynthConfig {
  int count = 200;
  int min_objects = 1;
  int max_objects = 3;
  int canvas = 64;
  int id_base = 0;  // first image_id, so splits can keep ids disjoint
};

// Deterministic given the rng state. Each sample carries its raster; boxes
// are recomputed from painted pixels, so they are tight by construction.
std::vector<CodeSample> generate_synthetic(Rng& rng, const SynthConfig& cfg,
                                           const Grammar& grammar = Grammar{});

// Rendered color for a color word; throws on unknown words.
RGB color_value(const std::string& color_word);
ShapeKind shape_value(const std::string& shape_word);
RGB canvas_background();

}  // namespace cdet
