// Detection-grounded caption samples and their on-disk JSON form.
//
// Files store boxes as absolute pixel corners [x0,y0,x1,y1]; in memory
// boxes are normalized center-size. Token spans are half-open [start,end)
// over the caption's word tokens.
#pragma once

#include <string>
#include <vector>

#include "cdet/box.hpp"
#include "cdet/raster.hpp"
#include "cdet/vocab.hpp"

namespace cdet {

struct CodeAnnotation {
  int id = 0;
  Box box;  // normalized center-size
  std::string name;
  int span_start = 0;
  int span_end = 0;
  int mask_index = 0;
};

struct CodeSample {
  int image_id = 0;
  std::string file_name;  // relative to the JSON file; empty for in-memory
  int height = 0, width = 0;
  std::string caption;
  std::vector<int> token_ids;
  std::vector<CodeAnnotation> annotations;
  Image raster;  // populated by the generator or by load_corpus
};

// JSON only; rasters are not touched. Structural validation happens here
// (field presence, span ranges, corner ordering), vocabulary-dependent
// validation in validate_against_vocab.
std::vector<CodeSample> load_code(const std::string& json_path);
void save_code(const std::vector<CodeSample>& samples, const std::string& json_path);

// JSON + PPM rasters under the JSON file's directory.
std::vector<CodeSample> load_corpus(const std::string& json_path);
void save_corpus(std::vector<CodeSample>& samples, const std::string& dir,
                 const std::string& json_name = "data.json");

// Checks detokenize(span) == name, retokenize(caption) == token_ids, and
// mask ordinals 0,1,2,... in span order. Throws naming the offending sample.
void validate_against_vocab(const std::vector<CodeSample>& samples, const Vocabulary& vocab);

struct Cloze {
  std::vector<int> ids;        // caption ids with each span collapsed to one [MASK]
  std::vector<int> positions;  // index of each [MASK] in ids, caption order
  std::vector<int> annotation_order;  // annotation index answering each mask
};

Cloze make_cloze(const CodeSample& sample, int mask_id);

}  // namespace cdet
