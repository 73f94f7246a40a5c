#include "cdet/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace cdet {

namespace {

using nlohmann::json;

std::string sample_tag(int image_id) { return "image " + std::to_string(image_id); }

const json& need(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw std::runtime_error("code file: missing field '" + std::string(key) + "' in " + where);
  }
  return *it;
}

}  // namespace

std::vector<CodeSample> load_code(const std::string& json_path) {
  std::ifstream f(json_path);
  if (!f) throw std::runtime_error("load_code: cannot open " + json_path);
  json root;
  try {
    f >> root;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_code: " + json_path + " is not valid JSON: " + e.what());
  }

  std::vector<CodeSample> samples;
  std::unordered_map<int, size_t> by_id;
  for (const auto& im : need(root, "images", "top level")) {
    CodeSample s;
    s.image_id = need(im, "id", "images").get<int>();
    s.file_name = need(im, "file_name", sample_tag(s.image_id)).get<std::string>();
    s.height = need(im, "height", sample_tag(s.image_id)).get<int>();
    s.width = need(im, "width", sample_tag(s.image_id)).get<int>();
    if (s.height <= 0 || s.width <= 0) {
      throw std::runtime_error("code file: non-positive size in " + sample_tag(s.image_id));
    }
    if (by_id.count(s.image_id)) {
      throw std::runtime_error("code file: duplicate " + sample_tag(s.image_id));
    }
    by_id[s.image_id] = samples.size();
    samples.push_back(std::move(s));
  }

  for (const auto& cap : need(root, "captions", "top level")) {
    int id = need(cap, "image_id", "captions").get<int>();
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw std::runtime_error("code file: caption references unknown " + sample_tag(id));
    }
    CodeSample& s = samples[it->second];
    if (!s.caption.empty() || !s.token_ids.empty()) {
      throw std::runtime_error("code file: duplicate caption for " + sample_tag(id));
    }
    s.caption = need(cap, "caption", sample_tag(id)).get<std::string>();
    s.token_ids = need(cap, "token_ids", sample_tag(id)).get<std::vector<int>>();
  }

  for (const auto& an : need(root, "annotations", "top level")) {
    int id = need(an, "image_id", "annotations").get<int>();
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw std::runtime_error("code file: annotation references unknown " + sample_tag(id));
    }
    CodeSample& s = samples[it->second];
    CodeAnnotation a;
    a.id = need(an, "id", sample_tag(id)).get<int>();
    std::string where = "annotation " + std::to_string(a.id) + " (" + sample_tag(id) + ")";
    auto bbox = need(an, "bbox", where).get<std::vector<double>>();
    if (bbox.size() != 4) throw std::runtime_error("code file: bbox needs 4 entries in " + where);
    if (bbox[2] < bbox[0] || bbox[3] < bbox[1]) {
      throw std::runtime_error("code file: malformed box (x1<x0 or y1<y0) in " + where);
    }
    a.box = Box::from_corners(bbox[0] / s.width, bbox[1] / s.height, bbox[2] / s.width,
                              bbox[3] / s.height);
    a.name = need(an, "name", where).get<std::string>();
    auto span = need(an, "token_ids", where).get<std::vector<int>>();
    if (span.size() != 2) throw std::runtime_error("code file: token span needs 2 entries in " + where);
    a.span_start = span[0];
    a.span_end = span[1];
    if (a.span_start < 0 || a.span_end > static_cast<int>(s.token_ids.size()) ||
        a.span_start >= a.span_end) {
      throw std::runtime_error("code file: token span [" + std::to_string(a.span_start) + "," +
                               std::to_string(a.span_end) + ") out of range in " + where);
    }
    a.mask_index = need(an, "mask_index", where).get<int>();
    if (a.mask_index < 0) throw std::runtime_error("code file: negative mask_index in " + where);
    s.annotations.push_back(std::move(a));
  }

  for (auto& s : samples) {
    std::sort(s.annotations.begin(), s.annotations.end(),
              [](const CodeAnnotation& a, const CodeAnnotation& b) {
                return a.span_start < b.span_start;
              });
  }
  return samples;
}

void save_code(const std::vector<CodeSample>& samples, const std::string& json_path) {
  json images = json::array();
  json captions = json::array();
  json annotations = json::array();
  int next_ann_id = 0;
  for (const auto& s : samples) {
    images.push_back({{"id", s.image_id},
                      {"file_name", s.file_name},
                      {"height", s.height},
                      {"width", s.width}});
    captions.push_back({{"image_id", s.image_id},
                        {"caption", s.caption},
                        {"token_ids", s.token_ids}});
    for (const auto& a : s.annotations) {
      auto c = a.box.corners();
      annotations.push_back({{"id", next_ann_id++},
                             {"image_id", s.image_id},
                             {"bbox", {c[0] * s.width, c[1] * s.height, c[2] * s.width,
                                       c[3] * s.height}},
                             {"name", a.name},
                             {"token_ids", {a.span_start, a.span_end}},
                             {"mask_index", a.mask_index}});
    }
  }
  json root{{"images", images}, {"annotations", annotations}, {"captions", captions}};
  std::ofstream f(json_path);
  if (!f) throw std::runtime_error("save_code: cannot open " + json_path);
  f << root.dump(2) << "\n";
  if (!f) throw std::runtime_error("save_code: short write to " + json_path);
}

std::vector<CodeSample> load_corpus(const std::string& json_path) {
  auto samples = load_code(json_path);
  auto base = std::filesystem::path(json_path).parent_path();
  for (auto& s : samples) {
    if (s.file_name.empty()) {
      throw std::runtime_error("load_corpus: no raster file for " + sample_tag(s.image_id));
    }
    s.raster = load_ppm((base / s.file_name).string());
    if (s.raster.height != s.height || s.raster.width != s.width) {
      throw std::runtime_error("load_corpus: raster size disagrees with metadata for " +
                               sample_tag(s.image_id));
    }
  }
  return samples;
}

void save_corpus(std::vector<CodeSample>& samples, const std::string& dir,
                 const std::string& json_name) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  for (auto& s : samples) {
    if (s.raster.data.empty()) {
      throw std::runtime_error("save_corpus: no raster for " + sample_tag(s.image_id));
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "images/img_%06d.ppm", s.image_id);
    s.file_name = buf;
    save_ppm(s.raster, (fs::path(dir) / s.file_name).string());
  }
  save_code(samples, (fs::path(dir) / json_name).string());
}

void validate_against_vocab(const std::vector<CodeSample>& samples, const Vocabulary& vocab) {
  for (const auto& s : samples) {
    std::string tag = sample_tag(s.image_id);
    std::vector<int> want;
    try {
      want = vocab.tokenize(s.caption);
    } catch (const std::exception& e) {
      throw std::runtime_error("code file: caption of " + tag + " fails to tokenize: " + e.what());
    }
    if (want != s.token_ids) {
      throw std::runtime_error("code file: stored token_ids disagree with the vocabulary for " +
                               tag);
    }
    int ordinal = 0;
    for (const auto& a : s.annotations) {  // already sorted by span start
      std::vector<int> span(s.token_ids.begin() + a.span_start, s.token_ids.begin() + a.span_end);
      if (vocab.detokenize(span) != a.name) {
        throw std::runtime_error("code file: span does not decode to '" + a.name + "' in " + tag);
      }
      if (a.mask_index != ordinal) {
        throw std::runtime_error("code file: mask_index " + std::to_string(a.mask_index) +
                                 " out of order in " + tag + " (expected " +
                                 std::to_string(ordinal) + ")");
      }
      ++ordinal;
    }
  }
}

Cloze make_cloze(const CodeSample& sample, int mask_id) {
  // Annotations are kept sorted by span start; verify no overlap first.
  std::vector<size_t> order(sample.annotations.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return sample.annotations[a].span_start < sample.annotations[b].span_start;
  });
  int prev_end = 0;
  for (size_t k : order) {
    const auto& a = sample.annotations[k];
    if (a.span_start < prev_end) {
      throw std::runtime_error("make_cloze: overlapping token spans at [" +
                               std::to_string(a.span_start) + "," + std::to_string(a.span_end) +
                               ") in image " + std::to_string(sample.image_id));
    }
    if (a.span_end > static_cast<int>(sample.token_ids.size()) || a.span_start >= a.span_end) {
      throw std::runtime_error("make_cloze: invalid span in image " +
                               std::to_string(sample.image_id));
    }
    prev_end = a.span_end;
  }

  Cloze out;
  size_t next = 0;
  for (int i = 0; i < static_cast<int>(sample.token_ids.size());) {
    if (next < order.size() && i == sample.annotations[order[next]].span_start) {
      const auto& a = sample.annotations[order[next]];
      if (a.mask_index != static_cast<int>(next)) {
        throw std::runtime_error("make_cloze: mask_index disagrees with span order in image " +
                                 std::to_string(sample.image_id));
      }
      out.positions.push_back(static_cast<int>(out.ids.size()));
      out.annotation_order.push_back(static_cast<int>(order[next]));
      out.ids.push_back(mask_id);
      i = a.span_end;
      ++next;
    } else {
      out.ids.push_back(sample.token_ids[static_cast<size_t>(i)]);
      ++i;
    }
  }
  return out;
}

}  // namespace cdet
