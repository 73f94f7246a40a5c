// Versioned binary checkpoints: parameters, optimizer moments, rng state,
// step count. Layout is fixed little-endian; save -> load -> save is byte
// identical.
#pragma once

#include <string>

#include "cdet/model.hpp"
#include "cdet/optimizer.hpp"
#include "cdet/rng.hpp"

namespace cdet {

void save_checkpoint(const std::string& path, ContextDet& model, AdamW& opt, const Rng& rng,
                     int step);

// Restores everything in place; returns the stored step count. Throws on
// bad magic/version, architecture or vocabulary mismatch, or truncation.
int load_checkpoint(const std::string& path, ContextDet& model, AdamW& opt, Rng& rng);

// Header only: enough to reconstruct a matching model (parse_arch +
// Vocabulary::from_ordered) without owning one yet.
struct CheckpointInfo {
  std::string arch;
  std::vector<std::string> words;
  std::vector<bool> noun_flags;
  int step = 0;
};
CheckpointInfo peek_checkpoint(const std::string& path);

}  // namespace cdet
