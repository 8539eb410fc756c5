#pragma once

#include <string>

#include "dbf/model.hpp"

namespace dbf {

// Versioned binary container of named parameter tensors.
// Layout (little-endian):
//   bytes 0-7   magic "DBFCKPT1"
//   u32         format version (1)
//   u64         manifest length, then manifest bytes (JSON: config + dims)
//   u64         tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u64 per dim,
//               float64 row-major payload
// Writes are atomic: temp file in the same directory, then rename.
void save_checkpoint(const std::string& path, const DbfModel& model);

// Rebuilds the model from the manifest and fills every parameter; missing,
// extra, or reshaped tensors are errors.
DbfModel load_checkpoint(const std::string& path);

}  // namespace dbf
