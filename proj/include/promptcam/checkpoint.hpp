#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promptcam/tensor.hpp"

namespace pcam {

// Single-file container: one line of compact JSON (kind, metadata, field
// names/shapes, checksum), a newline, then the raw little-endian f64 buffers
// concatenated in field order. Round-trips are byte-exact.
void write_checkpoint(const std::string& path, const std::string& kind,
                      const nlohmann::json& meta,
                      const std::vector<std::pair<std::string, TensorPtr>>& fields);

struct Checkpoint {
  std::string kind;
  nlohmann::json meta;
  std::vector<std::pair<std::string, TensorPtr>> fields;

  const TensorPtr& field(const std::string& name) const;
};

// Verifies the stored checksum against the loaded buffers.
Checkpoint read_checkpoint(const std::string& path);

// Checksum of a field list as stored on disk (little-endian buffer bytes).
std::uint64_t fields_checksum(
    const std::vector<std::pair<std::string, TensorPtr>>& fields);

}  // namespace pcam
