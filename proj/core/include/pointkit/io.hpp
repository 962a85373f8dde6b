#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pointkit/geom.hpp"

namespace pointkit {

/// PTPC binary point-cloud format, little-endian:
///   magic "PTPC" (4 bytes), version u32 = 1, flags u32 (bit 0: labels
///   present), n u32, c u32, positions n×3 f32, features n×c f32,
///   then labels n×u32 when flagged.
/// Storage is 32-bit and therefore lossy relative to the 64-bit compute path.
struct PtpcFile {
  PointCloud cloud;
  std::optional<std::vector<std::uint32_t>> labels;
};

void write_ptpc(const std::string& path, const PointCloud& cloud,
                const std::vector<std::uint32_t>* labels = nullptr);
PtpcFile read_ptpc(const std::string& path);

/// Logits container, little-endian: magic "PTLG", version u32 = 1, n u32,
/// classes u32, data n×classes f32.
void write_logits(const std::string& path, const Tensor& logits);
Tensor read_logits(const std::string& path);

}  // namespace pointkit
