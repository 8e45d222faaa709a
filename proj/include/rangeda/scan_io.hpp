#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "rangeda/geometry.hpp"

namespace rangeda {

// KITTI-compatible point file: 4 little-endian float32 per point (x, y, z,
// unused). The fourth value is read and discarded.
PointCloud read_points(const std::filesystem::path& path);
void write_points(const std::filesystem::path& path, const PointCloud& cloud);

// One little-endian uint32 per point; class id in the low 16 bits.
std::vector<std::int32_t> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<std::int32_t>& labels);

/// raw id -> mapped id. Text file of "raw_id mapped_id" lines; '#' comments.
class ClassMapping {
 public:
  ClassMapping() = default;
  static ClassMapping load(const std::filesystem::path& path);
  static ClassMapping parse(const std::string& text);

  void set(std::int32_t raw, std::int32_t mapped) { table_[raw] = mapped; }
  // Unlisted ids map to class 0.
  std::int32_t map(std::int32_t raw) const;
  void apply(std::vector<std::int32_t>& labels) const;
  bool empty() const { return table_.empty(); }

 private:
  std::map<std::int32_t, std::int32_t> table_;
};

}  // namespace rangeda
