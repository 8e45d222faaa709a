#include "rangeda/scan_io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "rangeda/errors.hpp"
#include "rangeda/io_util.hpp"

namespace rangeda {

static_assert(std::endian::native == std::endian::little, "scan I/O assumes a little-endian host");

namespace {

std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open: " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<char> bytes(size);
  in.seekg(0);
  if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) {
    throw IoError("read failed: " + path.string());
  }
  return bytes;
}

}  // namespace

PointCloud read_points(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  constexpr std::size_t kStride = 4 * sizeof(float);
  if (bytes.size() % kStride != 0) {
    throw IoError(path.string() + ": size " + std::to_string(bytes.size()) +
                  " is not a multiple of 16 bytes");
  }
  const auto n = static_cast<Index>(bytes.size() / kStride);
  PointCloud cloud;
  cloud.points.resize(3, n);
  const auto* f = reinterpret_cast<const float*>(bytes.data());
  for (Index i = 0; i < n; ++i) {
    cloud.points(0, i) = f[4 * i + 0];
    cloud.points(1, i) = f[4 * i + 1];
    cloud.points(2, i) = f[4 * i + 2];
  }
  return cloud;
}

void write_points(const std::filesystem::path& path, const PointCloud& cloud) {
  write_atomically(path, [&](std::ostream& out) {
    for (Index i = 0; i < cloud.size(); ++i) {
      const float rec[4] = {cloud.points(0, i), cloud.points(1, i), cloud.points(2, i), 0.0f};
      out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
  });
}

std::vector<std::int32_t> read_labels(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() % sizeof(std::uint32_t) != 0) {
    throw IoError(path.string() + ": size is not a multiple of 4 bytes");
  }
  std::vector<std::int32_t> labels(bytes.size() / sizeof(std::uint32_t));
  const auto* raw = reinterpret_cast<const std::uint32_t*>(bytes.data());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int32_t>(raw[i] & 0xFFFFu);
  return labels;
}

void write_labels(const std::filesystem::path& path, const std::vector<std::int32_t>& labels) {
  write_atomically(path, [&](std::ostream& out) {
    for (auto l : labels) {
      const auto raw = static_cast<std::uint32_t>(l) & 0xFFFFu;
      out.write(reinterpret_cast<const char*>(&raw), sizeof(raw));
    }
  });
}

ClassMapping ClassMapping::load(const std::filesystem::path& path) { return parse(read_text(path)); }

ClassMapping ClassMapping::parse(const std::string& text) {
  ClassMapping m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    long raw = 0, mapped = 0;
    if (!(ls >> raw)) continue;
    if (!(ls >> mapped)) throw ConfigError("class mapping line " + std::to_string(lineno) + ": expected 'raw mapped'");
    m.set(static_cast<std::int32_t>(raw), static_cast<std::int32_t>(mapped));
  }
  return m;
}

std::int32_t ClassMapping::map(std::int32_t raw) const {
  const auto it = table_.find(raw);
  return it == table_.end() ? 0 : it->second;
}

void ClassMapping::apply(std::vector<std::int32_t>& labels) const {
  for (auto& l : labels) l = map(l);
}

}  // namespace rangeda
