#include "rangeda/diffcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "rangeda/errors.hpp"
#include "rangeda/io_util.hpp"

namespace rangeda {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw IoError("truncated checkpoint: " + path.string());
  }
  return v;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const TensorMap& tensors) {
  write_atomically(path, [&](std::ostream& out) {
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put(out, kCheckpointVersion);
    put(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      put(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put(out, static_cast<std::uint32_t>(t.shape().rank()));
      for (Index d : t.shape().dims()) put(out, static_cast<std::int64_t>(d));
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
  });
}

TensorMap load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError("not a checkpoint file (bad magic): " + path.string());
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
  }
  const auto count = get<std::uint32_t>(in, path);
  TensorMap tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IoError("truncated checkpoint: " + path.string());
    const auto rank = get<std::uint32_t>(in, path);
    std::vector<Index> dims(rank);
    for (auto& d : dims) {
      d = static_cast<Index>(get<std::int64_t>(in, path));
      if (d < 0) throw IoError("negative dimension in checkpoint: " + path.string());
    }
    Tensor<float> t{Shape(std::move(dims))};
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw IoError("truncated checkpoint: " + path.string());
    }
    tensors.emplace(std::move(name), std::move(t));
  }
  return tensors;
}

}  // namespace rangeda
