#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>

namespace rangeda {

/// Writes through `fill` into a sibling temp file, then renames it over `path`.
void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& fill);

void write_text_atomically(const std::filesystem::path& path, const std::string& text);

std::string read_text(const std::filesystem::path& path);

}  // namespace rangeda
