#pragma once

// Lookup into the preset files compiled into the library.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lyapnav/presets_data.hpp"

namespace lyapnav {

/// Text of data/<kind>/<name>.json as it was at configure time.
inline std::optional<std::string_view> preset_text(std::string_view kind, std::string_view name) {
  const std::string key = std::string(kind) + "/" + std::string(name);
  for (const auto& [k, text] : presets_data::kFiles) {
    if (k == key) return text;
  }
  return std::nullopt;
}

inline std::vector<std::string> preset_names(std::string_view kind) {
  std::vector<std::string> out;
  for (const auto& [k, text] : presets_data::kFiles) {
    if (k.size() > kind.size() && k.substr(0, kind.size()) == kind && k[kind.size()] == '/') {
      out.emplace_back(k.substr(kind.size() + 1));
    }
  }
  return out;
}

}  // namespace lyapnav
