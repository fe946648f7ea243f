#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advlat/tensor.hpp"

namespace advlat {

inline constexpr int kFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Manifest JSON at `path` plus a sidecar `path + ".bin"` holding every
/// tensor as 64-bit little-endian doubles in manifest order.
struct Bundle {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor& get(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
};

void save_bundle(const std::string& path, const Bundle& bundle);
/// Throws FormatError on version mismatch (naming both versions), a
/// truncated or oversized sidecar, or an unexpected kind.
Bundle load_bundle(const std::string& path, const std::string& expected_kind = {});

std::string sidecar_path(const std::string& manifest_path);

}  // namespace advlat
