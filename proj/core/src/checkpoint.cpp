#include "advlat/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace advlat {

using nlohmann::json;

const Tensor* Bundle::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

const Tensor& Bundle::get(const std::string& name) const {
  if (const Tensor* t = find(name)) return *t;
  throw FormatError("bundle '" + kind + "' has no tensor named " + name);
}

std::string sidecar_path(const std::string& manifest_path) { return manifest_path + ".bin"; }

namespace {

void put_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_le(const unsigned char* b) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_bundle(const std::string& path, const Bundle& bundle) {
  json manifest;
  manifest["v"] = kFormatVersion;
  manifest["kind"] = bundle.kind;
  manifest["meta"] = bundle.meta;
  manifest["sidecar"] = std::filesystem::path(sidecar_path(path)).filename().string();
  json entries = json::array();
  std::size_t total = 0;
  for (const auto& t : bundle.tensors) {
    entries.push_back({{"name", t.name}, {"shape", t.value.shape()}});
    total += t.value.numel();
  }
  manifest["tensors"] = entries;
  manifest["count"] = total;

  std::ofstream bin(sidecar_path(path), std::ios::binary);
  if (!bin) throw IoError("cannot open " + sidecar_path(path) + " for writing");
  for (const auto& t : bundle.tensors)
    for (double v : t.value.data()) put_le(bin, v);
  if (!bin) throw IoError("write failed: " + sidecar_path(path));

  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

Bundle load_bundle(const std::string& path, const std::string& expected_kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": malformed manifest: " + e.what());
  }
  const int version = manifest.value("v", -1);
  if (version != kFormatVersion) {
    throw FormatError(path + ": format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kFormatVersion) + ")");
  }
  Bundle b;
  b.kind = manifest.value("kind", "");
  if (!expected_kind.empty() && b.kind != expected_kind) {
    throw FormatError(path + ": expected a '" + expected_kind + "' bundle, found '" + b.kind + "'");
  }
  b.meta = manifest.value("meta", json::object());

  const std::string bin_path = sidecar_path(path);
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open sidecar " + bin_path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  std::size_t expected = 0;
  for (const auto& e : manifest.at("tensors")) expected += shape_numel(e.at("shape").get<Shape>());
  if (bytes.size() != expected * 8) {
    throw FormatError(bin_path + ": sidecar length mismatch, expected " + std::to_string(expected * 8) +
                      " bytes, found " + std::to_string(bytes.size()));
  }
  std::size_t offset = 0;
  for (const auto& e : manifest.at("tensors")) {
    Shape shape = e.at("shape").get<Shape>();
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) {
      v = get_le(bytes.data() + offset);
      offset += 8;
    }
    b.tensors.push_back({e.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values))});
  }
  return b;
}

}  // namespace advlat
