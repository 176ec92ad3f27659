#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "equireg/tensor.hpp"

namespace equireg {

// Tensor container: 8-byte magic "EQTENSOR", u64 little-endian header length,
// JSON header {"shape":[...],"dtype":"f64","byte-order":"little-endian"},
// then the raw float64 buffer in row-major order.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// A JSON manifest followed by concatenated tensor containers. Used for
/// datasets and checkpoints.
struct Bundle {
  nlohmann::json manifest;
  std::vector<Tensor> tensors;
};

void save_bundle(const std::filesystem::path& path, const Bundle& bundle);
Bundle load_bundle(const std::filesystem::path& path);
/// Reads only the manifest.
nlohmann::json load_bundle_manifest(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Hex SHA-256 digest, used for run manifests and report hashes.
std::string digest_hex(const std::string& bytes);
std::string file_digest(const std::filesystem::path& path);

}  // namespace equireg
