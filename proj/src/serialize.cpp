#include "equireg/serialize.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace equireg {

namespace {

static_assert(std::endian::native == std::endian::little, "container format assumes a little-endian host");

constexpr char kTensorMagic[8] = {'E', 'Q', 'T', 'E', 'N', 'S', 'O', 'R'};
constexpr char kBundleMagic[8] = {'E', 'Q', 'B', 'U', 'N', 'D', 'L', 'E'};

void write_framed_json(std::ostream& out, const char (&magic)[8], const nlohmann::json& header) {
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  out.write(magic, 8);
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

nlohmann::json read_framed_json(std::istream& in, const char (&magic)[8], const char* what) {
  char got[8];
  if (!in.read(got, 8) || std::memcmp(got, magic, 8) != 0) {
    throw IoError(std::string(what) + ": bad magic");
  }
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1u << 26)) {
    throw IoError(std::string(what) + ": bad header length");
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw IoError(std::string(what) + ": truncated header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string(what) + ": corrupted header: " + e.what());
  }
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  nlohmann::json header = {{"shape", t.shape()}, {"dtype", "f64"}, {"byte-order", "little-endian"}};
  write_framed_json(out, kTensorMagic, header);
  auto data = t.data();
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!out) throw IoError("write_tensor: stream failure");
}

Tensor read_tensor(std::istream& in) {
  auto header = read_framed_json(in, kTensorMagic, "tensor container");
  Shape shape;
  try {
    if (header.at("dtype") != "f64") throw IoError("tensor container: unsupported dtype");
    if (header.at("byte-order") != "little-endian") throw IoError("tensor container: unsupported byte order");
    shape = header.at("shape").get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("tensor container: malformed header: ") + e.what());
  }
  std::vector<double> data(numel_of(shape));
  if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
    throw IoError("tensor container: truncated data");
  }
  try {
    return Tensor(std::move(shape), std::move(data));
  } catch (const Error& e) {
    throw IoError(std::string("tensor container: ") + e.what());
  }
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

void save_bundle(const std::filesystem::path& path, const Bundle& bundle) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  auto manifest = bundle.manifest;
  manifest["tensor_count"] = bundle.tensors.size();
  write_framed_json(out, kBundleMagic, manifest);
  for (const auto& t : bundle.tensors) write_tensor(out, t);
}

Bundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Bundle bundle;
  bundle.manifest = read_framed_json(in, kBundleMagic, "bundle");
  if (!bundle.manifest.contains("tensor_count")) throw IoError("bundle: manifest lacks tensor_count");
  const auto count = bundle.manifest["tensor_count"].get<std::size_t>();
  bundle.tensors.reserve(count);
  for (std::size_t i = 0; i < count; ++i) bundle.tensors.push_back(read_tensor(in));
  return bundle;
}

nlohmann::json load_bundle_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_framed_json(in, kBundleMagic, "bundle");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string digest_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 digest failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return out.str();
}

std::string file_digest(const std::filesystem::path& path) { return digest_hex(read_text(path)); }

}  // namespace equireg
