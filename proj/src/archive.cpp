#include "ste/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace ste {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'E', 'A', 'R', 'C', 'H', '1'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes little-endian");

}  // namespace

const ArchiveEntry* Archive::find(const std::string& name) const {
  for (const ArchiveEntry& e : tensors) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  nlohmann::json header = archive.meta;
  nlohmann::json list = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const ArchiveEntry& e : archive.tensors) {
    if (e.values.size() != e.shape.numel()) {
      throw Error(ErrorKind::kShapeMismatch, "archive tensor " + e.name + " has wrong size");
    }
    const std::uint64_t nbytes = e.values.size() * (e.f64 ? 8 : 4);
    list.push_back({{"name", e.name},
                    {"shape", {e.shape.n, e.shape.c, e.shape.h, e.shape.w}},
                    {"dtype", e.f64 ? "f64" : "f32"},
                    {"offset", offset},
                    {"nbytes", nbytes}});
    offset += nbytes;
  }
  header["tensors"] = list;
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const ArchiveEntry& e : archive.tensors) {
    if (e.f64) {
      out.write(reinterpret_cast<const char*>(e.values.data()),
                static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    } else {
      const std::vector<float> narrow(e.values.begin(), e.values.end());
      out.write(reinterpret_cast<const char*>(narrow.data()),
                static_cast<std::streamsize>(narrow.size() * sizeof(float)));
    }
  }
  if (!out) throw Error(ErrorKind::kIoError, "failed writing " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kFileNotFound, path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::kParseError, path.string() + " is not a tensor archive");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (len > bytes.size() - 16) throw Error(ErrorKind::kParseError, "truncated archive header");
  Archive archive;
  try {
    archive.meta = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParseError, std::string("archive header: ") + e.what());
  }
  const std::size_t data_start = 16 + len;
  try {
    for (const auto& t : archive.meta.at("tensors")) {
      ArchiveEntry e;
      e.name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<std::vector<int>>();
      if (shape.size() != 4) throw Error(ErrorKind::kParseError, e.name + ": shape must be 4-D");
      e.shape = {shape[0], shape[1], shape[2], shape[3]};
      const std::string dtype = t.at("dtype").get<std::string>();
      if (dtype != "f32" && dtype != "f64") {
        throw Error(ErrorKind::kParseError, e.name + ": unsupported dtype " + dtype);
      }
      e.f64 = dtype == "f64";
      const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
      const std::uint64_t width = e.f64 ? 8 : 4;
      const std::uint64_t nbytes = e.shape.numel() * width;
      if (data_start + offset + nbytes > bytes.size()) {
        throw Error(ErrorKind::kParseError, e.name + ": data out of bounds");
      }
      const char* src = bytes.data() + data_start + offset;
      e.values.resize(e.shape.numel());
      if (e.f64) {
        std::memcpy(e.values.data(), src, nbytes);
      } else {
        std::vector<float> narrow(e.shape.numel());
        std::memcpy(narrow.data(), src, nbytes);
        std::copy(narrow.begin(), narrow.end(), e.values.begin());
      }
      archive.tensors.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParseError, std::string("archive tensor table: ") + e.what());
  }
  archive.meta.erase("tensors");
  return archive;
}

}  // namespace ste
