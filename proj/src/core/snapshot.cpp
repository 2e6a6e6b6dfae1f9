#include "core/snapshot.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "core/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "snapshot format assumes a little-endian host");

namespace mohets {
namespace {

constexpr char kMagic[4] = {'M', 'O', 'H', 'T'};
constexpr uint8_t kTagF32 = 0;
constexpr uint8_t kTagF64 = 1;

template <typename V>
void write_pod(std::ofstream& os, V value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& is, const std::string& path) {
  V value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(V));
  require(static_cast<bool>(is), ErrorCode::io, "snapshot: truncated file " + path);
  return value;
}

}  // namespace

void save_snapshot(const std::string& path,
                   const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::io, "snapshot: cannot open " + path + " for writing");
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kSnapshotVersion);
  write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    require(t.defined(), ErrorCode::internal, "snapshot: undefined tensor '" + name + "'");
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (int64_t e : t.shape()) write_pod<uint64_t>(os, static_cast<uint64_t>(e));
    write_pod<uint8_t>(os, kTagF32);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * static_cast<int64_t>(sizeof(float))));
  }
  require(static_cast<bool>(os), ErrorCode::io, "snapshot: write failed for " + path);
}

std::map<std::string, Tensor> load_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::io, "snapshot: cannot open " + path);
  char magic[4] = {};
  is.read(magic, 4);
  require(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0, ErrorCode::data,
          "snapshot: bad magic in " + path);
  uint32_t version = read_pod<uint32_t>(is, path);
  require(version == kSnapshotVersion, ErrorCode::data,
          "snapshot: unsupported version " + std::to_string(version) + " in " + path);
  uint32_t count = read_pod<uint32_t>(is, path);
  std::map<std::string, Tensor> out;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = read_pod<uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    require(static_cast<bool>(is), ErrorCode::io, "snapshot: truncated file " + path);
    uint32_t rank = read_pod<uint32_t>(is, path);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r)
      shape[r] = static_cast<int64_t>(read_pod<uint64_t>(is, path));
    uint8_t tag = read_pod<uint8_t>(is, path);
    int64_t n = numel(shape);
    Tensor t(shape);
    if (tag == kTagF32) {
      is.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(n * static_cast<int64_t>(sizeof(float))));
    } else if (tag == kTagF64) {
      std::vector<double> buf(static_cast<size_t>(n));
      is.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(n * static_cast<int64_t>(sizeof(double))));
      for (int64_t j = 0; j < n; ++j) t.data()[j] = static_cast<float>(buf[static_cast<size_t>(j)]);
    } else {
      fail(ErrorCode::data, "snapshot: unknown dtype tag " + std::to_string(tag) + " in " + path);
    }
    require(static_cast<bool>(is), ErrorCode::io, "snapshot: truncated tensor data in " + path);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace mohets
