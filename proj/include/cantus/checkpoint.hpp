#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cantus/error.hpp"
#include "cantus/nn.hpp"

namespace cantus {

// Checkpoint container: magic, version, JSON header (config, vocabulary
// manifest, tensor directory), then raw tensor data. All integers and floats
// are written little-endian regardless of host.
constexpr char kCheckpointMagic[8] = {'C', 'A', 'N', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32_le(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

inline void put_u64_le(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline std::uint32_t get_u32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline std::uint64_t get_u64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

template <typename T>
void put_scalar_le(std::ostream& out, T v) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  if constexpr (sizeof(T) == 4) {
    put_u32_le(out, std::bit_cast<std::uint32_t>(v));
  } else {
    put_u64_le(out, std::bit_cast<std::uint64_t>(v));
  }
}

template <typename T>
T get_scalar_le(std::istream& in) {
  if constexpr (sizeof(T) == 4) {
    return std::bit_cast<T>(get_u32_le(in));
  } else {
    return std::bit_cast<T>(get_u64_le(in));
  }
}

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace detail

/// Write a checkpoint: `header` gains a tensor directory; tensors come from
/// the ordered parameter map plus any extra named buffers (optimizer state).
template <typename T>
void save_checkpoint(const std::filesystem::path& path, nlohmann::json header,
                     const ParamMap<T>& params,
                     const std::vector<std::pair<std::string, std::vector<T>>>& extra = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());

  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  auto add_entry = [&](const std::string& name, const Shape* shape, std::size_t count) {
    nlohmann::json e;
    e["name"] = name;
    if (shape) e["shape"] = *shape;
    e["count"] = count;
    e["offset"] = offset;
    dir.push_back(e);
    offset += count * sizeof(T);
  };
  for (const auto& [name, t] : params.items) add_entry(name, &t.shape(), t.size());
  for (const auto& [name, buf] : extra) add_entry(name, nullptr, buf.size());
  header["tensors"] = dir;
  header["dtype"] = detail::dtype_name<T>();
  header["format_version"] = kCheckpointVersion;

  std::string header_bytes = header.dump();
  out.write(kCheckpointMagic, 8);
  detail::put_u32_le(out, kCheckpointVersion);
  detail::put_u64_le(out, header_bytes.size());
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (const auto& [name, t] : params.items)
    for (T v : t.data()) detail::put_scalar_le(out, v);
  for (const auto& [name, buf] : extra)
    for (T v : buf) detail::put_scalar_le(out, v);
  if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

struct CheckpointReader {
  nlohmann::json header;
  std::vector<std::pair<std::string, std::vector<double>>> tensors;  // widened values

  bool has(const std::string& name) const {
    for (const auto& [n, v] : tensors)
      if (n == name) return true;
    return false;
  }
  const std::vector<double>& get(const std::string& name) const {
    for (const auto& [n, v] : tensors)
      if (n == name) return v;
    throw DataError("checkpoint tensor missing: " + name);
  }
};

inline CheckpointReader read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path.string());
  std::uint32_t version = detail::get_u32_le(in);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t hlen = detail::get_u64_le(in);
  std::string hbytes(hlen, '\0');
  in.read(hbytes.data(), static_cast<std::streamsize>(hlen));

  CheckpointReader r;
  r.header = nlohmann::json::parse(hbytes);
  bool f64 = r.header.at("dtype").get<std::string>() == "f64";
  for (const auto& e : r.header.at("tensors")) {
    std::size_t count = e.at("count").get<std::size_t>();
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i)
      values[i] = f64 ? detail::get_scalar_le<double>(in)
                      : static_cast<double>(detail::get_scalar_le<float>(in));
    r.tensors.emplace_back(e.at("name").get<std::string>(), std::move(values));
  }
  if (!in) throw DataError("truncated checkpoint: " + path.string());
  return r;
}

/// Copy stored values into an already-built parameter map (shapes must match).
template <typename T>
void load_params(const CheckpointReader& r, ParamMap<T>& params) {
  for (auto& [name, t] : params.items) {
    const std::vector<double>& stored = r.get(name);
    if (stored.size() != t.size())
      throw DataError("checkpoint tensor size mismatch for " + name);
    auto dst = t.data();
    for (std::size_t i = 0; i < stored.size(); ++i) dst[i] = static_cast<T>(stored[i]);
  }
}

}  // namespace cantus
