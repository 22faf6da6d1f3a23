#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lobforge/core/error.hpp"
#include "lobforge/nn/layers.hpp"

// Flat binary container of named float64 arrays. Layout, all little-endian:
//
//   "LOBFCKPT"                 8-byte magic
//   u32 version (= 1)
//   u32 count
//   count x {
//     u32 name_len, name bytes (no terminator)
//     u32 rank, u64 dims[rank]
//     f64 values[prod(dims)]   row-major
//   }

namespace lobforge::nn {

inline constexpr char kCheckpointMagic[8] = {'L', 'O', 'B', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("checkpoint: unexpected end of file");
  return v;
}

}  // namespace detail

struct NamedArray {
  Shape shape;
  std::vector<double> values;
};

inline void save_arrays(std::ostream& out, const ParamList& params) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) detail::put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.tensor.values().data()),
              static_cast<std::streamsize>(p.tensor.size() * sizeof(double)));
  }
}

inline std::map<std::string, NamedArray> load_arrays(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw DataError("checkpoint: bad magic");
  if (detail::get<std::uint32_t>(in) != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
  const auto count = detail::get<std::uint32_t>(in);
  std::map<std::string, NamedArray> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(detail::get<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    NamedArray arr;
    const auto rank = detail::get<std::uint32_t>(in);
    for (std::uint32_t r = 0; r < rank; ++r) arr.shape.push_back(detail::get<std::uint64_t>(in));
    arr.values.resize(numel(arr.shape));
    in.read(reinterpret_cast<char*>(arr.values.data()), static_cast<std::streamsize>(arr.values.size() * sizeof(double)));
    if (!in) throw DataError("checkpoint: truncated array '" + name + "'");
    out.emplace(std::move(name), std::move(arr));
  }
  return out;
}

// Copies stored arrays into existing parameters, matching by name and shape.
inline void restore_params(ParamList& params, const std::map<std::string, NamedArray>& arrays) {
  if (arrays.size() != params.size()) {
    throw DataError("checkpoint holds " + std::to_string(arrays.size()) + " arrays, model has " +
                    std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = arrays.find(p.name);
    if (it == arrays.end()) throw DataError("checkpoint is missing parameter '" + p.name + "'");
    if (it->second.shape != p.tensor.shape()) {
      throw DataError("checkpoint shape mismatch for '" + p.name + "': " + to_string(it->second.shape) + " vs " +
                      to_string(p.tensor.shape()));
    }
    std::copy(it->second.values.begin(), it->second.values.end(), p.tensor.values().begin());
  }
}

inline void save_checkpoint(const std::string& path, const ParamList& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  save_arrays(out, params);
}

inline void load_checkpoint(const std::string& path, ParamList& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  restore_params(params, load_arrays(in));
}

}  // namespace lobforge::nn
