#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivmc/nn/layers.hpp"

namespace ivmc::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

inline constexpr char kCheckpointMagic[8] = {'I', 'V', 'M', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
}  // namespace detail

// Versioned container: magic, format version, JSON architecture header,
// then named flat double arrays in declaration order. Round-trips bit-exactly.
inline void save_checkpoint(std::ostream& out, const nlohmann::json& arch,
                            const std::vector<ParamView>& params) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_u32(out, kCheckpointVersion);
  const std::string hdr = arch.dump();
  detail::write_u32(out, static_cast<std::uint32_t>(hdr.size()));
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  detail::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_u64(out, p.value->size());
    out.write(reinterpret_cast<const char*>(p.value->data()),
              static_cast<std::streamsize>(p.value->size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

inline void save_checkpoint_file(const std::string& path, const nlohmann::json& arch,
                                 const std::vector<ParamView>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  save_checkpoint(out, arch, params);
}

// Reads the architecture header without touching parameters.
inline nlohmann::json read_checkpoint_header(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  const std::uint32_t hlen = detail::read_u32(in);
  std::string hdr(hlen, '\0');
  in.read(hdr.data(), hlen);
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  return nlohmann::json::parse(hdr);
}

inline nlohmann::json read_checkpoint_header_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  return read_checkpoint_header(in);
}

// Loads parameters into an already-constructed registry; names, order, and
// sizes must match exactly.
inline nlohmann::json load_checkpoint(std::istream& in,
                                      std::vector<ParamView>& params) {
  nlohmann::json arch = read_checkpoint_header(in);
  const std::uint32_t nblocks = detail::read_u32(in);
  if (nblocks != params.size())
    throw std::runtime_error("checkpoint: parameter block count mismatch");
  for (auto& p : params) {
    const std::uint32_t nlen = detail::read_u32(in);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    if (name != p.name)
      throw std::runtime_error("checkpoint: expected block '" + p.name + "', found '" + name + "'");
    const std::uint64_t count = detail::read_u64(in);
    if (count != p.value->size())
      throw std::runtime_error("checkpoint: size mismatch in block " + p.name);
    in.read(reinterpret_cast<char*>(p.value->data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  }
  if (!in) throw std::runtime_error("checkpoint: truncated parameter data");
  return arch;
}

inline nlohmann::json load_checkpoint_file(const std::string& path,
                                           std::vector<ParamView>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  return load_checkpoint(in, params);
}

}  // namespace ivmc::nn
