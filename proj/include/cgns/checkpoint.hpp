#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgns/layers.hpp"

namespace cgns {

constexpr std::uint32_t kCheckpointMagic = 0x53'4E'47'43;  // "CGNS" little-endian
constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::int64_t iteration = 0;
};

/// A structurally valid checkpoint that does not fit the active model or
/// config (wrong hash, version, parameter set, or shapes).
struct CheckpointMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

/// Binary archive: header (magic, format version, config hash, seed,
/// iteration) followed by each registry parameter as name, shape, and
/// little-endian doubles, in registry order.
inline void save_checkpoint(const std::string& path, const ParamRegistry& reg, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  detail::write_pod(out, kCheckpointMagic);
  detail::write_pod(out, kCheckpointVersion);
  detail::write_pod(out, meta.config_hash);
  detail::write_pod(out, meta.seed);
  detail::write_pod(out, meta.iteration);
  detail::write_pod(out, static_cast<std::uint64_t>(reg.items().size()));
  for (const auto& [name, t] : reg.items()) {
    detail::write_pod(out, static_cast<std::uint64_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(out, static_cast<std::uint64_t>(t.shape().size()));
    for (int d : t.shape()) detail::write_pod(out, static_cast<std::int64_t>(d));
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failure on " + path);
}

/// Reads only the header, for compatibility checks and diagnostics.
inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  if (detail::read_pod<std::uint32_t>(in) != kCheckpointMagic)
    throw std::runtime_error("checkpoint: " + path + " is not a model checkpoint");
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: format version " + std::to_string(version) + ", expected " +
                             std::to_string(kCheckpointVersion));
  CheckpointMeta meta;
  meta.config_hash = detail::read_pod<std::uint64_t>(in);
  meta.seed = detail::read_pod<std::uint64_t>(in);
  meta.iteration = detail::read_pod<std::int64_t>(in);
  return meta;
}

/// Loads parameters into an already-built registry. The parameter names and
/// shapes must match exactly; the stored config hash must equal
/// `expected_hash` unless `override_hash_check` is set.
inline CheckpointMeta load_checkpoint(const std::string& path, ParamRegistry& reg,
                                      std::uint64_t expected_hash, bool override_hash_check = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  if (detail::read_pod<std::uint32_t>(in) != kCheckpointMagic)
    throw std::runtime_error("checkpoint: " + path + " is not a model checkpoint");
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw CheckpointMismatch("checkpoint: format version " + std::to_string(version) + ", expected " +
                             std::to_string(kCheckpointVersion));
  CheckpointMeta meta;
  meta.config_hash = detail::read_pod<std::uint64_t>(in);
  meta.seed = detail::read_pod<std::uint64_t>(in);
  meta.iteration = detail::read_pod<std::int64_t>(in);
  if (meta.config_hash != expected_hash && !override_hash_check)
    throw CheckpointMismatch("checkpoint: config hash " + std::to_string(meta.config_hash) +
                             " does not match the active config hash " + std::to_string(expected_hash) +
                             " (pass the hash-check override to load anyway)");
  const auto count = detail::read_pod<std::uint64_t>(in);
  if (count != reg.items().size())
    throw CheckpointMismatch("checkpoint: holds " + std::to_string(count) + " parameters, model has " +
                             std::to_string(reg.items().size()));
  for (const auto& [name, t] : reg.items()) {
    const auto name_len = detail::read_pod<std::uint64_t>(in);
    std::string stored(name_len, '\0');
    in.read(stored.data(), static_cast<std::streamsize>(name_len));
    if (!in || stored != name)
      throw CheckpointMismatch("checkpoint: parameter '" + stored + "' where model expects '" + name + "'");
    const auto ndims = detail::read_pod<std::uint64_t>(in);
    Shape shape(ndims);
    for (auto& d : shape) d = static_cast<int>(detail::read_pod<std::int64_t>(in));
    if (shape != t.shape())
      throw CheckpointMismatch("checkpoint: parameter '" + name + "' has shape " + shape_str(shape) +
                               ", model expects " + shape_str(t.shape()));
    Tensor dst = t;
    in.read(reinterpret_cast<char*>(dst.values().data()),
            static_cast<std::streamsize>(dst.numel() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated parameter data for '" + name + "'");
  }
  return meta;
}

}  // namespace cgns
