#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "modrestore/condition.hpp"
#include "modrestore/discriminator.hpp"
#include "modrestore/generator.hpp"
#include "modrestore/serialization.hpp"

namespace modrestore {

/// Checkpoint container, format version 1:
///
///   bytes 0-7    magic "MRCKPT\0\1"
///   bytes 8-11   format version, uint32 little-endian
///   bytes 12-19  header length N, uint64 little-endian
///   N bytes      UTF-8 JSON header: kind, config, site manifest, array table, meta
///   payload      every array as little-endian float32, in array-table order
///
/// Array table entries carry name, shape, kind ("param" | "buffer"), offset
/// (in floats from the payload start) and count.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  Json config = Json::object();
  SiteManifest sites;
  ParameterTree<float> tree;
  Json meta = Json::object();
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint to_checkpoint(const GeneratorParams<float>& p);
Checkpoint to_checkpoint(const DiscriminatorParams<float>& p);
Checkpoint to_checkpoint(const ConditionNetParams<float>& p);

GeneratorParams<float> generator_from_checkpoint(const Checkpoint& ckpt);
DiscriminatorParams<float> discriminator_from_checkpoint(const Checkpoint& ckpt);
ConditionNetParams<float> condition_from_checkpoint(const Checkpoint& ckpt);

}  // namespace modrestore
