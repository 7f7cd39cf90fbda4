#include "modrestore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace modrestore {

namespace {

constexpr char kMagic[8] = {'M', 'R', 'C', 'K', 'P', 'T', '\0', '\1'};

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t offset) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return value;
}

const char* kind_name(ParamKind k) { return k == ParamKind::Buffer ? "buffer" : "param"; }

ParamKind kind_from(const std::string& s) {
  if (s == "param") return ParamKind::Parameter;
  if (s == "buffer") return ParamKind::Buffer;
  throw CheckpointFormatError("unknown array kind '" + s + "'");
}

void expect_kind(const Checkpoint& ckpt, std::initializer_list<const char*> kinds) {
  for (const char* k : kinds) {
    if (ckpt.kind == k) return;
  }
  throw CheckpointFormatError("checkpoint holds a '" + ckpt.kind + "', not the expected network");
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Json arrays = Json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : ckpt.tree) {
    arrays.push_back({{"name", name},
                      {"shape", e.shape},
                      {"kind", kind_name(e.kind)},
                      {"offset", offset},
                      {"count", static_cast<std::uint64_t>(e.count())}});
    offset += static_cast<std::uint64_t>(e.count());
  }
  const Json header = {{"format", "modrestore-checkpoint"},
                       {"version", kCheckpointVersion},
                       {"kind", ckpt.kind},
                       {"config", ckpt.config},
                       {"sites", ckpt.sites},
                       {"arrays", arrays},
                       {"meta", ckpt.meta}};
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 4);
  for (const auto& [_, e] : ckpt.tree) {
    for (Eigen::Index i = 0; i < e.values.size(); ++i) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(e.values[i]));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointFormatError("not a modrestore checkpoint");
  }
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw CheckpointFormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - 20) throw CheckpointFormatError("truncated checkpoint header");
  Json header;
  try {
    header = Json::parse(bytes.substr(20, header_len));
  } catch (const Json::exception& e) {
    throw CheckpointFormatError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const std::size_t payload = 20 + header_len;

  Checkpoint ckpt;
  try {
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.config = header.value("config", Json::object());
    ckpt.sites = header.value("sites", SiteManifest{});
    ckpt.meta = header.value("meta", Json::object());
    for (const auto& a : header.at("arrays")) {
      const auto offset = a.at("offset").get<std::uint64_t>();
      const auto count = a.at("count").get<std::uint64_t>();
      auto shape = a.at("shape").get<std::vector<int>>();
      for (int d : shape) {
        if (d < 0) throw CheckpointFormatError("negative dimension in checkpoint array table");
      }
      if (offset > bytes.size() || count > bytes.size()) throw CheckpointFormatError("truncated checkpoint payload");
      if (static_cast<std::uint64_t>(shape_count(shape)) != count) {
        throw CheckpointFormatError("array '" + a.at("name").get<std::string>() + "' shape/count mismatch");
      }
      if (payload + (offset + count) * 4 > bytes.size()) throw CheckpointFormatError("truncated checkpoint payload");
      auto& e = ckpt.tree.add(a.at("name").get<std::string>(), std::move(shape), kind_from(a.at("kind").get<std::string>()));
      for (std::uint64_t i = 0; i < count; ++i) {
        e.values[static_cast<Eigen::Index>(i)] =
            std::bit_cast<float>(get_le<std::uint32_t>(bytes, payload + (offset + i) * 4));
      }
    }
  } catch (const Json::exception& e) {
    throw CheckpointFormatError(std::string("malformed checkpoint header: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = encode_checkpoint(ckpt);
  // Write-then-rename so readers never observe a half-written file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

Checkpoint to_checkpoint(const GeneratorParams<float>& p) {
  return {"generator", p.config, p.sites(), p.tree, Json::object()};
}

Checkpoint to_checkpoint(const DiscriminatorParams<float>& p) {
  return {"discriminator", p.config, p.sites(), p.tree, Json::object()};
}

Checkpoint to_checkpoint(const ConditionNetParams<float>& p) {
  const bool gen = p.target == ConditionTarget::Generator;
  return {gen ? "condition_g" : "condition_d", Json::object(), p.sites, p.tree, Json::object()};
}

GeneratorParams<float> generator_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, {"generator"});
  GeneratorParams<float> p{ckpt.config.get<GeneratorConfig>(), ckpt.tree};
  p.config.validate();
  const auto expected = build_generator<float>(p.config, 0).tree;
  const auto diff = expected.manifest_diff(p.tree);
  if (!diff.empty()) throw CheckpointIncompatible("generator checkpoint does not match its config", diff);
  if (ckpt.sites != p.sites()) throw CheckpointFormatError("generator site manifest does not match its config");
  return p;
}

DiscriminatorParams<float> discriminator_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, {"discriminator"});
  DiscriminatorParams<float> p{ckpt.config.get<DiscriminatorConfig>(), ckpt.tree};
  p.config.validate();
  const auto expected = build_discriminator<float>(p.config, 0).tree;
  const auto diff = expected.manifest_diff(p.tree);
  if (!diff.empty()) throw CheckpointIncompatible("discriminator checkpoint does not match its config", diff);
  if (ckpt.sites != p.sites()) throw CheckpointFormatError("discriminator site manifest does not match its config");
  return p;
}

ConditionNetParams<float> condition_from_checkpoint(const Checkpoint& ckpt) {
  expect_kind(ckpt, {"condition_g", "condition_d"});
  const auto target = ckpt.kind == "condition_g" ? ConditionTarget::Generator : ConditionTarget::Discriminator;
  ConditionNetParams<float> p{target, ckpt.sites, ckpt.tree};
  const auto diff = build_condition_net<float>(target, p.sites, 0).tree.manifest_diff(p.tree);
  if (!diff.empty()) throw CheckpointIncompatible("condition network checkpoint does not match its sites", diff);
  return p;
}

}  // namespace modrestore
