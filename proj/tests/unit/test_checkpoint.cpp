#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "modrestore/model.hpp"
#include "support/oracles.hpp"
#include "support/toy_data.hpp"

using namespace modrestore;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("modrestore_test_checkpoint_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

GeneratorConfig small() {
  GeneratorConfig cfg;
  cfg.channels = {4, 8, 16};
  return cfg;
}

std::uint64_t le(const std::string& s, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
  return v;
}

}  // namespace

TEST_CASE("container layout") {
  ParameterTree<float> t;
  t.add("a", {2}).values << 1.0f, -2.5f;
  t.add("b", {1}, ParamKind::Buffer).values << 0.125f;
  const Checkpoint c{"generator", Json{{"x", 1}}, {}, t, Json{{"note", "n"}}};
  const std::string bytes = encode_checkpoint(c);
  CHECK(bytes.substr(0, 8) == std::string("MRCKPT\0\1", 8));
  CHECK(le(bytes, 8, 4) == 1);
  const auto n = le(bytes, 12, 8);
  const auto header = Json::parse(bytes.substr(20, n));
  CHECK(header.at("format") == "modrestore-checkpoint");
  CHECK(header.at("kind") == "generator");
  CHECK(header.at("arrays").size() == 2);
  CHECK(header.at("arrays")[1].at("kind") == "buffer");
  CHECK(header.at("arrays")[1].at("offset") == 2);
  CHECK(bytes.size() == 20 + n + 3 * 4);
  // 1.0f little-endian
  CHECK(le(bytes, 20 + n, 4) == 0x3f800000u);

  const auto back = decode_checkpoint(bytes);
  CHECK(back.tree == t);
  CHECK(back.tree.at("b").kind == ParamKind::Buffer);
  CHECK(back.config == c.config);
  CHECK(back.meta == c.meta);
  CHECK(encode_checkpoint(back) == bytes);
}

TEST_CASE("corrupt containers are rejected") {
  ParameterTree<float> t;
  t.add("a", {4});
  const std::string good = encode_checkpoint({"generator", Json::object(), {}, t, Json::object()});
  CHECK_THROWS_AS(decode_checkpoint("hello"), CheckpointFormatError);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointFormatError);
  auto bad_version = good;
  bad_version[8] = 2;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), CheckpointFormatError);
  CHECK_THROWS_AS(decode_checkpoint(good.substr(0, good.size() - 1)), CheckpointFormatError);
  auto bad_header = good;
  bad_header[20] = '!';
  CHECK_THROWS_AS(decode_checkpoint(bad_header), CheckpointFormatError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.mrck"), DataError);
}

TEST_CASE("network round trips and manifest validation") {
  const auto g = build_generator<float>(small(), 1);
  const auto back = generator_from_checkpoint(decode_checkpoint(encode_checkpoint(to_checkpoint(g))));
  CHECK(back.tree == g.tree);
  CHECK(back.config == g.config);

  DiscriminatorConfig dc;
  dc.plan = {{4, 1}, {4, 2}, {6, 1}, {6, 2}, {8, 1}, {8, 2}, {8, 1}, {8, 2}, {8, 1}, {512, 2}};
  dc.patch_size = 16;
  const auto d = build_discriminator<float>(dc, 2);
  const auto dback = discriminator_from_checkpoint(decode_checkpoint(encode_checkpoint(to_checkpoint(d))));
  CHECK(dback.tree == d.tree);
  CHECK(dback.config == dc);

  const auto cg = build_condition_net<float>(ConditionTarget::Generator, g.sites(), 3);
  const auto cback = condition_from_checkpoint(decode_checkpoint(encode_checkpoint(to_checkpoint(cg))));
  CHECK(cback.tree == cg.tree);
  CHECK(cback.sites == cg.sites);
  CHECK(cback.target == ConditionTarget::Generator);

  auto missing = to_checkpoint(g);
  ParameterTree<float> pruned;
  for (const auto& [name, e] : missing.tree)
    if (name != "s2.down.bias") pruned.add(name, e.shape, e.kind).values = e.values;
  missing.tree = pruned;
  try {
    generator_from_checkpoint(missing);
    FAIL("expected CheckpointIncompatible");
  } catch (const CheckpointIncompatible& e) {
    CHECK(e.keys() == std::vector<std::string>{"s2.down.bias"});
  }
  CHECK_THROWS_AS(discriminator_from_checkpoint(to_checkpoint(g)), CheckpointFormatError);
  CHECK_THROWS_AS(generator_from_checkpoint(to_checkpoint(cg)), CheckpointFormatError);
}

TEST_CASE("model directories") {
  const auto dir = scratch_dir("model");
  const auto g = build_generator<float>(small(), 4);
  const RestorationModel m{g, build_condition_net<float>(ConditionTarget::Generator, g.sites(), 5)};
  save_model_dir(dir / "cond", m);
  CHECK(fs::exists(dir / "cond" / kGeneratorFile));
  CHECK(fs::exists(dir / "cond" / kConditionGFile));
  CHECK_FALSE(fs::exists(dir / "cond" / (std::string(kGeneratorFile) + ".tmp")));
  const auto back = load_model_dir(dir / "cond");
  CHECK(back.generator.tree == m.generator.tree);
  CHECK(back.condition->tree == m.condition->tree);

  save_model_dir(dir / "base", RestorationModel{g, std::nullopt});
  const auto base = load_model_dir(dir / "base");
  CHECK_FALSE(base.conditional());
  const auto mods = base.modulation(ConditionVector{{0.7, 0.1}});
  for (const auto& w : mods.weights) CHECK(w.isOnes());

  CHECK_THROWS_AS(load_model_dir(dir / "nothing"), DataError);

  auto mismatched = m;
  mismatched.condition = build_condition_net<float>(ConditionTarget::Generator,
                                                    build_generator<float>(GeneratorConfig{}, 1).sites(), 5);
  CHECK_THROWS_AS(mismatched.validate(), ConfigError);
}

TEST_CASE("restore pads, crops and clamps") {
  const auto g = build_generator<float>(small(), 6);
  const RestorationModel m{g, build_condition_net<float>(ConditionTarget::Generator, g.sites(), 7)};
  const auto img = oracle::random_map<float>(3, 13, 10, 1, 0, 1);
  const auto out = m.restore(img, ConditionVector{{0.5, 0.5}});
  CHECK(out.height == 13);
  CHECK(out.width == 10);
  CHECK(out.data.minCoeff() >= 0.0f);
  CHECK(out.data.maxCoeff() <= 1.0f);
  CHECK(m.restore(img, ConditionVector{{0.5, 0.5}}).data == out.data);
  CHECK_THROWS_AS(m.restore(img, ConditionVector{{0.5, -0.5}}), InvalidCondition);
  CHECK_THROWS_AS(m.restore(oracle::random_map<float>(2, 8, 8, 1), ConditionVector{{0.5, 0.5}}), ShapeError);
}
