#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "modrestore/cli.hpp"
#include "modrestore/evaluation.hpp"
#include "modrestore/image_io.hpp"
#include "modrestore/interpolation.hpp"
#include "support/toy_data.hpp"

using namespace modrestore;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh(const std::string& name) {
  auto d = fs::temp_directory_path() / ("modrestore-cli-" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path write_images(const std::string& name, int count, int size) {
  const auto dir = fresh(name);
  const auto imgs = toy::smooth_images(count, size, 3);
  for (int i = 0; i < count; ++i) write_png(dir / ("img" + std::to_string(i) + ".png"), imgs[static_cast<std::size_t>(i)]);
  return dir;
}

RestorationModel toy_model(std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.channels = {4, 8, 16};
  RestorationModel m{build_generator<float>(cfg, seed), std::nullopt};
  m.condition = build_condition_net<float>(ConditionTarget::Generator, m.generator.sites(), seed + 100, 0.3);
  return m;
}

fs::path write_bundle(const std::string& name) {
  const auto dir = fresh(name);
  save_model_dir(dir / "gan", toy_model(1));
  save_model_dir(dir / "mse", toy_model(2));
  return dir;
}

}  // namespace

TEST_CASE("usage and exit codes") {
  auto r = cli({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("degrade") != std::string::npos);

  r = cli({"degrade", "--in", "x", "--out", "y", "--frob"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--frob") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);

  CHECK(cli({}).code == 1);

  const auto img = write_images("usage", 1, 16) / "img0.png";
  r = cli({"restore", "--in", img.string(), "--z", "1.5", "0", "--alpha", "0.3", "--model", "m"});
  CHECK(r.code == 1);
  CHECK(r.err.find("[0,1]") != std::string::npos);
  CHECK(cli({"restore", "--in", img.string(), "--z", "0.5", "0.6", "--alpha", "1.3", "--model", "m"}).code == 1);
  CHECK(cli({"restore", "--in", img.string(), "--z", "0.5", "0.6"}).code == 1);
  CHECK(cli({"degrade", "--in", img.string(), "--out", "o", "--blur", "4.5"}).code == 1);
}

TEST_CASE("degrade is seeded and mirrors table labels") {
  const auto in = write_images("deg-in", 2, 24);
  const auto a = fresh("deg-a"), b = fresh("deg-b"), c = fresh("deg-c");
  REQUIRE(cli({"--seed", "7", "degrade", "--in", in.string(), "--out", a.string(), "--blur", "2", "--sigma", "30"}).code == 0);
  REQUIRE(cli({"degrade", "--in", in.string(), "--out", b.string(), "--blur", "2", "--sigma", "30", "--seed", "7"}).code == 0);
  REQUIRE(cli({"degrade", "--in", in.string(), "--out", c.string(), "--blur", "2", "--sigma", "30", "--seed", "8"}).code == 0);
  CHECK(slurp(a / "img0.png") == slurp(b / "img0.png"));
  CHECK(slurp(a / "img1.png") == slurp(b / "img1.png"));
  CHECK(slurp(a / "img0.png") != slurp(c / "img0.png"));

  std::mt19937_64 rng(7);
  const auto expected = degrade(read_png(in / "img0.png"), {2, 30}, rng());
  CHECK(encode_png(expected) == slurp(a / "img0.png"));

  const auto dry = fresh("deg-dry");
  const auto r = cli({"--dry-run", "degrade", "--in", in.string(), "--out", (dry / "o").string(), "--blur", "2"});
  CHECK(r.code == 0);
  CHECK(Json::parse(r.out)["spec"]["blur"] == 2.0);
  CHECK_FALSE(fs::exists(dry / "o"));
}

TEST_CASE("config files: toml and json, flags win, unknown keys rejected") {
  const auto in = write_images("cfg-in", 1, 16);
  const auto dir = fresh("cfg");
  std::ofstream(dir / "c.toml") << "seed = 3\n[degrade]\nblur = 2\nsigma = 30\n";
  auto r = cli({"--config", (dir / "c.toml").string(), "--dry-run", "degrade", "--in", in.string(), "--out", "o"});
  REQUIRE(r.code == 0);
  auto plan = Json::parse(r.out);
  CHECK(plan["spec"] == Json{{"blur", 2.0}, {"sigma", 30.0}});
  CHECK(plan["seed"] == 3);

  r = cli({"--config", (dir / "c.toml").string(), "--dry-run", "degrade", "--in", in.string(), "--out", "o", "--sigma", "0"});
  CHECK(Json::parse(r.out)["spec"]["sigma"] == 0.0);

  std::ofstream(dir / "c.json") << R"({"seed": 4, "train": {"batch_size": 4, "channels": [4, 8, 16], "crop_size": 16}})";
  r = cli({"--config", (dir / "c.json").string(), "--dry-run", "train", "--stage", "1", "--data", in.string(), "--out", "o"});
  REQUIRE(r.code == 0);
  plan = Json::parse(r.out);
  CHECK(plan["config"]["batch_size"] == 4);
  CHECK(plan["config"]["generator"]["channels"] == Json{4, 8, 16});
  CHECK(plan["config"]["init_seed"] == 4);
  CHECK(plan["config"]["data_seed"] == 5);

  std::ofstream(dir / "bad.toml") << "[degrade]\nbogus = 1\n";
  r = cli({"--config", (dir / "bad.toml").string(), "degrade", "--in", in.string(), "--out", "o"});
  CHECK(r.code == 1);
  CHECK(r.err.find("bogus") != std::string::npos);
  std::ofstream(dir / "deep.json") << R"({"train": {"generator": {"channels": [4]}}})";
  CHECK(cli({"--config", (dir / "deep.json").string(), "train", "--stage", "1", "--data", ".", "--out", "o"}).code == 1);
  CHECK(cli({"--config", (dir / "missing.toml").string(), "degrade", "--in", ".", "--out", "o"}).code == 1);
}

TEST_CASE("train, interpolate, restore and evaluate end to end") {
  const auto data = write_images("e2e-data", 3, 24);
  const auto s1 = fresh("e2e-s1"), s1b = fresh("e2e-s1b"), s2 = fresh("e2e-s2");
  const std::vector<std::string> small{"--channels", "4", "8", "16", "--crop-size", "16", "--batch-size", "2", "--iters", "3"};
  auto args = std::vector<std::string>{"--seed", "5", "train", "--stage", "1", "--data", data.string(), "--out", s1.string()};
  args.insert(args.end(), small.begin(), small.end());
  auto r = cli(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(s1 / kGeneratorFile));
  CHECK(fs::exists(s1 / kConditionGFile));
  std::ifstream tel(s1 / "telemetry.jsonl");
  int lines = 0;
  for (std::string line; std::getline(tel, line);) ++lines;
  CHECK(lines == 3);
  args[args.size() - small.size() - 1] = s1b.string();
  REQUIRE(cli(args).code == 0);
  CHECK(slurp(s1 / kGeneratorFile) == slurp(s1b / kGeneratorFile));

  r = cli({"train", "--stage", "2", "--data", data.string(), "--out", s2.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("--warm") != std::string::npos);
  args = {"train", "--stage", "2", "--data", data.string(), "--out", s2.string(), "--warm", s1.string(), "--d-plan",
          "4:1", "4:2", "6:1", "6:2", "8:1", "8:2", "8:1", "8:2", "8:1", "512:2", "--d-fc-hidden", "6",
          "--extractor-width", "4"};
  args.insert(args.end(), small.begin(), small.end());
  r = cli(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(s2 / kDiscriminatorFile));
  CHECK(cli({"train", "--stage", "2", "--data", data.string(), "--out", s2.string(), "--warm", s1.string(), "--d-plan",
             "4x1"})
            .code == 1);

  const auto mid = fresh("e2e-mid") / "m";
  REQUIRE(cli({"interpolate", "--gan", s2.string(), "--mse", s1.string(), "--alpha", "0.3", "--out", mid.string()}).code == 0);
  const auto img = data / "img1.png";
  const auto outs = fresh("e2e-out");
  r = cli({"restore", "--in", img.string(), "--z", "0.5", "0.6", "--alpha", "0.3", "--gan", s2.string(), "--mse",
           s1.string(), "--out", (outs / "blend.png").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("blur 2.0 / sigma 30") != std::string::npos);
  REQUIRE(cli({"restore", "--in", img.string(), "--z", "0.5", "0.6", "--model", mid.string(), "--out",
               (outs / "mid.png").string()})
              .code == 0);
  CHECK(slurp(outs / "blend.png") == slurp(outs / "mid.png"));
  const auto restored = read_png(outs / "blend.png");
  CHECK(restored.height == 24);
  CHECK(restored.width == 24);

  const auto bundle = write_bundle("e2e-bundle");
  std::ofstream(outs / "odd.png", std::ios::binary) << encode_png(Image::constant(3, 10, 13, 0.4f));
  REQUIRE(cli({"restore", "--in", (outs / "odd.png").string(), "--z", "0.5", "0.6", "--alpha", "0.3", "--bundle",
               bundle.string()})
              .code == 0);
  const auto odd = read_png(outs / "odd_restored.png");
  CHECK(odd.height == 10);
  CHECK(odd.width == 13);

  std::ofstream(outs / "grid.json") << R"([{"blur": 2, "sigma": 30}, {"blur": 0, "sigma": 30}])";
  const std::vector<std::string> eval{"evaluate", "--ckpt", (s1 / kGeneratorFile).string(), "--cond",
                                      (s1 / kConditionGFile).string(), "--baseline", s1.string(), "--data", data.string(),
                                      "--grid", (outs / "grid.json").string(), "--reference", "table2.psnr.unet"};
  auto e1 = eval, e2 = eval;
  e1.insert(e1.end(), {"--out", (outs / "r1.csv").string()});
  e2.insert(e2.end(), {"--out", (outs / "r2.csv").string(), "--threads", "2"});
  r = cli(e1);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("blur0_sigma30 reported=") != std::string::npos);
  REQUIRE(cli(e2).code == 0);
  CHECK(slurp(outs / "r1.csv") == slurp(outs / "r2.csv"));
  CHECK(slurp(outs / "r1.json") == slurp(outs / "r2.json"));
  const auto json = Json::parse(slurp(outs / "r1.json"));
  CHECK(json["rows"].size() == 6);
  for (const auto& row : json["rows"]) CHECK(row["values"]["psnr"]["distance"] == 0.0);

  CHECK(cli({"evaluate", "--ckpt", s1.string(), "--data", data.string(), "--out", "x.csv", "--metrics", "ssim"}).code == 1);
  CHECK(cli({"evaluate", "--ckpt", s1.string(), "--data", data.string(), "--out", "x.csv", "--reference", "t9"}).code == 1);
}

TEST_CASE("serve resolves environment and flags without starting") {
  const auto bundles = fresh("serve");
  ::setenv("MODRESTORE_PORT", "9001", 1);
  ::setenv("MODRESTORE_BUNDLES", bundles.c_str(), 1);
  auto r = cli({"--dry-run", "serve"});
  REQUIRE(r.code == 0);
  auto plan = Json::parse(r.out);
  CHECK(plan["port"] == 9001);
  CHECK(plan["bundles"] == bundles.string());
  r = cli({"--dry-run", "serve", "--port", "9002"});
  CHECK(Json::parse(r.out)["port"] == 9002);
  ::unsetenv("MODRESTORE_PORT");
  ::unsetenv("MODRESTORE_BUNDLES");
  CHECK(cli({"--dry-run", "serve", "--bundles", "/nonexistent"}).code == 1);
}
