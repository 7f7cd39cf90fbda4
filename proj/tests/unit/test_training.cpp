#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "modrestore/training.hpp"
#include "support/oracles.hpp"
#include "support/toy_data.hpp"

using namespace modrestore;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("modrestore_test_training_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainConfig tiny_config(int stage) {
  TrainConfig cfg;
  cfg.stage = stage;
  cfg.batch_size = 2;
  cfg.crop_size = 16;
  cfg.max_iters = 20;
  cfg.generator.channels = {4, 8, 16};
  cfg.discriminator.plan = {{4, 1}, {4, 2}, {6, 1}, {6, 2}, {8, 1}, {8, 2}, {8, 1}, {8, 2}, {8, 1}, {512, 2}};
  cfg.discriminator.patch_size = 16;
  cfg.discriminator.fc_hidden = 8;
  cfg.extractor.width = 4;
  return cfg;
}

std::vector<double> column(const std::vector<IterationLog>& h, double IterationLog::*field) {
  std::vector<double> out;
  for (const auto& l : h) out.push_back(l.*field);
  return out;
}

}  // namespace

TEST_CASE("adam matches a scalar reference on a quadratic") {
  ParameterTree<double> params;
  params.add("x", {1}).values[0] = 5.0;
  params.add("stats", {1}, ParamKind::Buffer).values[0] = 2.0;
  auto state = AdamState<double>::for_tree(params);

  double x = 5.0, m = 0.0, v = 0.0;
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double worst = 0.0;
  for (int t = 1; t <= 100; ++t) {
    auto grads = params.zeros_like();
    grads.values("x")[0] = 2.0 * (params.values("x")[0] - 3.0);
    grads.values("stats")[0] = 1.0;
    adam_step(params, grads, state, lr);

    const double g = 2.0 * (x - 3.0);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
    worst = std::max(worst, std::abs(params.values("x")[0] - x));
  }
  CHECK(worst < 1e-10);
  CHECK(state.step == 100);
  CHECK(params.values("stats")[0] == 2.0);
}

TEST_CASE("learning-rate schedules") {
  CHECK(lr_at(1, 0) == 5e-4);
  CHECK(lr_at(1, 199'999) == 5e-4);
  CHECK(lr_at(1, 200'000) == 2.5e-4);
  CHECK(lr_at(1, 400'000) == 1.25e-4);
  CHECK(lr_at(2, 0) == 5e-4);
  CHECK(lr_at(2, 49'999) == 5e-4);
  CHECK(lr_at(2, 50'000) == 2.5e-4);
  CHECK(lr_at(2, 100'000) == 1.25e-4);
  CHECK(lr_at(2, 300'000) == 5e-4 / 16);
  CHECK(lr_at(2, 450'000) == 1.5625e-5);
  CHECK_THROWS_AS(lr_at(3, 0), ConfigError);
}

TEST_CASE("loss arithmetic") {
  CHECK(total_g_loss(1.0, 2.0, 3.0) == doctest::Approx(1.04).epsilon(1e-15));
  CHECK(total_g_loss(0.0, 0.0, 0.0) == 0.0);
  CHECK(total_g_loss(0.0, 1.0, 0.0) == doctest::Approx(0.005).epsilon(1e-15));

  CHECK(gan_losses(0.3, 0.0).g_loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(gan_losses(60.0, -60.0).d_loss < 1e-20);
  CHECK(gan_losses(1000.0, -1000.0).d_loss == 0.0);
  CHECK(std::isfinite(gan_losses(-1000.0, 1000.0).d_loss));
  const auto v = oracle::random_vector<double>(20, 4, -6, 6);
  for (int i = 0; i + 1 < v.size(); i += 2) {
    const double r = v[i], f = v[i + 1];
    const auto s = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    const auto l = gan_losses(r, f);
    CHECK(l.d_loss == doctest::Approx(-std::log(s(r)) - std::log(1 - s(f))).epsilon(1e-12));
    CHECK(l.g_loss == doctest::Approx(-std::log(s(f))).epsilon(1e-12));
  }
}

TEST_CASE("bce batch gradient") {
  Vector<double> logits = oracle::random_vector<double>(5, 9, -3, 3);
  for (const bool label : {true, false}) {
    Vector<double> g;
    bce_batch(logits, label, &g);
    for (int i = 0; i < 5; ++i) {
      const double numeric = oracle::central_difference<double>([&] { return bce_batch<double>(logits, label, nullptr); }, logits[i]);
      CHECK(oracle::relative_error(g[i], numeric) < 1e-7);
    }
  }
}

TEST_CASE("mse loss") {
  const auto a = oracle::random_map<float>(3, 5, 4, 1, 0, 1);
  CHECK(mse_loss(a, a) == 0.0);
  CHECK(mse_loss(Image::constant(3, 4, 4, 0.0f), Image::constant(3, 4, 4, 1.0f)) == 1.0);
  const auto b = oracle::random_map<float>(3, 5, 4, 2, 0, 1);
  double acc = 0;
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) acc += std::pow(double(a(y, x, c)) - double(b(y, x, c)), 2);
  CHECK(mse_loss(a, b) == doctest::Approx(acc / 60).epsilon(1e-6));
  CHECK_THROWS_AS(mse_loss(a, oracle::random_map<float>(3, 4, 4, 2)), ShapeError);
}

TEST_CASE("perceptual loss") {
  const auto a = oracle::random_map<float>(3, 8, 8, 1, 0, 1);
  const auto b = oracle::random_map<float>(3, 8, 8, 2, 0, 1);
  const IdentityExtractor id;
  CHECK(perceptual_loss(a, a, id) == 0.0);
  CHECK(perceptual_loss(a, b, id) == doctest::Approx((a.data - b.data).cwiseAbs().sum() / 192.0).epsilon(1e-6));

  const auto fx = ConvStackExtractor::random(3, 5, 11);
  REQUIRE(fx.layers().size() == 3);
  auto features = [&](const Image& img) {
    const auto& l0 = fx.layers()[0];
    const auto& l2 = fx.layers()[2];
    const Vector<float> w0 = Eigen::Map<const Vector<float>>(l0.weight.data(), l0.weight.size());
    const Vector<float> w2 = Eigen::Map<const Vector<float>>(l2.weight.data(), l2.weight.size());
    auto h = oracle::conv2d(img, w0, l0.bias, 5, 3, 1, 1);
    h.data = h.data.cwiseMax(0.0f);
    return oracle::conv2d(h, w2, l2.bias, 5, 3, 1, 1);
  };
  const auto fa = features(a), fb = features(b);
  double acc = 0;
  for (Eigen::Index i = 0; i < fa.data.size(); ++i) acc += std::abs(double(fa.data.data()[i]) - double(fb.data.data()[i]));
  CHECK(perceptual_loss(a, b, fx) == doctest::Approx(acc / fa.data.size()).epsilon(1e-5));
  CHECK(perceptual_loss(a, a, fx) == 0.0);

  double loss = 0;
  const Image g = perceptual_grad(a, b, fx, 2.0, &loss);
  CHECK(loss == doctest::Approx(perceptual_loss(a, b, fx)).epsilon(1e-6));
  // Identity extractor: the gradient of mean |a - b| is sign(a - b) / n.
  const Image gi = perceptual_grad(a, b, id, 2.0);
  for (Eigen::Index i = 0; i < a.data.size(); ++i) {
    const float d = a.data.data()[i] - b.data.data()[i];
    CHECK(gi.data.data()[i] == doctest::Approx((d > 0 ? 2.0 : -2.0) / 192.0).epsilon(1e-6));
  }

  // The conv extractor's backward is a vector-Jacobian product: compare
  // <backward(a, u), v> with the directional derivative of <extract(.), u>,
  // evaluated on the double-precision loop oracle.
  const auto u = oracle::random_map<float>(5, 8, 8, 21);
  const auto v = oracle::random_map<float>(3, 8, 8, 22);
  auto features_d = [&](const FeatureMap<double>& img) {
    const auto& l0 = fx.layers()[0];
    const auto& l2 = fx.layers()[2];
    const Vector<double> w0 = Eigen::Map<const Vector<float>>(l0.weight.data(), l0.weight.size()).cast<double>();
    const Vector<double> w2 = Eigen::Map<const Vector<float>>(l2.weight.data(), l2.weight.size()).cast<double>();
    auto h = oracle::conv2d(img, w0, Vector<double>(l0.bias.cast<double>()), 5, 3, 1, 1);
    h.data = h.data.cwiseMax(0.0);
    return oracle::conv2d(h, w2, Vector<double>(l2.bias.cast<double>()), 5, 3, 1, 1);
  };
  const double eps = 1e-6;
  auto plus = a.cast<double>(), minus = a.cast<double>();
  plus.data += eps * v.data.cast<double>();
  minus.data -= eps * v.data.cast<double>();
  const Matrix<double> ud = u.data.cast<double>();
  const double directional =
      (features_d(plus).data.cwiseProduct(ud).sum() - features_d(minus).data.cwiseProduct(ud).sum()) / (2 * eps);
  const double vjp = fx.backward(a, u).data.cwiseProduct(v.data).sum();
  CHECK(oracle::relative_error(vjp, directional) < 1e-5);

  // perceptual_grad chains the extractor VJP with the L1 sign.
  Image sign(5, 8, 8);
  sign.data = (fa.data - fb.data).unaryExpr([](float d) { return d > 0 ? 1.0f : -1.0f; }) / static_cast<float>(fa.data.size());
  const Image expected = fx.backward(a, sign);
  CHECK((g.data - 2.0f * expected.data).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("vgg19 feature stack layout") {
  const int widths[16] = {64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512};
  ParameterTree<float> tree;
  std::mt19937_64 rng(3);
  int in = 3;
  for (int i = 0; i < 16; ++i) {
    const auto p = "features." + std::to_string(i);
    fill_normal(tree.add(p + ".weight", {widths[i], 3, 3, in}).values, std::sqrt(2.0 / (9.0 * in)), rng);
    tree.add(p + ".bias", {widths[i]});
    in = widths[i];
  }
  const auto fx = ConvStackExtractor::vgg19_54(tree);
  int convs = 0, pools = 0;
  for (const auto& l : fx.layers()) {
    convs += l.op == ConvStackExtractor::Op::Conv;
    pools += l.op == ConvStackExtractor::Op::MaxPool;
  }
  CHECK(convs == 16);
  CHECK(pools == 4);
  CHECK(fx.layers().back().op == ConvStackExtractor::Op::Conv);
  const auto f = fx.extract(oracle::random_map<float>(3, 16, 16, 1, 0, 1));
  CHECK(f.channels == 512);
  CHECK(f.height == 1);

  ParameterTree<float> missing;
  CHECK_THROWS_AS(ConvStackExtractor::vgg19_54(missing), ConfigError);
  CHECK_THROWS_AS(make_extractor({"vgg19", 0, 0, ""}), ConfigError);
  CHECK_THROWS_AS(make_extractor({"vgg19", 0, 0, "/nonexistent/vgg.mrck"}), ConfigError);
  CHECK_THROWS_AS(make_extractor({"alexnet", 0, 0, ""}), ConfigError);
}

TEST_CASE("crop and augment") {
  const auto img = oracle::random_map<float>(3, 20, 24, 5);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    const auto aug = sample_augmentation(img, 8, rng);
    CHECK(aug.top >= 0);
    CHECK(aug.top <= 12);
    CHECK(aug.left <= 16);
    CHECK(aug.rotation >= 0);
    CHECK(aug.rotation <= 3);
    const auto out = apply_augmentation(img, 8, aug);
    CHECK(out.channels == 3);
    CHECK(out.height == 8);
    CHECK(out.width == 8);
    // Flips and rotations permute pixels, so the multiset is unchanged.
    const auto plain = crop(img, aug.top, aug.left, 8, 8);
    for (int c = 0; c < 3; ++c) {
      std::vector<float> a(out.data.row(c).begin(), out.data.row(c).end());
      std::vector<float> b(plain.data.row(c).begin(), plain.data.row(c).end());
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      CHECK(a == b);
    }
  }

  const Augmentation none{3, 5, false, 0};
  CHECK(apply_augmentation(img, 8, none).data == crop(img, 3, 5, 8, 8).data);

  const auto patch = crop(img, 3, 5, 8, 8);
  const auto flipped = apply_augmentation(img, 8, {3, 5, true, 0});
  const auto turned = apply_augmentation(img, 8, {3, 5, false, 1});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      CHECK(flipped(y, x, 1) == patch(y, 7 - x, 1));
      CHECK(turned(y, x, 1) == patch(x, 7 - y, 1));  // counter-clockwise quarter turn
    }

  CHECK_THROWS_AS(crop_and_augment(img, 21, rng), DataError);
}

TEST_CASE("config validation and json round trip") {
  auto cfg = tiny_config(2);
  CHECK_NOTHROW(cfg.validate());
  Json j = cfg;
  const auto back = j.get<TrainConfig>();
  CHECK(Json(back) == j);
  CHECK(back.discriminator == cfg.discriminator);

  auto bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.weights.gan = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.crop_size = 18;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.discriminator.patch_size = 32;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.stage = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  const TrainConfig defaults;
  CHECK(defaults.batch_size == 16);
  CHECK(defaults.crop_size == 64);
  CHECK(defaults.weights.gan == 0.005);
  CHECK(defaults.weights.mse == 0.01);
  CHECK(defaults.adam.beta1 == 0.9);
  CHECK(defaults.adam.beta2 == 0.999);
  CHECK(defaults.adam.eps == 1e-8);
}

TEST_CASE("data stream is independent of the initialization seed") {
  const auto data = toy::smooth_images(3, 32, 1);
  auto a = tiny_config(1), b = tiny_config(1);
  b.init_seed = 99;
  auto sa = init_stage1(a), sb = init_stage1(b);
  CHECK_FALSE(sa.generator.tree == sb.generator.tree);
  const auto ba = sample_batch(a, data, sa.data_rng);
  const auto bb = sample_batch(b, data, sb.data_rng);
  for (std::size_t i = 0; i < ba.clean.size(); ++i) {
    CHECK(ba.degraded[i].data == bb.degraded[i].data);
    CHECK(ba.specs[i] == bb.specs[i]);
    CHECK(ba.z[i].z == encode_condition(ba.specs[i]).z);
  }
}

TEST_CASE("stage 1 logs the scheduled learning rate and reduces the loss") {
  const auto data = toy::smooth_images(4, 32, 2);
  auto cfg = tiny_config(1);
  cfg.max_iters = 60;
  cfg.schedule = LrSchedule{1e-3, 20, {}};
  const auto s = train_stage1(cfg, data);
  REQUIRE(s.history.size() == 60);
  for (const auto& l : s.history) CHECK(l.lr == cfg.schedule->at(l.iteration));
  const auto mse = column(s.history, &IterationLog::mse);
  CHECK(window_mean(mse, 40, 60) < window_mean(mse, 0, 20));
  CHECK(s.generator.tree.all_finite());
  CHECK(s.condition_g.has_value());
}

TEST_CASE("baseline mode trains without condition networks on one degradation") {
  const auto data = toy::smooth_images(2, 32, 3);
  auto cfg = tiny_config(1);
  cfg.baseline = true;
  cfg.baseline_spec = {2.0, 30.0};
  cfg.max_iters = 3;
  auto s = init_stage1(cfg);
  CHECK_FALSE(s.condition_g.has_value());
  const auto b = sample_batch(cfg, data, s.data_rng);
  for (const auto& spec : b.specs) CHECK(spec == cfg.baseline_spec);
  run_training(cfg, s, data, nullptr);
  CHECK(s.iteration == 3);

  auto c2 = tiny_config(2);
  c2.baseline = true;
  c2.baseline_spec = cfg.baseline_spec;
  c2.max_iters = 2;
  const auto fx = make_extractor(c2.extractor);
  const auto s2 = train_stage2(c2, s.model(), data, *fx);
  CHECK_FALSE(s2.condition_d.has_value());
  CHECK(s2.discriminator->sites().empty());
  CHECK_THROWS_AS(init_stage2(tiny_config(2), s.model()), ConfigError);
}

TEST_CASE("resuming reproduces the trajectory bit-exactly") {
  const auto data = toy::smooth_images(3, 32, 4);
  for (const int stage : {1, 2}) {
    CAPTURE(stage);
    auto c1 = tiny_config(1);
    c1.max_iters = 5;
    const auto warm = train_stage1(c1, data).model();
    auto cfg = tiny_config(stage);
    cfg.max_iters = 20;
    const auto fx = make_extractor(cfg.extractor);
    auto fresh = [&] { return stage == 1 ? init_stage1(cfg) : init_stage2(cfg, warm); };

    TrainState full = fresh();
    run_training(cfg, full, data, fx.get());

    const auto dir = scratch_dir("resume" + std::to_string(stage));
    auto half = cfg;
    half.max_iters = 10;
    TrainState first = fresh();
    run_training(half, first, data, fx.get(), {dir, std::nullopt, {}});
    TrainConfig loaded_cfg;
    TrainState resumed = load_train_state(dir, &loaded_cfg);
    CHECK(resumed.iteration == 10);
    CHECK(Json(loaded_cfg) == Json(half));
    run_training(cfg, resumed, data, fx.get());

    REQUIRE(resumed.history.size() == 10);
    for (int i = 0; i < 10; ++i) {
      CHECK(resumed.history[i].mse == full.history[10 + i].mse);
      CHECK(resumed.history[i].total == full.history[10 + i].total);
      CHECK(resumed.history[i].d_loss == full.history[10 + i].d_loss);
    }
    CHECK(resumed.generator.tree == full.generator.tree);
    CHECK(resumed.condition_g->tree == full.condition_g->tree);
    if (stage == 2) {
      CHECK(resumed.discriminator->tree == full.discriminator->tree);
      CHECK(resumed.condition_d->tree == full.condition_d->tree);
    }
  }
}

TEST_CASE("non-finite loss aborts with a snapshot and leaves parameters untouched") {
  const auto data = toy::smooth_images(2, 32, 5);
  auto cfg = tiny_config(1);
  auto s = init_stage1(cfg);
  s.generator.tree.values("s1.exit.bias")[0] = std::numeric_limits<float>::quiet_NaN();
  const auto before = s.condition_g->tree;
  const auto dir = scratch_dir("diverged");
  CHECK_THROWS_AS(run_training(cfg, s, data, nullptr, {dir, std::nullopt, {}}), TrainingDiverged);
  CHECK(s.condition_g->tree == before);
  CHECK(s.iteration == 0);
  CHECK(fs::exists(dir / "diverged" / "state.json"));
  CHECK(fs::exists(dir / "diverged" / kGeneratorFile));
}

TEST_CASE("telemetry is appended as json lines") {
  const auto data = toy::smooth_images(2, 32, 6);
  auto cfg = tiny_config(1);
  cfg.max_iters = 7;
  cfg.log_interval = 3;
  const auto dir = scratch_dir("telemetry");
  train_stage1(cfg, data, {std::nullopt, dir / "log.jsonl", {}});
  std::ifstream in(dir / "log.jsonl");
  std::vector<std::int64_t> iters;
  for (std::string line; std::getline(in, line);) {
    const auto j = Json::parse(line);
    iters.push_back(j.at("iteration").get<std::int64_t>());
    CHECK(j.at("stage") == 1);
    CHECK(j.at("lr").get<double>() == lr_at(1, iters.back()));
    CHECK(j.contains("mse"));
  }
  CHECK(iters == std::vector<std::int64_t>{0, 3, 6});
}

TEST_CASE("training rejects unusable data") {
  auto cfg = tiny_config(1);
  CHECK_THROWS_AS(train_stage1(cfg, {}), DataError);
  std::vector<Image> small{oracle::random_map<float>(3, 8, 8, 1, 0, 1)};
  CHECK_THROWS_AS(train_stage1(cfg, small), DataError);
  std::vector<Image> gray{oracle::random_map<float>(1, 32, 32, 1, 0, 1)};
  CHECK_THROWS_AS(train_stage1(cfg, gray), DataError);
  auto c2 = tiny_config(2);
  CHECK_THROWS_AS(train_stage1(c2, toy::smooth_images(1, 32, 1)), ConfigError);
}
