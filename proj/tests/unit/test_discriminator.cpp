#include "doctest.h"
#include "modrestore/discriminator.hpp"
#include "support/oracles.hpp"

using namespace modrestore;

namespace {

// Narrow early layers keep the checks fast; the final width stays 512.
DiscriminatorConfig small_config(int patch, bool gfm_enabled = true) {
  DiscriminatorConfig cfg;
  cfg.plan = {{4, 1}, {4, 2}, {6, 1}, {6, 2}, {8, 1}, {8, 2}, {8, 1}, {8, 2}, {8, 1}, {512, 2}};
  cfg.patch_size = patch;
  cfg.fc_hidden = 6;
  cfg.gfm_enabled = gfm_enabled;
  return cfg;
}

template <typename Scalar>
DiscriminatorModulation<Scalar> random_mods(const SiteManifest& sites, std::uint64_t seed) {
  DiscriminatorModulation<Scalar> m;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    m.alpha.push_back(oracle::random_vector<Scalar>(sites[i].channels, seed + 2 * i, 0.5, 1.5));
    m.beta.push_back(oracle::random_vector<Scalar>(sites[i].channels, seed + 2 * i + 1, -0.3, 0.3));
  }
  return m;
}

// Perturbs running statistics away from (0, 1) so eval mode is not trivial.
template <typename Scalar>
void randomize_stats(DiscriminatorParams<Scalar>& p, std::uint64_t seed) {
  for (auto& [name, e] : p.tree) {
    if (e.kind != ParamKind::Buffer) continue;
    const bool var = name.find("running_var") != std::string::npos;
    e.values = oracle::random_vector<Scalar>(e.count(), seed++, var ? 0.5 : -0.2, var ? 1.5 : 0.2);
  }
}

}  // namespace

TEST_CASE("default plan and site manifest") {
  const DiscriminatorConfig cfg;
  CHECK(cfg.plan.size() == 10);
  CHECK(cfg.plan.back().out_channels == 512);
  const auto sites = discriminator_sites(cfg);
  CHECK(sites.size() == 9);
  CHECK(sites.front().id == "conv2");
  CHECK(sites.back().id == "conv10");
  CHECK(sites.back().channels == 512);
  for (const auto& s : sites) CHECK(s.kind == SiteKind::FeatureAffine);
  DiscriminatorConfig off;
  off.gfm_enabled = false;
  CHECK(discriminator_sites(off).empty());
}

TEST_CASE("config validation") {
  DiscriminatorConfig cfg;
  cfg.plan.pop_back();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.plan.back().out_channels = 256;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.plan[3].stride = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("gfm arithmetic") {
  FeatureMap<double> x = FeatureMap<double>::constant(1, 2, 2, 3.0);
  const auto y = gfm(x, Vector<double>::Constant(1, 2.0).eval(), Vector<double>::Constant(1, 1.0).eval());
  CHECK(y.data.isConstant(7.0));
  const auto z = oracle::integer_map<float>(4, 3, 3, 1);
  CHECK(gfm(z, Vector<float>::Ones(4).eval(), Vector<float>::Zero(4).eval()).data == z.data);
}

TEST_CASE("identity modulation reproduces the unmodulated network") {
  auto cfg = small_config(16);
  const auto p = build_discriminator<double>(cfg, 3);
  cfg.gfm_enabled = false;
  const DiscriminatorParams<double> plain{cfg, p.tree};
  std::vector<FeatureMap<double>> batch{oracle::random_map<double>(3, 16, 16, 1, 0, 1),
                                        oracle::random_map<double>(3, 16, 16, 2, 0, 1)};
  std::vector<DiscriminatorModulation<double>> ids(2, DiscriminatorModulation<double>::identity(p.sites()));
  for (const auto mode : {NormMode::Train, NormMode::Eval}) {
    const auto a = discriminator_forward<double>(batch, ids, p, mode);
    const auto b = discriminator_forward<double>(batch, {}, plain, mode);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("eval mode is deterministic and batch-independent") {
  auto p = build_discriminator<float>(small_config(16), 5);
  randomize_stats(p, 50);
  const auto x0 = oracle::random_map<float>(3, 16, 16, 1, 0, 1);
  const auto x1 = oracle::random_map<float>(3, 16, 16, 2, 0, 1);
  const auto m0 = random_mods<float>(p.sites(), 10), m1 = random_mods<float>(p.sites(), 20);
  std::vector<FeatureMap<float>> pair{x0, x1};
  std::vector<DiscriminatorModulation<float>> mods{m0, m1};
  const auto both = discriminator_forward<float>(pair, mods, p, NormMode::Eval);
  const auto one = discriminator_forward<float>(std::span(&x0, 1), std::span(&m0, 1), p, NormMode::Eval);
  CHECK(both[0] == doctest::Approx(one[0]).epsilon(1e-5));
  CHECK(discriminator_forward<float>(pair, mods, p, NormMode::Eval) == both);
}

TEST_CASE("running statistics follow the momentum update") {
  auto p = build_discriminator<double>(small_config(16), 5);
  std::vector<FeatureMap<double>> batch{oracle::random_map<double>(3, 16, 16, 1, 0, 1),
                                        oracle::random_map<double>(3, 16, 16, 2, 0, 1)};
  std::vector<DiscriminatorModulation<double>> ids(2, DiscriminatorModulation<double>::identity(p.sites()));
  DiscriminatorTape<double> tape;
  discriminator_forward<double>(batch, ids, p, NormMode::Train, &tape);
  const auto before = p.tree;
  update_running_stats(p, tape);
  const auto& bn = tape.bn[2];
  const double m = static_cast<double>(bn.count);
  CHECK(bn.count == 2 * 8 * 8);  // conv2 has stride 2
  const Vector<double> rm = 0.9 * before.values("bn2.running_mean") + 0.1 * bn.batch_mean;
  const Vector<double> rv = 0.9 * before.values("bn2.running_var") + 0.1 * (m / (m - 1)) * bn.batch_var;
  CHECK((p.tree.values("bn2.running_mean") - rm).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((p.tree.values("bn2.running_var") - rv).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(p.tree.values("conv2.weight") == before.values("conv2.weight"));
}

TEST_CASE("input contract") {
  const auto p = build_discriminator<float>(small_config(16), 1);
  std::vector<FeatureMap<float>> wrong{oracle::random_map<float>(3, 32, 32, 1)};
  std::vector<DiscriminatorModulation<float>> ids(1, DiscriminatorModulation<float>::identity(p.sites()));
  CHECK_THROWS_AS(discriminator_forward<float>(wrong, ids, p, NormMode::Eval), ShapeError);
  std::vector<FeatureMap<float>> right{oracle::random_map<float>(3, 16, 16, 1)};
  CHECK_THROWS_AS(discriminator_forward<float>(right, {}, p, NormMode::Eval), ConfigError);
  CHECK_NOTHROW(discriminator_forward<float>(right, ids, p, NormMode::Eval));
}

TEST_CASE("gradients match central differences") {
  for (const auto mode : {NormMode::Eval, NormMode::Train}) {
    CAPTURE(static_cast<int>(mode));
    auto p = build_discriminator<double>(small_config(16), 7);
    randomize_stats(p, 70);
    std::vector<FeatureMap<double>> batch{oracle::random_map<double>(3, 16, 16, 1, 0, 1),
                                          oracle::random_map<double>(3, 16, 16, 2, 0, 1)};
    std::vector<DiscriminatorModulation<double>> mods{random_mods<double>(p.sites(), 100), random_mods<double>(p.sites(), 200)};
    const Vector<double> weights = oracle::random_vector<double>(2, 9);
    auto loss = [&] { return discriminator_forward<double>(batch, mods, p, mode).dot(weights); };

    DiscriminatorTape<double> tape;
    discriminator_forward<double>(batch, mods, p, mode, &tape);
    auto grads = p.tree.zeros_like();
    const auto g = discriminator_backward<double>(tape, weights, mods, p, &grads, {true, true, true});

    double worst = 0;
    for (std::size_t s = 0; s < 2; ++s) {
      for (std::size_t i = 0; i < mods[s].alpha.size(); ++i) {
        for (Eigen::Index c = 0; c < mods[s].alpha[i].size(); c += 5) {
          worst = std::max(worst, oracle::relative_error(g.mods[s].alpha[i][c], oracle::central_difference<double>(loss, mods[s].alpha[i][c])));
          worst = std::max(worst, oracle::relative_error(g.mods[s].beta[i][c], oracle::central_difference<double>(loss, mods[s].beta[i][c])));
        }
      }
      for (Eigen::Index i = 0; i < batch[s].data.size(); i += 37)
        worst = std::max(worst, oracle::relative_error(g.input[s].data.data()[i], oracle::central_difference<double>(loss, batch[s].data.data()[i])));
    }
    for (auto& [name, e] : p.tree) {
      if (e.kind == ParamKind::Buffer) continue;
      for (Eigen::Index i = 0; i < e.count(); i += std::max<Eigen::Index>(1, e.count() / 5))
        worst = std::max(worst, oracle::relative_error(grads.values(name)[i], oracle::central_difference<double>(loss, e.values[i])));
    }
    CHECK(worst < 1e-4);
  }
}
