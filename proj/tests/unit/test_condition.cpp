#include "doctest.h"
#include "modrestore/condition.hpp"
#include "modrestore/discriminator.hpp"
#include "modrestore/generator.hpp"
#include "support/oracles.hpp"

using namespace modrestore;

TEST_CASE("encode_condition worked examples") {
  CHECK(encode_condition({1.0, 10.0}) == ConditionVector{{0.25, 0.20}});
  CHECK(encode_condition({2.0, 30.0}) == ConditionVector{{0.50, 0.60}});
  CHECK(encode_condition({0.0, 0.0}) == ConditionVector{{0.0, 0.0}});
  CHECK_THROWS_AS(encode_condition({-1.0, 0.0}), InvalidDegradation);
  CHECK_THROWS_AS(encode_condition({0.0, 60.0}), InvalidDegradation);
}

TEST_CASE("decode_condition inverts encode on the grid") {
  CHECK(decode_condition({{0.25, 0.20}}) == DegradationSpec{1.0, 10.0});
  CHECK(decode_condition({{1.0, 1.0}}) == DegradationSpec{4.0, 50.0});
  CHECK_THROWS_AS(decode_condition({{1.5, 0.0}}), InvalidCondition);
  CHECK_THROWS_AS(decode_condition({{0.0, -0.1}}), InvalidCondition);
  for (int b = 0; b <= 40; ++b) {
    for (int s = 0; s <= 50; ++s) {
      const DegradationSpec spec{b / 10.0, static_cast<double>(s)};
      const auto back = decode_condition(encode_condition(spec));
      CHECK(std::abs(back.blur_r - spec.blur_r) <= 1e-12);
      CHECK(std::abs(back.noise_sigma - spec.noise_sigma) <= 1e-12);
    }
  }
}

TEST_CASE("encoding is strictly monotone in each level") {
  for (int b = 0; b < 40; ++b) {
    CHECK(encode_condition({b / 10.0, 5.0}).blur() < encode_condition({(b + 1) / 10.0, 5.0}).blur());
  }
  for (int s = 0; s < 50; ++s) {
    CHECK(encode_condition({1.0, double(s)}).noise() < encode_condition({1.0, double(s + 1)}).noise());
  }
}

TEST_CASE("generator condition net: constant and affine cases") {
  const auto sites = generator_sites(GeneratorConfig{});
  auto net = build_condition_net<double>(ConditionTarget::Generator, sites, 3);
  for (auto& [name, e] : net.tree) e.values.setZero();
  for (const auto& w : condition_forward_g({{0.3, 0.7}}, net).weights) CHECK(w.isZero(0));
  for (auto& [name, e] : net.tree)
    if (name.ends_with(".bias")) e.values.setOnes();
  for (const auto& w : condition_forward_g({{0.3, 0.7}}, net).weights) CHECK((w.array() == 1.0).all());

  const auto random_net = build_condition_net<double>(ConditionTarget::Generator, sites, 17, 0.5);
  const ConditionVector z{{0.5, 0.6}};
  const auto mods = condition_forward_g(z, random_net);
  REQUIRE(mods.size() == sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const auto& W = random_net.tree.values(sites[i].id + ".w.weight");
    const auto& b = random_net.tree.values(sites[i].id + ".w.bias");
    for (int c = 0; c < sites[i].channels; ++c) {
      const double expected = W[2 * c] * 0.5 + W[2 * c + 1] * 0.6 + b[c];
      CHECK(mods.weights[i][c] == doctest::Approx(expected).epsilon(1e-14));
    }
  }
  CHECK(condition_forward_g(z, random_net) == mods);
}

TEST_CASE("discriminator condition net: identity, shift and affine cases") {
  const auto sites = discriminator_sites(DiscriminatorConfig{});
  REQUIRE(sites.size() == 9);
  auto net = build_condition_net<double>(ConditionTarget::Discriminator, sites, 3);
  for (auto& [name, e] : net.tree) {
    e.values.setZero();
    if (name.ends_with(".alpha.bias")) e.values.setOnes();
  }
  const auto id = condition_forward_d({{0.9, 0.1}}, net);
  CHECK(id == DiscriminatorModulation<double>::identity(sites));
  for (auto& [name, e] : net.tree)
    if (name.ends_with(".beta.bias")) e.values.setOnes();
  for (const auto& b : condition_forward_d({{0.9, 0.1}}, net).beta) CHECK((b.array() == 1.0).all());

  const auto random_net = build_condition_net<double>(ConditionTarget::Discriminator, sites, 5, 0.5);
  const auto mods = condition_forward_d({{0.15, 0.30}}, random_net);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const auto& A = random_net.tree.values(sites[i].id + ".alpha.weight");
    const auto& a = random_net.tree.values(sites[i].id + ".alpha.bias");
    const auto& B = random_net.tree.values(sites[i].id + ".beta.weight");
    const auto& b = random_net.tree.values(sites[i].id + ".beta.bias");
    CHECK(mods.alpha[i].size() == sites[i].channels);
    for (int c = 0; c < sites[i].channels; c += 7) {
      CHECK(mods.alpha[i][c] == doctest::Approx(A[2 * c] * 0.15 + A[2 * c + 1] * 0.30 + a[c]).epsilon(1e-14));
      CHECK(mods.beta[i][c] == doctest::Approx(B[2 * c] * 0.15 + B[2 * c + 1] * 0.30 + b[c]).epsilon(1e-14));
    }
  }
}

TEST_CASE("initialization starts near vanilla behavior") {
  const auto gsites = generator_sites(GeneratorConfig{});
  const auto g = build_condition_net<float>(ConditionTarget::Generator, gsites, 1);
  for (const auto& w : condition_forward_g({{0.5, 0.5}}, g).weights) CHECK((w.array() - 1.0f).abs().maxCoeff() < 0.1f);
  const auto d = build_condition_net<float>(ConditionTarget::Discriminator, discriminator_sites({}), 1);
  const auto m = condition_forward_d({{0.5, 0.5}}, d);
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK((m.alpha[i].array() - 1.0f).abs().maxCoeff() < 0.1f);
    CHECK(m.beta[i].cwiseAbs().maxCoeff() < 0.1f);
  }
}

TEST_CASE("condition backward matches finite differences") {
  const auto sites = generator_sites(GeneratorConfig{2, 1, {3, 4}, 3});
  auto net = build_condition_net<double>(ConditionTarget::Generator, sites, 9, 0.3);
  const ConditionVector z{{0.4, 0.8}};
  GeneratorModulation<double> upstream;
  for (std::size_t i = 0; i < sites.size(); ++i) upstream.weights.push_back(oracle::random_vector<double>(sites[i].channels, 40 + i));
  auto loss = [&] {
    const auto m = condition_forward_g(z, net);
    double s = 0;
    for (std::size_t i = 0; i < m.size(); ++i) s += m.weights[i].dot(upstream.weights[i]);
    return s;
  };
  auto grads = net.tree.zeros_like();
  condition_backward_g(z, net, upstream, grads);
  for (auto& [name, e] : net.tree) {
    for (Eigen::Index i = 0; i < e.count(); ++i) {
      const double numeric = oracle::central_difference<double>(loss, e.values[i]);
      CHECK(oracle::relative_error(grads.values(name)[i], numeric) < 1e-6);
    }
  }
}

TEST_CASE("condition net targeting the wrong network is rejected") {
  const auto g = build_condition_net<float>(ConditionTarget::Generator, generator_sites({}), 1);
  CHECK_THROWS_AS(condition_forward_d({{0, 0}}, g), ConfigError);
}
