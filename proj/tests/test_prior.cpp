#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "goat/prior.hpp"
#include "goat/serialize.hpp"
#include "goat/theory.hpp"

using namespace goat;

namespace {

SpectralPriorParams<double> random_spectral(std::mt19937_64& rng, Index modes) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  SpectralPriorParams<double> p = SpectralPriorParams<double>::zeros(
      geometric_frequencies<double>(modes, 2.0 * std::numbers::pi / 4096.0,
                                    std::numbers::pi));
  for (Index r = 0; r < modes; ++r) {
    p.alpha(r) = gauss(rng);
    p.beta(r) = gauss(rng);
  }
  return p;
}

SinkBiasParams<double> random_sink(std::mt19937_64& rng, Index l_ref) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  SinkBiasParams<double> sink = SinkBiasParams<double>::zeros(6, 4, l_ref);
  sink.slope = gauss(rng);
  for (Index i = 0; i < sink.mlp_w1.size(); ++i) sink.mlp_w1.data()[i] = gauss(rng);
  for (Index i = 0; i < sink.mlp_b1.size(); ++i) sink.mlp_b1(i) = 0.2 * gauss(rng);
  for (Index i = 0; i < sink.mlp_w2.size(); ++i) sink.mlp_w2(i) = 0.5 * gauss(rng);
  sink.mlp_b2 = gauss(rng);
  return sink;
}

}  // namespace

TEST_CASE("geometric_frequencies endpoints and spacing") {
  CHECK(geometric_frequencies<double>(0, 0.1, 1.0).size() == 0);

  const VecXd one = geometric_frequencies<double>(1, 0.05, 1.0);
  REQUIRE(one.size() == 1);
  CHECK(one(0) == doctest::Approx(0.05).epsilon(1e-15));

  const VecXd two = geometric_frequencies<double>(2, 0.25, 1.0);
  CHECK(two(0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(two(1) == doctest::Approx(1.0).epsilon(1e-15));

  const VecXd three = geometric_frequencies<double>(3, 0.01, 1.0);
  CHECK(three(0) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(three(1) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(three(2) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(geometric_frequencies<double>(2, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(geometric_frequencies<double>(2, 1.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(geometric_frequencies<double>(2, 0.5, 4.0), std::invalid_argument);
}

TEST_CASE("relative_log_prior closed form") {
  std::mt19937_64 rng(3);
  const SpectralPriorParams<double> params = random_spectral(rng, 5);
  CHECK(relative_log_prior(42, 42, params) ==
        doctest::Approx(params.alpha.sum()).epsilon(1e-14));

  SpectralPriorParams<double> zeros = params;
  zeros.alpha.setZero();
  zeros.beta.setZero();
  for (Index i = 0; i < 8; ++i) {
    for (Index j = 0; j < 8; ++j) CHECK(relative_log_prior(i, j, zeros) == 0.0);
  }

  for (int c = 0; c < 100; ++c) {
    std::uniform_int_distribution<Index> pos(0, 999);
    const Index i = pos(rng), j = pos(rng);
    CHECK(std::abs(relative_log_prior(i + 17, j + 17, params) -
                   relative_log_prior(i, j, params)) <= 1e-12);
  }
}

TEST_CASE("fourier_key basics") {
  const VecXd freqs = geometric_frequencies<double>(3, 0.1, 1.0);
  const VecXd at_zero = fourier_key(0, freqs);
  REQUIRE(at_zero.size() == 6);
  for (Index r = 0; r < 3; ++r) {
    CHECK(at_zero(2 * r) == 1.0);
    CHECK(at_zero(2 * r + 1) == 0.0);
  }
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<Index> pos(0, 5000);
  for (int c = 0; c < 50; ++c) {
    const VecXd key = fourier_key(pos(rng), freqs);
    for (Index r = 0; r < 3; ++r) {
      CHECK(std::abs(key(2 * r) * key(2 * r) + key(2 * r + 1) * key(2 * r + 1) - 1.0) <=
            1e-15);
    }
  }
  VecXd pi_freq(1);
  pi_freq << std::numbers::pi;
  const VecXd at_one = fourier_key(1, pi_freq);
  CHECK(std::abs(at_one(0) + 1.0) <= 1e-15);
  CHECK(std::abs(at_one(1)) <= 1e-15);
}

TEST_CASE("spectral rotation factorizes the relative prior") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<Index> pos(0, 2047);
  for (const Index modes : {Index(1), Index(4), Index(8)}) {
    const SpectralPriorParams<double> params = random_spectral(rng, modes);
    for (int c = 0; c < 200; ++c) {
      const Index i = pos(rng), j = pos(rng);
      const double inner =
          spectral_rotate_query(i, params).dot(fourier_key(j, params.frequencies));
      CHECK(std::abs(inner - relative_log_prior(i, j, params)) <= 1e-12);
    }
  }
}

TEST_CASE("spectral rotation preserves per-pair norm") {
  std::mt19937_64 rng(9);
  const SpectralPriorParams<double> params = random_spectral(rng, 4);
  for (Index i = 0; i < 64; ++i) {
    const VecXd q = spectral_rotate_query(i, params);
    for (Index r = 0; r < 4; ++r) {
      const double norm = std::hypot(q(2 * r), q(2 * r + 1));
      const double expected = std::hypot(params.alpha(r), params.beta(r));
      CHECK(norm == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("spectral rotation simple case") {
  SpectralPriorParams<double> params = SpectralPriorParams<double>::zeros(
      geometric_frequencies<double>(1, 0.5, 1.0));
  params.alpha(0) = 1.0;
  const VecXd q = spectral_rotate_query(0, params);
  CHECK(q(0) == doctest::Approx(1.0));
  CHECK(q(1) == doctest::Approx(0.0));
}

TEST_CASE("sink_bias zero parameters give zero") {
  const SinkBiasParams<double> sink = SinkBiasParams<double>::zeros(16, 8, 1024);
  for (Index j = 0; j < 100; ++j) CHECK(sink_bias(j, sink) == 0.0);
}

TEST_CASE("sink_bias linear term evaluates exactly") {
  SinkBiasParams<double> sink = SinkBiasParams<double>::zeros(16, 8, 1024);
  sink.slope = -1.0;
  CHECK(sink_bias(0, sink) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(sink_bias(1024, sink) == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("sink bias matrix is row-constant and rank one") {
  std::mt19937_64 rng(11);
  const SinkBiasParams<double> sink = random_sink(rng, 64);
  const VecXd u = sink_bias_vector<double>(32, sink);
  for (Index j = 0; j < 32; ++j) CHECK(u(j) == doctest::Approx(sink_bias(j, sink)).epsilon(1e-13));
  const RankCheck check = key_only_rank(u, 32);
  CHECK(check.rank_le_one);
  CHECK(check.second_singular_ratio <= 1e-9);
}

TEST_CASE("alibi_init stores the key-linear equivalent of a lag bias") {
  SinkBiasParams<double> sink = SinkBiasParams<double>::zeros(4, 2, 128);
  alibi_init(sink, -0.25);  // recency: penalize lag
  for (Index j = 0; j < 50; ++j) {
    CHECK(sink_bias(j, sink) == doctest::Approx(0.25 * j).epsilon(1e-12));
  }
}

TEST_CASE("compose_vectors realizes the scaling trick") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<Index> pos(0, 511);
  for (int c = 0; c < 100; ++c) {
    const Index d_h = 8 + 2 * (c % 12);
    const Index modes = c % 3;
    GoatHeadConfig cfg{d_h, modes, true};
    const SpectralPriorParams<double> spectral = random_spectral(rng, std::max<Index>(modes, 1));
    SpectralPriorParams<double> used = spectral;
    if (modes == 0) used = SpectralPriorParams<double>::zeros(VecXd());
    const SinkBiasParams<double> sink = random_sink(rng, 64);
    VecXd q_c(cfg.content_dim()), k_c(cfg.content_dim());
    for (Index i = 0; i < cfg.content_dim(); ++i) {
      q_c(i) = gauss(rng);
      k_c(i) = gauss(rng);
    }
    const Index i = pos(rng), j = pos(rng);
    const auto [qp, kp] = compose_vectors(q_c, k_c, i, j, used, sink, cfg);
    REQUIRE(qp.size() == d_h);
    CHECK(qp(d_h - 1) == 0.0);
    CHECK(kp(d_h - 1) == 0.0);
    const double lhs = qp.dot(kp) / std::sqrt(static_cast<double>(d_h));
    const double rhs = q_c.dot(k_c) / std::sqrt(static_cast<double>(cfg.content_dim())) +
                       relative_log_prior(i, j, used) + sink_bias(j, sink);
    CHECK(std::abs(lhs - rhs) <= 1e-10);
  }
}

TEST_CASE("compose_vectors with zero prior matches plain scaled dot product") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> gauss(0.0, 1.0);
  GoatHeadConfig cfg{16, 3, true};
  const SpectralPriorParams<double> spectral =
      SpectralPriorParams<double>::zeros(geometric_frequencies<double>(3, 0.01, 1.0));
  const SinkBiasParams<double> sink = SinkBiasParams<double>::zeros(4, 2, 64);
  VecXd q_c(cfg.content_dim()), k_c(cfg.content_dim());
  for (Index i = 0; i < cfg.content_dim(); ++i) {
    q_c(i) = gauss(rng);
    k_c(i) = gauss(rng);
  }
  const auto [qp, kp] = compose_vectors(q_c, k_c, 11, 4, spectral, sink, cfg);
  CHECK(qp.dot(kp) / 4.0 ==
        doctest::Approx(q_c.dot(k_c) / std::sqrt(8.0)).epsilon(1e-12));
}

TEST_CASE("compose_vectors validates dimensions") {
  GoatHeadConfig cfg{8, 1, true};
  const SpectralPriorParams<double> spectral =
      SpectralPriorParams<double>::zeros(geometric_frequencies<double>(1, 0.1, 1.0));
  const SinkBiasParams<double> sink = SinkBiasParams<double>::zeros(4, 2, 64);
  CHECK_THROWS_AS(
      compose_vectors<double>(VecXd::Zero(3), VecXd::Zero(4), 0, 0, spectral, sink, cfg),
      std::invalid_argument);
  GoatHeadConfig bad{4, 2, true};  // d_p = 6 > d_h
  CHECK_THROWS_AS(
      compose_vectors<double>(VecXd::Zero(1), VecXd::Zero(1), 0, 0, spectral, sink, bad),
      std::invalid_argument);
}

TEST_CASE("prior parameter JSON round trip") {
  std::mt19937_64 rng(19);
  const SpectralPriorParams<double> spectral = random_spectral(rng, 4);
  const SinkBiasParams<double> sink = random_sink(rng, 128);
  const nlohmann::json doc = prior_params_to_json(spectral, sink);
  for (const char* field : {"frequencies", "alpha", "beta", "slope", "mlp_w1", "mlp_b1",
                            "mlp_w2", "mlp_b2", "feature_count", "l_ref"}) {
    CHECK(doc.contains(field));
  }
  SpectralPriorParams<double> spectral2;
  SinkBiasParams<double> sink2;
  prior_params_from_json(doc, spectral2, sink2);
  CHECK((spectral2.frequencies - spectral.frequencies).cwiseAbs().maxCoeff() == 0.0);
  CHECK((spectral2.alpha - spectral.alpha).cwiseAbs().maxCoeff() == 0.0);
  CHECK((spectral2.beta - spectral.beta).cwiseAbs().maxCoeff() == 0.0);
  CHECK(sink2.slope == sink.slope);
  CHECK((sink2.mlp_w1 - sink.mlp_w1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sink2.mlp_b1 - sink.mlp_b1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sink2.mlp_w2 - sink.mlp_w2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(sink2.mlp_b2 == sink.mlp_b2);
  CHECK(sink2.feature_count == sink.feature_count);
  CHECK(sink2.l_ref == sink.l_ref);
}

TEST_CASE("spectral params validate ordering") {
  SpectralPriorParams<double> bad;
  bad.frequencies = VecXd(2);
  bad.frequencies << 1.0, 0.5;
  bad.alpha = VecXd::Zero(2);
  bad.beta = VecXd::Zero(2);
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}
