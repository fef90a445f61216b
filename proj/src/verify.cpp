#include "goat/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <thread>

#include "goat/attention.hpp"
#include "goat/eot.hpp"
#include "goat/prior.hpp"
#include "goat/theory.hpp"

namespace goat {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

VecXd random_scores(std::mt19937_64& rng, Index length, double scale) {
  std::normal_distribution<double> gauss(0.0, scale);
  VecXd s(length);
  for (Index i = 0; i < length; ++i) s(i) = gauss(rng);
  return s;
}

// Strictly interior prior: normalize(U(0,1) + 0.01).
ProbVector random_prior(std::mt19937_64& rng, Index length) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  VecXd p(length);
  for (Index i = 0; i < length; ++i) p(i) = unit(rng) + 0.01;
  return ProbVector(p / p.sum());
}

// Dirichlet(1): uniform over the simplex, interior almost surely.
VecXd random_simplex_point(std::mt19937_64& rng, Index length) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  VecXd e(length);
  for (Index i = 0; i < length; ++i) {
    e(i) = -std::log(std::max(unit(rng), 1e-300));
  }
  return e / e.sum();
}

struct Tally {
  long long cases = 0;
  long long failures = 0;
  double max_violation = 0.0;

  void record(bool ok, double violation) {
    cases += 1;
    if (!ok) failures += 1;
    max_violation = std::max(max_violation, violation);
  }
};

CheckResult as_result(const std::string& name, const Tally& t) {
  return {name, t.cases, t.failures, t.max_violation};
}

// Runs fn(shard_index, rng) for each shard on up to max_worker_threads()
// threads; per-shard seeding keeps results independent of thread count.
template <typename Fn>
void sharded(std::uint64_t seed, int shards, Fn&& fn) {
  const int workers = std::min(max_worker_threads(), shards);
  if (workers <= 1) {
    for (int s = 0; s < shards; ++s) {
      std::mt19937_64 rng(splitmix64(seed) ^ splitmix64(static_cast<std::uint64_t>(s)));
      fn(s, rng);
    }
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int s = w; s < shards; s += workers) {
        std::mt19937_64 rng(splitmix64(seed) ^ splitmix64(static_cast<std::uint64_t>(s)));
        fn(s, rng);
      }
    });
  }
  for (auto& t : pool) t.join();
}

// --------------------------------------------------------------------------
// eot_core suites
// --------------------------------------------------------------------------

std::vector<CheckResult> suite_softmax(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_int_distribution<Index> len(2, 64);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tally shift, reduction;
  for (int c = 0; c < 200; ++c) {
    const Index L = len(rng);
    const double tau = std::exp(unit(rng) * 2.0 - 1.0);
    VecXd s = random_scores(rng, L, 2.0);
    for (Index j = 0; j < L; ++j) s(j) = std::round(s(j) * 1048576.0) / 1048576.0;
    const double offset = (c % 2 == 0 ? 1.0 : -1.0) * std::pow(2.0, c % 6);
    const VecXd shifted = s.array() + offset;
    const double d_shift = (softmax_attention(shifted, tau).values() -
                            softmax_attention(s, tau).values())
                               .cwiseAbs()
                               .maxCoeff();
    shift.record(d_shift <= 1e-15, d_shift);

    TransportProblem uniform_problem(s, ProbVector::uniform(L), tau);
    const double d_red = (kl_prior_attention(uniform_problem).values() -
                          softmax_attention(s, tau).values())
                             .cwiseAbs()
                             .maxCoeff();
    reduction.record(d_red <= 1e-15, d_red);
  }
  return {as_result("softmax.shift_invariance", shift),
          as_result("softmax.uniform_prior_reduction", reduction)};
}

std::vector<CheckResult> suite_optimality(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed) ^ 0x01);
  std::uniform_int_distribution<Index> len(2, 64);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tally oracle, probes, objective_gap;
  for (int c = 0; c < 100; ++c) {
    const Index L = len(rng);
    const double tau = std::exp(unit(rng) * 2.0 - 1.0);
    TransportProblem problem(random_scores(rng, L, 1.5), random_prior(rng, L), tau);
    const ProbVector closed = kl_prior_attention(problem);
    const ProbVector iterated = brute_force_minimize(problem, 400, 0.5 / tau);
    const double diff = (closed.values() - iterated.values()).cwiseAbs().maxCoeff();
    oracle.record(diff <= 1e-6, diff);

    const double obj_closed = eot_objective(closed, problem);
    const double obj_iter = eot_objective(iterated, problem);
    const double gap = std::abs(obj_closed - obj_iter);
    objective_gap.record(gap <= 1e-9, gap);

    double worst = 0.0;
    bool ok = true;
    for (int q = 0; q < 1000; ++q) {
      const ProbVector probe(random_simplex_point(rng, L));
      const double excess = obj_closed - eot_objective(probe, problem);
      worst = std::max(worst, excess);
      if (excess > 1e-12) ok = false;
    }
    probes.record(ok, worst);
  }
  return {as_result("optimality.oracle_linf", oracle),
          as_result("optimality.objective_gap", objective_gap),
          as_result("optimality.random_probes", probes)};
}

std::vector<CheckResult> suite_convexity(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed) ^ 0x02);
  std::uniform_int_distribution<Index> len(2, 64);
  Tally chord;
  for (int c = 0; c < 100; ++c) {
    const Index L = len(rng);
    TransportProblem problem(random_scores(rng, L, 1.5), random_prior(rng, L), 1.0);
    const ProbVector a(random_simplex_point(rng, L));
    const ProbVector b(random_simplex_point(rng, L));
    const double fa = eot_objective(a, problem);
    const double fb = eot_objective(b, problem);
    double worst = 0.0;
    bool ok = true;
    for (int k = 0; k <= 10; ++k) {
      const double t = k / 10.0;
      const ProbVector mix(t * a.values() + (1.0 - t) * b.values());
      const double excess = eot_objective(mix, problem) - (t * fa + (1.0 - t) * fb);
      worst = std::max(worst, excess);
      if (excess > 1e-12) ok = false;
    }
    chord.record(ok, worst);
  }
  return {as_result("convexity.chord", chord)};
}

// --------------------------------------------------------------------------
// prior suites
// --------------------------------------------------------------------------

std::vector<CheckResult> suite_factorization(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed) ^ 0x03);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tally identity, shift, antisym;
  for (const Index modes : {Index(1), Index(4), Index(8)}) {
    SpectralPriorParams<double> params = SpectralPriorParams<double>::zeros(
        geometric_frequencies<double>(modes, 2.0 * std::numbers::pi / 4096.0,
                                      std::numbers::pi));
    for (Index r = 0; r < modes; ++r) {
      params.alpha(r) = gauss(rng);
      params.beta(r) = gauss(rng);
    }
    const Index grid = 256;
    const MatXd q = spectral_rotate_matrix<double>(grid, params);
    const MatXd k = fourier_key_matrix<double>(grid, params.frequencies);
    const MatXd inner = q * k.transpose();
    for (Index i = 0; i < grid; ++i) {
      for (Index j = 0; j < grid; ++j) {
        const double diff = std::abs(inner(i, j) - relative_log_prior(i, j, params));
        identity.record(diff <= 1e-10, diff);
      }
    }
    std::uniform_int_distribution<Index> pos(0, 4096);
    std::uniform_int_distribution<Index> offset(-2048, 2048);
    for (int c = 0; c < 1000; ++c) {
      const Index i = pos(rng), j = pos(rng), a = offset(rng);
      const double diff = std::abs(relative_log_prior(i + a, j + a, params) -
                                   relative_log_prior(i, j, params));
      shift.record(diff <= 1e-12, diff);
    }
    SpectralPriorParams<double> odd = params;
    odd.alpha.setZero();
    for (Index d = -grid; d <= grid; ++d) {
      const double diff =
          std::abs(relative_log_prior(d, 0, odd) + relative_log_prior(-d, 0, odd));
      antisym.record(diff <= 1e-12, diff);
    }
  }
  return {as_result("factorization.bilinear_identity", identity),
          as_result("factorization.translation_equivariance", shift),
          as_result("factorization.antisymmetry", antisym)};
}

SinkBiasParams<double> random_sink(std::mt19937_64& rng, Index l_ref) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  SinkBiasParams<double> sink = SinkBiasParams<double>::zeros(8, 6, l_ref);
  sink.slope = gauss(rng);
  for (Index i = 0; i < sink.mlp_w1.size(); ++i) sink.mlp_w1.data()[i] = gauss(rng);
  for (Index i = 0; i < sink.mlp_b1.size(); ++i) sink.mlp_b1(i) = 0.3 * gauss(rng);
  for (Index i = 0; i < sink.mlp_w2.size(); ++i) sink.mlp_w2(i) = 0.5 * gauss(rng);
  sink.mlp_b2 = gauss(rng);
  return sink;
}

SpectralPriorParams<double> random_spectral(std::mt19937_64& rng, Index modes) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  SpectralPriorParams<double> params = SpectralPriorParams<double>::zeros(
      modes > 0 ? geometric_frequencies<double>(modes, 2.0 * std::numbers::pi / 4096.0,
                                                std::numbers::pi)
                : VecXd());
  for (Index r = 0; r < modes; ++r) {
    params.alpha(r) = gauss(rng);
    params.beta(r) = gauss(rng);
  }
  return params;
}

std::vector<CheckResult> suite_scaling(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed) ^ 0x04);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<Index> pos(0, 511);
  Tally identity, splits;
  // 100 random configurations
  for (int c = 0; c < 100; ++c) {
    std::uniform_int_distribution<Index> dh_dist(6, 64);
    const Index d_h = dh_dist(rng);
    const Index max_modes = (d_h - 3) / 2;
    std::uniform_int_distribution<Index> mode_dist(0, std::min<Index>(8, max_modes));
    GoatHeadConfig cfg{d_h, mode_dist(rng), true};
    const SpectralPriorParams<double> spectral = random_spectral(rng, cfg.modes);
    const SinkBiasParams<double> sink = random_sink(rng, 64);
    VecXd q_c(cfg.content_dim()), k_c(cfg.content_dim());
    for (Index i = 0; i < cfg.content_dim(); ++i) {
      q_c(i) = gauss(rng);
      k_c(i) = gauss(rng);
    }
    const Index i = pos(rng), j = pos(rng);
    const auto [qp, kp] = compose_vectors(q_c, k_c, i, j, spectral, sink, cfg);
    const double lhs = qp.dot(kp) / std::sqrt(static_cast<double>(cfg.head_dim));
    const double rhs = q_c.dot(k_c) / std::sqrt(static_cast<double>(cfg.content_dim())) +
                       relative_log_prior(i, j, spectral) + sink_bias(j, sink);
    const double diff = std::abs(lhs - rhs);
    identity.record(diff <= 1e-10, diff);
    const double pad = std::abs(qp(cfg.head_dim - 1)) + std::abs(kp(cfg.head_dim - 1));
    identity.record(pad == 0.0, pad);
  }
  // every admissible (d_h, d_c) split
  for (const Index d_h : {Index(8), Index(16), Index(24)}) {
    for (Index modes = 0; 2 * modes + 2 < d_h; ++modes) {
      GoatHeadConfig cfg{d_h, modes, true};
      const SpectralPriorParams<double> spectral = random_spectral(rng, modes);
      const SinkBiasParams<double> sink = random_sink(rng, 64);
      VecXd q_c(cfg.content_dim()), k_c(cfg.content_dim());
      for (Index i = 0; i < cfg.content_dim(); ++i) {
        q_c(i) = gauss(rng);
        k_c(i) = gauss(rng);
      }
      const Index i = pos(rng), j = pos(rng);
      const auto [qp, kp] = compose_vectors(q_c, k_c, i, j, spectral, sink, cfg);
      const double lhs = qp.dot(kp) / std::sqrt(static_cast<double>(cfg.head_dim));
      const double rhs = q_c.dot(k_c) / std::sqrt(static_cast<double>(cfg.content_dim())) +
                         relative_log_prior(i, j, spectral) + sink_bias(j, sink);
      const double diff = std::abs(lhs - rhs);
      splits.record(diff <= 1e-10, diff);
    }
  }
  return {as_result("scaling.trick_identity", identity),
          as_result("scaling.all_splits", splits)};
}

std::vector<CheckResult> suite_two_path(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed) ^ 0x05);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<Index> len(2, 128);
  std::uniform_int_distribution<int> coin(0, 1);
  Tally weights_match, row_sums, causality;
  for (int c = 0; c < 100; ++c) {
    const Index L = len(rng);
    std::uniform_int_distribution<Index> dh_dist(6, 32);
    const Index d_h = dh_dist(rng);
    std::uniform_int_distribution<Index> mode_dist(0, std::min<Index>(4, (d_h - 3) / 2));
    GoatHeadConfig cfg{d_h, mode_dist(rng), coin(rng) == 1};
    const Index dc = cfg.content_dim();
    const SpectralPriorParams<double> spectral = random_spectral(rng, cfg.modes);
    const SinkBiasParams<double> sink = random_sink(rng, std::max<Index>(L, 2));
    MatXd q_c(L, dc), k_c(L, dc), values(L, d_h);
    for (Index i = 0; i < q_c.size(); ++i) q_c.data()[i] = gauss(rng);
    for (Index i = 0; i < k_c.size(); ++i) k_c.data()[i] = gauss(rng);
    for (Index i = 0; i < values.size(); ++i) values.data()[i] = gauss(rng);

    AttentionBatch<double> batch;
    batch.queries = compose_query_matrix(q_c, spectral, cfg);
    batch.keys = compose_key_matrix(k_c, spectral, sink, cfg);
    batch.values = values;
    batch.causal = cfg.causal;
    const AttentionResult<double> composite = sdpa(batch);
    const AttentionResult<double> dense = explicit_bias_attention(
        q_c, k_c, values, log_prior_matrix(L, spectral, sink), cfg.causal);

    const double w_diff = (composite.weights - dense.weights).cwiseAbs().maxCoeff();
    const double o_diff = (composite.outputs - dense.outputs).cwiseAbs().maxCoeff();
    weights_match.record(w_diff <= 1e-10 && o_diff <= 1e-10, std::max(w_diff, o_diff));

    double sum_err = 0.0;
    double causal_leak = 0.0;
    for (Index i = 0; i < L; ++i) {
      sum_err = std::max(sum_err, std::abs(composite.weights.row(i).sum() - 1.0));
      if (cfg.causal) {
        for (Index j = i + 1; j < L; ++j) {
          causal_leak = std::max(causal_leak, std::abs(composite.weights(i, j)));
        }
      }
    }
    row_sums.record(sum_err <= 1e-12, sum_err);
    causality.record(causal_leak == 0.0, causal_leak);
  }
  return {as_result("two_path.weights_equal", weights_match),
          as_result("two_path.row_stochastic", row_sums),
          as_result("two_path.causality", causality)};
}

// --------------------------------------------------------------------------
// theory suites
// --------------------------------------------------------------------------

std::vector<CheckResult> suite_collapse(std::uint64_t seed) {
  constexpr int kShards = 16;
  constexpr int kPerShard = 625;  // 10k total
  std::vector<Tally> tallies(kShards);
  sharded(seed ^ 0x06, kShards, [&](int shard, std::mt19937_64& rng) {
    std::uniform_int_distribution<Index> len(2, 256);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 0; c < kPerShard; ++c) {
      const Index L = len(rng);
      const double scale = std::exp(unit(rng) * std::log(3e3) + std::log(1e-3));
      const VecXd s = random_scores(rng, L, scale);
      const ProbVector prior = random_prior(rng, L);
      const CollapseReport report = collapse_bounds(s, prior);
      double violation = 0.0;
      for (Index j = 0; j < L; ++j) {
        violation = std::max(violation, report.lower(j) - report.posterior[j]);
        violation = std::max(violation, report.posterior[j] - report.upper(j));
      }
      tallies[shard].record(report.holds, std::max(violation, 0.0));
    }
  });
  Tally bounds;
  for (const Tally& t : tallies) {
    bounds.cases += t.cases;
    bounds.failures += t.failures;
    bounds.max_violation = std::max(bounds.max_violation, t.max_violation);
  }

  // low-signal limit: omega in {0, 1e-6, 1e-3}, slack exp(omega) - 1
  std::mt19937_64 rng(splitmix64(seed) ^ 0x07);
  std::uniform_int_distribution<Index> len(2, 256);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tally low_signal;
  for (const double omega : {0.0, 1e-6, 1e-3}) {
    for (int c = 0; c < 100; ++c) {
      const Index L = len(rng);
      VecXd s(L);
      for (Index j = 0; j < L; ++j) s(j) = omega * unit(rng);
      s(0) = 0.0;
      if (L > 1) s(1) = omega;
      const ProbVector prior = random_prior(rng, L);
      const ProbVector posterior =
          kl_prior_attention(TransportProblem(s, prior, 1.0));
      const double dist = (posterior.values() - prior.values()).cwiseAbs().maxCoeff();
      const double allowed = std::expm1(omega) + 1e-15;
      low_signal.record(dist <= allowed, dist);
    }
  }
  return {as_result("collapse.bounds", bounds),
          as_result("collapse.low_signal_limit", low_signal)};
}

std::vector<CheckResult> suite_sensitivity(std::uint64_t seed) {
  (void)seed;
  Tally bound_holds, equality, uniform_exact;
  for (Index L = 2; L <= 1024; ++L) {
    const double deltas[] = {0.0, 1.0, std::log(static_cast<double>(L)), 30.0};
    for (const double delta : deltas) {
      const SensitivityBound r = sensitivity_bound_check(L, delta);
      bound_holds.record(r.holds, std::max(r.empirical - r.bound, 0.0));
      const double gap = std::abs(r.empirical - r.bound);
      equality.record(gap <= 1e-12, gap);
    }
    // uniform prior, zero scores: Psi = (L-1)/L up to one rounding
    const ProbVector posterior = kl_prior_attention(
        TransportProblem(VecXd::Zero(L), ProbVector::uniform(L), 1.0));
    const double psi = context_sensitivity(posterior, 0);
    const double expected = static_cast<double>(L - 1) / static_cast<double>(L);
    const double gap = std::abs(psi - expected);
    uniform_exact.record(gap <= 2.3e-16, gap);
  }
  // log-growth margin schedule keeps the bound under 1/2
  Tally log_growth;
  for (Index L = 2; L <= 1024; ++L) {
    const double bound = sensitivity_bound_check(L, std::log(static_cast<double>(L))).bound;
    const double cap = static_cast<double>(L - 1) / static_cast<double>(2 * L - 1);
    log_growth.record(bound <= cap + 1e-12, std::max(bound - cap, 0.0));
  }
  return {as_result("sensitivity.bound_holds", bound_holds),
          as_result("sensitivity.flat_context_equality", equality),
          as_result("sensitivity.uniform_prior_exact", uniform_exact),
          as_result("sensitivity.log_margin_under_half", log_growth)};
}

std::vector<CheckResult> suite_maxent(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed) ^ 0x08);
  Tally monotone, solver, entropy_probe;
  // strict monotonicity of the mean map on a grid
  const auto lag_mean = [](Index L, double lambda) {
    VecXd logw(L);
    for (Index d = 0; d < L; ++d) logw(d) = -lambda * static_cast<double>(d);
    const VecXd p = stable_softmax<double>(logw);
    double m = 0.0;
    for (Index d = 0; d < L; ++d) m += static_cast<double>(d) * p(d);
    return m;
  };
  for (const Index L : {Index(2), Index(5), Index(16), Index(64), Index(256)}) {
    double prev = std::numeric_limits<double>::infinity();
    for (int k = -40; k <= 40; ++k) {
      const double mean = lag_mean(L, 0.25 * k);
      monotone.record(mean < prev, std::max(mean - prev, 0.0));
      prev = mean;
    }
  }
  // solver accuracy on random targets
  std::uniform_int_distribution<Index> len(2, 512);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 0; c < 200; ++c) {
    const Index L = len(rng);
    const double mu = (0.02 + 0.96 * unit(rng)) * static_cast<double>(L - 1);
    const RecencyPrior prior = maxent_recency(L, mu);
    const double err = std::abs(prior.mean_lag - mu);
    solver.record(err <= 1e-10, err);
  }
  // entropy dominance over random constraint-satisfying probes
  for (int c = 0; c < 10; ++c) {
    std::uniform_int_distribution<Index> small_len(3, 64);
    const Index L = small_len(rng);
    const double mu = (0.05 + 0.9 * unit(rng)) * static_cast<double>(L - 1);
    const RecencyPrior star = maxent_recency(L, mu);
    const double h_star = entropy(star.distribution);
    double worst = 0.0;
    bool ok = true;
    for (int q = 0; q < 1000; ++q) {
      // exponential tilt of a random simplex point onto the mean constraint
      const VecXd base = random_simplex_point(rng, L);
      double lo = -200.0, hi = 200.0;
      for (int it = 0; it < 200; ++it) {
        const double theta = 0.5 * (lo + hi);
        VecXd logw = base.array().log().matrix();
        for (Index d = 0; d < L; ++d) logw(d) -= theta * d;
        const VecXd p = stable_softmax<double>(logw);
        double m = 0.0;
        for (Index d = 0; d < L; ++d) m += d * p(d);
        if (m > mu) {
          lo = theta;
        } else {
          hi = theta;
        }
      }
      VecXd logw = base.array().log().matrix();
      for (Index d = 0; d < L; ++d) logw(d) -= 0.5 * (lo + hi) * d;
      const ProbVector probe(stable_softmax<double>(logw));
      const double excess = entropy(probe) - h_star;
      worst = std::max(worst, excess);
      if (excess > 1e-9) ok = false;
    }
    entropy_probe.record(ok, worst);
  }
  return {as_result("maxent.mean_map_decreasing", monotone),
          as_result("maxent.solver_accuracy", solver),
          as_result("maxent.entropy_dominance", entropy_probe)};
}

std::vector<CheckResult> suite_alibi(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed) ^ 0x09);
  std::uniform_int_distribution<Index> idx(1, 63);
  std::uniform_real_distribution<double> slope(-2.0, 2.0);
  Tally equivalence;
  for (int c = 0; c < 1000; ++c) {
    const Index i = idx(rng);
    const AlibiEquivalence eq =
        alibi_equivalence(random_scores(rng, i + 1, 2.0), slope(rng), i);
    equivalence.record(eq.max_diff <= 1e-14, eq.max_diff);
  }
  return {as_result("alibi.lag_key_equivalence", equivalence)};
}

std::vector<CheckResult> suite_rank_one(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed) ^ 0x0a);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<Index> len(4, 128);
  Tally broadcast, negative, sink_rank;
  for (int c = 0; c < 100; ++c) {
    const Index L = len(rng);
    VecXd u(L);
    for (Index j = 0; j < L; ++j) u(j) = gauss(rng);
    const RankCheck check = key_only_rank(u, L);
    broadcast.record(check.rank_le_one, check.second_singular_ratio);
  }
  for (int c = 0; c < 20; ++c) {
    const Index L = len(rng);
    VecXd u(L), a(L), b(L), p(L), q(L);
    for (Index j = 0; j < L; ++j) {
      u(j) = gauss(rng);
      a(j) = gauss(rng);
      b(j) = gauss(rng);
      p(j) = gauss(rng);
      q(j) = gauss(rng);
    }
    MatXd m = VecXd::Ones(L) * u.transpose() +
              0.1 * (a * b.transpose() + p * q.transpose());
    const RankCheck check = rank_le_one_check(m);
    negative.record(!check.rank_le_one, check.rank_le_one ? 1.0 : 0.0);
  }
  for (int c = 0; c < 20; ++c) {
    const SinkBiasParams<double> sink = random_sink(rng, 64);
    const RankCheck check = key_only_rank(sink_bias_vector<double>(64, sink), 64);
    sink_rank.record(check.rank_le_one, check.second_singular_ratio);
  }
  return {as_result("rank_one.broadcast_keys", broadcast),
          as_result("rank_one.negative_control", negative),
          as_result("rank_one.sink_bias_matrix", sink_rank)};
}

}  // namespace

std::vector<std::string> verify_suite_names() {
  return {"softmax",  "optimality",  "convexity", "factorization", "scaling", "two_path",
          "collapse", "sensitivity", "maxent",    "alibi",         "rank_one"};
}

std::vector<CheckResult> run_verify_suite(const std::string& suite, std::uint64_t seed) {
  if (suite == "softmax") return suite_softmax(seed);
  if (suite == "optimality") return suite_optimality(seed);
  if (suite == "convexity") return suite_convexity(seed);
  if (suite == "factorization") return suite_factorization(seed);
  if (suite == "scaling") return suite_scaling(seed);
  if (suite == "two_path") return suite_two_path(seed);
  if (suite == "collapse") return suite_collapse(seed);
  if (suite == "sensitivity") return suite_sensitivity(seed);
  if (suite == "maxent") return suite_maxent(seed);
  if (suite == "alibi") return suite_alibi(seed);
  if (suite == "rank_one") return suite_rank_one(seed);
  throw std::invalid_argument("unknown verify suite: " + suite);
}

std::vector<CheckResult> run_all_verify_suites(std::uint64_t seed) {
  std::vector<CheckResult> all;
  for (const std::string& name : verify_suite_names()) {
    const std::vector<CheckResult> results = run_verify_suite(name, seed);
    all.insert(all.end(), results.begin(), results.end());
  }
  return all;
}

nlohmann::json verify_report_to_json(const std::vector<CheckResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  for (const CheckResult& r : results) {
    arr.push_back({{"check_name", r.check_name},
                   {"cases", r.cases},
                   {"failures", r.failures},
                   {"max_violation", r.max_violation}});
  }
  return arr;
}

int max_worker_threads() {
  if (const char* env = std::getenv("GOAT_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace goat
