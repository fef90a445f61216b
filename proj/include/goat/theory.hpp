#pragma once

// Executable verification of the stability and prior-structure theorems:
// collapse-to-prior bounds, sink margins, context-sensitivity bounds, the
// max-entropy recency prior solver, lag/key bias equivalence under causal
// masking, and rank-one structure of key-only priors.

#include <cmath>
#include <random>
#include <stdexcept>

#include "goat/eot.hpp"
#include "goat/types.hpp"

namespace goat {

inline double entropy(const ProbVector& p) {
  double h = 0.0;
  for (Index j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
  }
  return h;
}

// --------------------------------------------------------------------------
// Collapse to prior
// --------------------------------------------------------------------------

struct CollapseReport {
  double omega;      // dynamic range of the content scores
  VecXd lower;       // pi_j exp(-omega)
  VecXd upper;       // pi_j exp(+omega)
  ProbVector posterior;
  bool holds;
};

// posterior = softmax(s + log pi) at temperature 1, squeezed between
// pi exp(-omega) and pi exp(omega). The comparison carries a 1e-14
// relative guard for representation error; any true violation is O(1).
inline CollapseReport collapse_bounds(const VecXd& scores, const ProbVector& prior) {
  const double omega = scores.maxCoeff() - scores.minCoeff();
  TransportProblem problem(scores, prior, 1.0);
  ProbVector posterior = kl_prior_attention(problem);
  VecXd lower = prior.values() * std::exp(-omega);
  VecXd upper = prior.values() * std::exp(omega);
  bool holds = true;
  for (Index j = 0; j < posterior.size(); ++j) {
    if (posterior[j] < lower(j) * (1.0 - 1e-14) || posterior[j] > upper(j) * (1.0 + 1e-14)) {
      holds = false;
    }
  }
  return {omega, std::move(lower), std::move(upper), std::move(posterior), holds};
}

// --------------------------------------------------------------------------
// Sinks and sensitivity
// --------------------------------------------------------------------------

// m = min_{k != j*} (z_{j*} - z_k); positive iff j* strictly dominates.
inline double sink_margin(const VecXd& logits, Index j_star) {
  if (logits.size() < 2) {
    throw std::invalid_argument("sink_margin: need at least two logits");
  }
  if (j_star < 0 || j_star >= logits.size()) {
    throw std::invalid_argument("sink_margin: j_star out of range");
  }
  double margin = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < logits.size(); ++k) {
    if (k != j_star) margin = std::min(margin, logits(j_star) - logits(k));
  }
  return margin;
}

// Psi = 1 - p_{j*}: total mass on the context, which bounds the output
// perturbation under value noise.
inline double context_sensitivity(const ProbVector& weights_row, Index j_star) {
  if (j_star < 0 || j_star >= weights_row.size()) {
    throw std::invalid_argument("context_sensitivity: j_star out of range");
  }
  return 1.0 - weights_row[j_star];
}

struct SensitivityBound {
  double bound;      // (L-1) / (exp(delta) + L - 1)
  double empirical;  // Psi of the constructed prior at zero scores
  bool holds;
};

// Prior with margin exactly delta at j* = 0 over flat context, zero content
// scores. The construction attains the bound, so empirical == bound up to
// roundoff.
inline SensitivityBound sensitivity_bound_check(Index length, double delta) {
  if (length < 2) {
    throw std::invalid_argument("sensitivity_bound_check: need length >= 2");
  }
  VecXd log_prior = VecXd::Zero(length);
  log_prior(0) = delta;
  ProbVector prior(stable_softmax<double>(log_prior));
  ProbVector posterior = kl_prior_attention(TransportProblem(VecXd::Zero(length), prior, 1.0));
  const double empirical = context_sensitivity(posterior, 0);
  const double n_context = static_cast<double>(length - 1);
  const double bound = n_context / (std::exp(delta) + n_context);
  const bool holds = empirical <= bound * (1.0 + 1e-12) + 1e-15;
  return {bound, empirical, holds};
}

// --------------------------------------------------------------------------
// Maximum-entropy recency prior
// --------------------------------------------------------------------------

struct RecencyPrior {
  double lambda;
  ProbVector distribution;  // over lags {0, ..., L-1}, proportional to exp(-lambda d)
  double mean_lag;
};

namespace detail {

struct LagFamilyStats {
  VecXd probs;
  double mean;
  double var;
};

// Stabilized evaluation of q_d(lambda) = exp(-lambda d) / Z and its moments.
inline LagFamilyStats lag_family_stats(Index length, double lambda) {
  VecXd logw(length);
  for (Index d = 0; d < length; ++d) logw(d) = -lambda * static_cast<double>(d);
  VecXd probs = stable_softmax<double>(logw);
  double mean = 0.0, second = 0.0;
  for (Index d = 0; d < length; ++d) {
    mean += static_cast<double>(d) * probs(d);
    second += static_cast<double>(d) * static_cast<double>(d) * probs(d);
  }
  return {std::move(probs), mean, second - mean * mean};
}

}  // namespace detail

// Solves for the unique lambda with mean lag mu: bisection on the strictly
// decreasing mean map (bracket expansion from [-50, 50]) followed by Newton
// polish using m'(lambda) = -Var(d).
inline RecencyPrior maxent_recency(Index length, double mu) {
  if (length < 2) {
    throw std::invalid_argument("maxent_recency: need length >= 2");
  }
  if (!(mu > 0.0 && mu < static_cast<double>(length - 1))) {
    throw std::invalid_argument("maxent_recency: mu must lie in (0, L-1)");
  }
  double lo = -50.0, hi = 50.0;
  while (detail::lag_family_stats(length, lo).mean < mu) lo *= 2.0;
  while (detail::lag_family_stats(length, hi).mean > mu) hi *= 2.0;
  double lambda = 0.5 * (lo + hi);
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(lambda)); ++it) {
    lambda = 0.5 * (lo + hi);
    if (detail::lag_family_stats(length, lambda).mean > mu) {
      lo = lambda;  // mean decreasing: too-large mean means lambda too small
    } else {
      hi = lambda;
    }
  }
  detail::LagFamilyStats stats = detail::lag_family_stats(length, lambda);
  for (int it = 0; it < 5 && std::abs(stats.mean - mu) > 1e-13 && stats.var > 1e-300; ++it) {
    lambda += (stats.mean - mu) / stats.var;
    stats = detail::lag_family_stats(length, lambda);
  }
  return {lambda, ProbVector(stats.probs), stats.mean};
}

// --------------------------------------------------------------------------
// Lag-linear vs key-linear bias equivalence
// --------------------------------------------------------------------------

struct AlibiEquivalence {
  ProbVector lag_weights;  // softmax_{j<=i}(s_j - m (i - j))
  ProbVector key_weights;  // softmax_{j<=i}(s_j + m j)
  double max_diff;
};

// The two biases differ by the row constant -m*i, so the softmaxes agree.
inline AlibiEquivalence alibi_equivalence(const VecXd& scores_row, double m, Index i) {
  if (scores_row.size() != i + 1) {
    throw std::invalid_argument("alibi_equivalence: need one score per key j <= i");
  }
  VecXd lag_logits(i + 1), key_logits(i + 1);
  for (Index j = 0; j <= i; ++j) {
    lag_logits(j) = scores_row(j) - m * static_cast<double>(i - j);
    key_logits(j) = scores_row(j) + m * static_cast<double>(j);
  }
  ProbVector p_lag(stable_softmax<double>(lag_logits));
  ProbVector p_key(stable_softmax<double>(key_logits));
  const double max_diff = (p_lag.values() - p_key.values()).cwiseAbs().maxCoeff();
  return {std::move(p_lag), std::move(p_key), max_diff};
}

// --------------------------------------------------------------------------
// Rank of key-only priors
// --------------------------------------------------------------------------

struct TopTwoSingular {
  double sigma1;
  double sigma2;
};

// Power iteration for sigma1, deflation of the matrix itself (not the Gram
// matrix) for sigma2; deflating the Gram matrix would floor the ratio at
// sqrt(machine eps).
inline TopTwoSingular top_two_singular_values(const MatXd& a, double tol = 1e-12,
                                              int max_iters = 10000) {
  std::mt19937_64 rng(0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto leading = [&](const MatXd& m, VecXd& right_out, VecXd& left_out) -> double {
    VecXd v(m.cols());
    for (Index j = 0; j < v.size(); ++j) v(j) = gauss(rng);
    v.normalize();
    double sigma = 0.0;
    for (int it = 0; it < max_iters; ++it) {
      VecXd w = m * v;
      const double s = w.norm();
      if (s == 0.0) {
        sigma = 0.0;
        break;
      }
      VecXd v_next = m.transpose() * w;
      const double n = v_next.norm();
      if (n == 0.0) {
        sigma = s;
        break;
      }
      v = v_next / n;
      if (std::abs(s - sigma) <= tol * std::max(1.0, s)) {
        sigma = s;
        break;
      }
      sigma = s;
    }
    right_out = v;
    VecXd image = m * v;
    const double s = image.norm();
    left_out = s > 0.0 ? VecXd(image / s) : VecXd::Zero(m.rows());
    return s;
  };
  VecXd v1, u1;
  const double sigma1 = leading(a, v1, u1);
  if (sigma1 == 0.0) return {0.0, 0.0};
  MatXd deflated = a - sigma1 * u1 * v1.transpose();
  VecXd v2, u2;
  const double sigma2 = leading(deflated, v2, u2);
  return {sigma1, sigma2};
}

struct RankCheck {
  double sigma1;
  double sigma2;
  double second_singular_ratio;  // sigma2 / sigma1, or 0 for the zero matrix
  bool rank_le_one;
};

inline RankCheck rank_le_one_check(const MatXd& m, double ratio_tol = 1e-9) {
  const TopTwoSingular s = top_two_singular_values(m);
  const double ratio = s.sigma1 > 0.0 ? s.sigma2 / s.sigma1 : 0.0;
  return {s.sigma1, s.sigma2, ratio, ratio <= ratio_tol};
}

// Builds U_ij = u_j (the broadcast key-only prior) and checks its rank.
inline RankCheck key_only_rank(const VecXd& u, Index length) {
  if (u.size() != length) {
    throw std::invalid_argument("key_only_rank: |u| must equal length");
  }
  MatXd broadcast = VecXd::Ones(length) * u.transpose();
  return rank_le_one_check(broadcast);
}

}  // namespace goat
