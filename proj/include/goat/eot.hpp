#pragma once

// Attention as one-sided entropic optimal transport on the simplex:
// the KL-regularized objective, its softmax closed forms, and an
// independent mirror-descent minimizer used as a ground-truth oracle.

#include <cmath>
#include <stdexcept>
#include <utility>

#include "goat/types.hpp"

namespace goat {

// Simplex membership tolerance for double-precision probability vectors.
inline constexpr double kSimplexTol = 1e-12;

// Row-stable softmax at temperature 1. Entries equal to -inf receive zero
// mass; at least one entry must be finite.
template <typename Scalar>
VecX<Scalar> stable_softmax(const VecX<Scalar>& logits) {
  if (logits.size() == 0) {
    throw std::invalid_argument("stable_softmax: empty logits");
  }
  const Scalar m = logits.maxCoeff();
  if (!std::isfinite(static_cast<double>(m))) {
    throw std::invalid_argument("stable_softmax: no finite logit");
  }
  VecX<Scalar> p = (logits.array() - m).exp().matrix();
  return p / p.sum();
}

// A point on the simplex: non-negative entries summing to one.
class ProbVector {
 public:
  explicit ProbVector(VecXd values) : values_(std::move(values)) {
    if (values_.size() == 0) {
      throw std::invalid_argument("ProbVector: empty");
    }
    if ((values_.array() < 0.0).any()) {
      throw std::invalid_argument("ProbVector: negative entry");
    }
    if (std::abs(values_.sum() - 1.0) > kSimplexTol) {
      throw std::invalid_argument("ProbVector: entries do not sum to 1");
    }
  }

  static ProbVector uniform(Index length) {
    return ProbVector(VecXd::Constant(length, 1.0 / static_cast<double>(length)));
  }

  const VecXd& values() const { return values_; }
  Index size() const { return values_.size(); }
  double operator[](Index j) const { return values_(j); }

 private:
  VecXd values_;
};

// One query row of the transport problem: scores s, prior pi, temperature tau.
// The prior must be strictly positive; masked positions are removed before
// construction rather than given zero mass.
struct TransportProblem {
  VecXd scores;
  ProbVector prior;
  double temperature;

  TransportProblem(VecXd scores_in, ProbVector prior_in, double tau)
      : scores(std::move(scores_in)), prior(std::move(prior_in)), temperature(tau) {
    if (scores.size() != prior.size()) {
      throw std::invalid_argument("TransportProblem: scores/prior length mismatch");
    }
    if (!(temperature > 0.0)) {
      throw std::invalid_argument("TransportProblem: temperature must be positive");
    }
    if (!scores.allFinite()) {
      throw std::invalid_argument("TransportProblem: non-finite score");
    }
    if ((prior.values().array() <= 0.0).any()) {
      throw std::invalid_argument("TransportProblem: prior must be strictly positive");
    }
  }

  Index size() const { return scores.size(); }
};

// softmax(s / tau): the minimizer of <p,-s> - tau H(p) over the simplex.
// The max is subtracted before the temperature division, so a constant
// shift of exactly representable scores changes nothing downstream.
inline ProbVector softmax_attention(const VecXd& scores, double temperature) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("softmax_attention: temperature must be positive");
  }
  if (scores.size() == 0 || !scores.allFinite()) {
    throw std::invalid_argument("softmax_attention: scores must be finite and non-empty");
  }
  const double m = scores.maxCoeff();
  VecXd p = ((scores.array() - m) / temperature).exp().matrix();
  return ProbVector(p / p.sum());
}

// softmax(s / tau + log pi): the minimizer of <p,-s> + tau KL(p || pi).
inline ProbVector kl_prior_attention(const TransportProblem& problem) {
  VecXd logits = problem.scores / problem.temperature +
                 problem.prior.values().array().log().matrix();
  return ProbVector(stable_softmax<double>(logits));
}

// -<p, s> + tau * sum_j p_j log(p_j / pi_j), with 0 log 0 = 0.
inline double eot_objective(const ProbVector& p, const TransportProblem& problem) {
  if (p.size() != problem.size()) {
    throw std::invalid_argument("eot_objective: length mismatch");
  }
  double cost = -p.values().dot(problem.scores);
  double kl = 0.0;
  for (Index j = 0; j < p.size(); ++j) {
    const double pj = p[j];
    if (pj > 0.0) {
      kl += pj * std::log(pj / problem.prior[j]);
    }
  }
  return cost + problem.temperature * kl;
}

// Mirror descent with multiplicative updates, starting from uniform.
// Iterates stay strictly interior to the simplex. In log space the update
// is a linear contraction toward the unique optimum, so for
// 0 < step < 2 / tau it converges geometrically; it never evaluates the
// closed form and serves as an independent oracle for it.
inline ProbVector brute_force_minimize(const TransportProblem& problem,
                                       int iters, double step) {
  if (iters < 1) {
    throw std::invalid_argument("brute_force_minimize: iters must be >= 1");
  }
  const Index L = problem.size();
  const VecXd log_prior = problem.prior.values().array().log();
  VecXd log_p = VecXd::Constant(L, -std::log(static_cast<double>(L)));
  for (int t = 0; t < iters; ++t) {
    // grad_j = -s_j + tau * (log(p_j / pi_j) + 1)
    VecXd grad = -problem.scores +
                 problem.temperature * ((log_p - log_prior).array() + 1.0).matrix();
    log_p -= step * grad;
    log_p = stable_softmax<double>(log_p).array().log().matrix();
  }
  return ProbVector(stable_softmax<double>(log_p));
}

}  // namespace goat
