#pragma once

// The structured log-prior: a translation-equivariant spectral component
// with an exact bilinear factorization, a key-only sink bias u(j), and
// the composite query/key assembly that injects both into an unmodified
// scaled-dot-product kernel (the scaling trick).

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

#include "goat/types.hpp"

namespace goat {

// --------------------------------------------------------------------------
// Spectral (relative) component
// --------------------------------------------------------------------------

// Frequencies omega_r with symmetric weights alpha_r and antisymmetric
// weights beta_r of the relative log-prior
//   kappa(d) = sum_r alpha_r cos(omega_r d) + beta_r sin(omega_r d).
// Weights are unconstrained in sign; negative values encode repulsion.
template <typename Scalar>
struct SpectralPriorParams {
  VecX<Scalar> frequencies;  // strictly positive, strictly increasing
  VecX<Scalar> alpha;
  VecX<Scalar> beta;

  Index modes() const { return frequencies.size(); }

  static SpectralPriorParams zeros(VecX<Scalar> freqs) {
    const Index r = freqs.size();
    return SpectralPriorParams{std::move(freqs), VecX<Scalar>::Zero(r), VecX<Scalar>::Zero(r)};
  }
};

template <typename Scalar>
void validate(const SpectralPriorParams<Scalar>& params) {
  const Index r = params.frequencies.size();
  if (params.alpha.size() != r || params.beta.size() != r) {
    throw std::invalid_argument("SpectralPriorParams: weight/frequency size mismatch");
  }
  for (Index i = 0; i < r; ++i) {
    if (!(params.frequencies(i) > Scalar(0))) {
      throw std::invalid_argument("SpectralPriorParams: frequencies must be positive");
    }
    if (i > 0 && !(params.frequencies(i) > params.frequencies(i - 1))) {
      throw std::invalid_argument("SpectralPriorParams: frequencies must be strictly increasing");
    }
  }
}

// R frequencies in geometric progression from omega_min to omega_max
// inclusive; R = 1 returns just omega_min, R = 0 an empty vector.
template <typename Scalar>
VecX<Scalar> geometric_frequencies(Index count, Scalar omega_min, Scalar omega_max) {
  if (count == 0) return VecX<Scalar>();
  if (!(Scalar(0) < omega_min && omega_min < omega_max &&
        omega_max <= Scalar(std::numbers::pi) * Scalar(1 + 1e-12))) {
    throw std::invalid_argument("geometric_frequencies: need 0 < omega_min < omega_max <= pi");
  }
  VecX<Scalar> freqs(count);
  freqs(0) = omega_min;
  if (count == 1) return freqs;
  const Scalar ratio = std::pow(omega_max / omega_min,
                                Scalar(1) / static_cast<Scalar>(count - 1));
  for (Index r = 1; r < count; ++r) freqs(r) = freqs(r - 1) * ratio;
  freqs(count - 1) = omega_max;
  return freqs;
}

// kappa(i - j): depends on positions only through the displacement.
template <typename Scalar>
Scalar relative_log_prior(Index i, Index j, const SpectralPriorParams<Scalar>& params) {
  const Scalar d = static_cast<Scalar>(i - j);
  Scalar sum = 0;
  for (Index r = 0; r < params.modes(); ++r) {
    const Scalar w = params.frequencies(r) * d;
    sum += params.alpha(r) * std::cos(w) + params.beta(r) * std::sin(w);
  }
  return sum;
}

// Positional key: the Fourier feature (cos w_r j, sin w_r j) per frequency.
template <typename Scalar>
VecX<Scalar> fourier_key(Index j, const VecX<Scalar>& frequencies) {
  const Index r = frequencies.size();
  VecX<Scalar> key(2 * r);
  for (Index m = 0; m < r; ++m) {
    const Scalar w = frequencies(m) * static_cast<Scalar>(j);
    key(2 * m) = std::cos(w);
    key(2 * m + 1) = std::sin(w);
  }
  return key;
}

// Positional query: per frequency the spectral rotation
//   (alpha cos(w i) + beta sin(w i), alpha sin(w i) - beta cos(w i)),
// chosen so that <q_rel(i), k_rel(j)> == kappa(i - j) exactly.
template <typename Scalar>
VecX<Scalar> spectral_rotate_query(Index i, const SpectralPriorParams<Scalar>& params) {
  const Index r = params.modes();
  VecX<Scalar> query(2 * r);
  for (Index m = 0; m < r; ++m) {
    const Scalar w = params.frequencies(m) * static_cast<Scalar>(i);
    const Scalar c = std::cos(w);
    const Scalar s = std::sin(w);
    query(2 * m) = params.alpha(m) * c + params.beta(m) * s;
    query(2 * m + 1) = params.alpha(m) * s - params.beta(m) * c;
  }
  return query;
}

// Row-per-position builders for batched assembly.
template <typename Scalar>
MatX<Scalar> fourier_key_matrix(Index length, const VecX<Scalar>& frequencies) {
  MatX<Scalar> keys(length, 2 * frequencies.size());
  for (Index j = 0; j < length; ++j) keys.row(j) = fourier_key(j, frequencies).transpose();
  return keys;
}

template <typename Scalar>
MatX<Scalar> spectral_rotate_matrix(Index length, const SpectralPriorParams<Scalar>& params) {
  MatX<Scalar> queries(length, 2 * params.modes());
  for (Index i = 0; i < length; ++i) {
    queries.row(i) = spectral_rotate_query(i, params).transpose();
  }
  return queries;
}

// --------------------------------------------------------------------------
// Key-only sink bias u(j)
// --------------------------------------------------------------------------

// u(j) = slope * (j / l_ref) + MLP(sinusoidal features of j, j / l_ref).
// The bias never reads the query index, so the induced L x L matrix is
// rank one (see theory checks). The MLP is a single tanh hidden layer.
template <typename Scalar>
struct SinkBiasParams {
  Scalar slope = 0;
  MatX<Scalar> mlp_w1;  // hidden x (feature_count + 1)
  VecX<Scalar> mlp_b1;  // hidden
  VecX<Scalar> mlp_w2;  // hidden
  Scalar mlp_b2 = 0;
  Index feature_count = 0;  // sinusoidal inputs, even
  Index l_ref = 1;          // normalization length

  Index hidden() const { return mlp_b1.size(); }

  static SinkBiasParams zeros(Index hidden, Index feature_count, Index l_ref) {
    SinkBiasParams p;
    p.mlp_w1 = MatX<Scalar>::Zero(hidden, feature_count + 1);
    p.mlp_b1 = VecX<Scalar>::Zero(hidden);
    p.mlp_w2 = VecX<Scalar>::Zero(hidden);
    p.feature_count = feature_count;
    p.l_ref = l_ref;
    return p;
  }
};

template <typename Scalar>
void validate(const SinkBiasParams<Scalar>& params) {
  if (params.l_ref < 1) throw std::invalid_argument("SinkBiasParams: l_ref must be >= 1");
  if (params.feature_count % 2 != 0) {
    throw std::invalid_argument("SinkBiasParams: feature_count must be even");
  }
  const Index h = params.mlp_b1.size();
  if (params.mlp_w1.rows() != h || params.mlp_w1.cols() != params.feature_count + 1 ||
      params.mlp_w2.size() != h) {
    throw std::invalid_argument("SinkBiasParams: MLP shape mismatch");
  }
}

// MLP input: feature_count/2 sinusoidal pairs at geometric wavelengths
// spanning periods ~4 tokens to ~4 * l_ref, plus the scalar j / l_ref.
template <typename Scalar>
VecX<Scalar> sink_features(Index j, Index feature_count, Index l_ref) {
  VecX<Scalar> x(feature_count + 1);
  if (feature_count > 0) {
    const VecX<Scalar> freqs = geometric_frequencies<Scalar>(
        feature_count / 2,
        Scalar(2) * Scalar(std::numbers::pi) / (Scalar(4) * static_cast<Scalar>(l_ref)),
        Scalar(std::numbers::pi) / Scalar(2));
    x.head(feature_count) = fourier_key(j, freqs);
  }
  x(feature_count) = static_cast<Scalar>(j) / static_cast<Scalar>(l_ref);
  return x;
}

// Rows are sink_features(j) for j = 0..length-1.
template <typename Scalar>
MatX<Scalar> sink_feature_matrix(Index length, Index feature_count, Index l_ref) {
  MatX<Scalar> x(length, feature_count + 1);
  if (feature_count > 0) {
    const VecX<Scalar> freqs = geometric_frequencies<Scalar>(
        feature_count / 2,
        Scalar(2) * Scalar(std::numbers::pi) / (Scalar(4) * static_cast<Scalar>(l_ref)),
        Scalar(std::numbers::pi) / Scalar(2));
    x.leftCols(feature_count) = fourier_key_matrix(length, freqs);
  }
  for (Index j = 0; j < length; ++j) {
    x(j, feature_count) = static_cast<Scalar>(j) / static_cast<Scalar>(l_ref);
  }
  return x;
}

template <typename Scalar>
Scalar sink_bias(Index j, const SinkBiasParams<Scalar>& params) {
  const VecX<Scalar> x = sink_features<Scalar>(j, params.feature_count, params.l_ref);
  const VecX<Scalar> h = (params.mlp_w1 * x + params.mlp_b1).array().tanh().matrix();
  return params.slope * x(params.feature_count) + params.mlp_w2.dot(h) + params.mlp_b2;
}

template <typename Scalar>
VecX<Scalar> sink_bias_vector(Index length, const SinkBiasParams<Scalar>& params) {
  const MatX<Scalar> x = sink_feature_matrix<Scalar>(length, params.feature_count, params.l_ref);
  const MatX<Scalar> h = ((x * params.mlp_w1.transpose()).rowwise() +
                          params.mlp_b1.transpose())
                             .array()
                             .tanh()
                             .matrix();
  return params.slope * x.col(params.feature_count) + h * params.mlp_w2 +
         VecX<Scalar>::Constant(length, params.mlp_b2);
}

// Sets the linear term to the key-linear equivalent of a lag-linear bias
// lag_coeff * (i - j). A negative lag_coeff penalizes distance, mimicking
// the maximum-entropy recency prior; under causal masking the two biases
// induce identical attention (see theory checks).
template <typename Scalar>
void alibi_init(SinkBiasParams<Scalar>& params, Scalar lag_coeff) {
  params.slope = -lag_coeff * static_cast<Scalar>(params.l_ref);
}

// --------------------------------------------------------------------------
// Composite vectors
// --------------------------------------------------------------------------

// Head dimension split: d_h = d_c + d_p with d_p = 2R + 2
// (2R spectral lanes, one sink lane, one zero pad).
struct GoatHeadConfig {
  Index head_dim = 0;  // d_h
  Index modes = 0;     // R
  bool causal = true;

  Index pos_dim() const { return 2 * modes + 2; }
  Index content_dim() const { return head_dim - pos_dim(); }
};

inline void validate(const GoatHeadConfig& cfg) {
  if (cfg.modes < 0 || cfg.content_dim() < 1) {
    throw std::invalid_argument("GoatHeadConfig: need content_dim >= 1 and modes >= 0");
  }
}

// q' = [q_c sqrt(d_h/d_c), q_rel sqrt(d_h), sqrt(d_h), 0]
// k' = [k_c,               k_rel,           u(j),      0]
// so that <q', k'> / sqrt(d_h) = <q_c, k_c> / sqrt(d_c) + kappa(i-j) + u(j):
// content at temperature sqrt(d_c), prior at effective temperature 1.
template <typename Scalar>
std::pair<VecX<Scalar>, VecX<Scalar>> compose_vectors(
    const VecX<Scalar>& q_content, const VecX<Scalar>& k_content, Index i, Index j,
    const SpectralPriorParams<Scalar>& spectral, const SinkBiasParams<Scalar>& sink,
    const GoatHeadConfig& cfg) {
  validate(cfg);
  if (spectral.modes() != cfg.modes) {
    throw std::invalid_argument("compose_vectors: spectral modes do not match config");
  }
  const Index dc = cfg.content_dim();
  if (q_content.size() != dc || k_content.size() != dc) {
    throw std::invalid_argument("compose_vectors: content dimension mismatch");
  }
  const Scalar root_dh = std::sqrt(static_cast<Scalar>(cfg.head_dim));
  const Scalar content_gain = std::sqrt(static_cast<Scalar>(cfg.head_dim) / static_cast<Scalar>(dc));

  VecX<Scalar> q(cfg.head_dim);
  q.head(dc) = q_content * content_gain;
  q.segment(dc, 2 * cfg.modes) = spectral_rotate_query(i, spectral) * root_dh;
  q(cfg.head_dim - 2) = root_dh;
  q(cfg.head_dim - 1) = 0;

  VecX<Scalar> k(cfg.head_dim);
  k.head(dc) = k_content;
  k.segment(dc, 2 * cfg.modes) = fourier_key(j, spectral.frequencies);
  k(cfg.head_dim - 2) = sink_bias(j, sink);
  k(cfg.head_dim - 1) = 0;

  return {std::move(q), std::move(k)};
}

// Batched assembly: row i of the result is the composite vector of row i.
template <typename Scalar>
MatX<Scalar> compose_query_matrix(const MatX<Scalar>& q_content,
                                  const SpectralPriorParams<Scalar>& spectral,
                                  const GoatHeadConfig& cfg) {
  validate(cfg);
  const Index length = q_content.rows();
  const Index dc = cfg.content_dim();
  if (spectral.modes() != cfg.modes) {
    throw std::invalid_argument("compose_query_matrix: spectral modes do not match config");
  }
  if (q_content.cols() != dc) {
    throw std::invalid_argument("compose_query_matrix: content dimension mismatch");
  }
  const Scalar root_dh = std::sqrt(static_cast<Scalar>(cfg.head_dim));
  MatX<Scalar> q(length, cfg.head_dim);
  q.leftCols(dc) =
      q_content * std::sqrt(static_cast<Scalar>(cfg.head_dim) / static_cast<Scalar>(dc));
  q.middleCols(dc, 2 * cfg.modes) = spectral_rotate_matrix(length, spectral) * root_dh;
  q.col(cfg.head_dim - 2).setConstant(root_dh);
  q.col(cfg.head_dim - 1).setZero();
  return q;
}

template <typename Scalar>
MatX<Scalar> compose_key_matrix(const MatX<Scalar>& k_content,
                                const SpectralPriorParams<Scalar>& spectral,
                                const SinkBiasParams<Scalar>& sink,
                                const GoatHeadConfig& cfg) {
  validate(cfg);
  const Index length = k_content.rows();
  const Index dc = cfg.content_dim();
  if (spectral.modes() != cfg.modes) {
    throw std::invalid_argument("compose_key_matrix: spectral modes do not match config");
  }
  if (k_content.cols() != dc) {
    throw std::invalid_argument("compose_key_matrix: content dimension mismatch");
  }
  MatX<Scalar> k(length, cfg.head_dim);
  k.leftCols(dc) = k_content;
  k.middleCols(dc, 2 * cfg.modes) = fourier_key_matrix(length, spectral.frequencies);
  k.col(cfg.head_dim - 2) = sink_bias_vector(length, sink);
  k.col(cfg.head_dim - 1).setZero();
  return k;
}

// Dense evaluation of the full log-prior K_ij = kappa(i - j) + u(j);
// reference path only, O(L^2) memory by construction.
template <typename Scalar>
MatX<Scalar> log_prior_matrix(Index length, const SpectralPriorParams<Scalar>& spectral,
                              const SinkBiasParams<Scalar>& sink) {
  MatX<Scalar> bias(length, length);
  const VecX<Scalar> u = sink_bias_vector(length, sink);
  for (Index i = 0; i < length; ++i) {
    for (Index j = 0; j < length; ++j) {
      bias(i, j) = relative_log_prior(i, j, spectral) + u(j);
    }
  }
  return bias;
}

}  // namespace goat
