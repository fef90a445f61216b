#pragma once

// Reference scaled-dot-product attention over composite vectors, the
// dense explicit-bias path used to cross-validate it, and the full head
// forward with block-diagonal content/positional projections.

#include <cmath>
#include <stdexcept>
#include <utility>

#include "goat/eot.hpp"
#include "goat/prior.hpp"
#include "goat/types.hpp"

namespace goat {

template <typename Scalar>
struct AttentionBatch {
  MatX<Scalar> queries;  // L x d_h composite vectors
  MatX<Scalar> keys;     // L x d_h
  MatX<Scalar> values;   // L x d_v, content only
  bool causal = true;
};

template <typename Scalar>
struct AttentionResult {
  MatX<Scalar> outputs;  // L x d_v
  MatX<Scalar> weights;  // L x L, rows sum to 1 over admissible keys
};

// Row softmax with the causal mask applied as index exclusion: the softmax
// runs over the admissible prefix j <= i and masked entries are exactly zero.
template <typename Scalar>
MatX<Scalar> masked_row_softmax(MatX<Scalar> logits, bool causal) {
  const Index rows = logits.rows();
  const Index cols = logits.cols();
  if (rows == 0 || cols == 0) {
    throw std::invalid_argument("masked_row_softmax: empty logits");
  }
  for (Index i = 0; i < rows; ++i) {
    const Index admissible = causal ? std::min(i + 1, cols) : cols;
    auto row = logits.row(i).head(admissible);
    const Scalar m = row.maxCoeff();
    if (!std::isfinite(static_cast<double>(m))) {
      throw std::invalid_argument("masked_row_softmax: no finite logit");
    }
    row = (row.array() - m).exp().matrix();
    row /= row.sum();
    logits.row(i).tail(cols - admissible).setZero();
  }
  return logits;
}

template <typename Scalar>
AttentionResult<Scalar> sdpa(const AttentionBatch<Scalar>& batch) {
  const Index length = batch.queries.rows();
  if (batch.keys.rows() != length || batch.values.rows() != length) {
    throw std::invalid_argument("sdpa: row counts must match");
  }
  if (batch.keys.cols() != batch.queries.cols()) {
    throw std::invalid_argument("sdpa: query/key dimension mismatch");
  }
  if (length == 0 || batch.queries.cols() == 0) {
    throw std::invalid_argument("sdpa: empty batch");
  }
  const Scalar inv_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(batch.queries.cols()));
  MatX<Scalar> weights =
      masked_row_softmax<Scalar>(batch.queries * batch.keys.transpose() * inv_scale,
                                 batch.causal);
  return {weights * batch.values, std::move(weights)};
}

// Row softmax of <q_c, k_c> / sqrt(d_c) + bias, then mix values. Dense-bias
// reference path: O(L^2) memory, used to validate the composite path.
template <typename Scalar>
AttentionResult<Scalar> explicit_bias_attention(const MatX<Scalar>& q_content,
                                                const MatX<Scalar>& k_content,
                                                const MatX<Scalar>& values,
                                                const MatX<Scalar>& bias, bool causal) {
  const Index length = q_content.rows();
  if (k_content.rows() != length || values.rows() != length ||
      bias.rows() != length || bias.cols() != length ||
      k_content.cols() != q_content.cols()) {
    throw std::invalid_argument("explicit_bias_attention: shape mismatch");
  }
  if (length == 0) {
    throw std::invalid_argument("explicit_bias_attention: empty batch");
  }
  const Scalar inv_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(q_content.cols()));
  MatX<Scalar> weights = masked_row_softmax<Scalar>(
      q_content * k_content.transpose() * inv_scale + bias, causal);
  return {weights * values, std::move(weights)};
}

// One attention head. Content lanes come from learned projections, the
// positional lanes from the prior parameters; the two subspaces never mix.
template <typename Scalar>
struct GoatHeadParams {
  MatX<Scalar> w_q;  // d_model x d_c
  MatX<Scalar> w_k;  // d_model x d_c
  MatX<Scalar> w_v;  // d_model x d_h (values use the full head dimension)
  SpectralPriorParams<Scalar> spectral;
  SinkBiasParams<Scalar> sink;
};

template <typename Scalar>
MatX<Scalar> goat_head_forward(const MatX<Scalar>& hidden,
                               const GoatHeadParams<Scalar>& params,
                               const GoatHeadConfig& cfg) {
  validate(cfg);
  const Index d_model = hidden.cols();
  if (params.w_q.rows() != d_model || params.w_k.rows() != d_model ||
      params.w_v.rows() != d_model || params.w_q.cols() != cfg.content_dim() ||
      params.w_k.cols() != cfg.content_dim() || params.w_v.cols() != cfg.head_dim) {
    throw std::invalid_argument("goat_head_forward: projection shape mismatch");
  }
  AttentionBatch<Scalar> batch;
  batch.queries = compose_query_matrix<Scalar>(hidden * params.w_q, params.spectral, cfg);
  batch.keys = compose_key_matrix<Scalar>(hidden * params.w_k, params.spectral,
                                          params.sink, cfg);
  batch.values = hidden * params.w_v;
  batch.causal = cfg.causal;
  return sdpa(batch).outputs;
}

}  // namespace goat
