#pragma once

// Tiny deterministic causal transformer LM with structured-prior heads,
// an analytic backward pass (checked against finite differences), the
// copy-mixture task, and prior-decomposition extraction.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "goat/attention.hpp"
#include "goat/prior.hpp"
#include "goat/types.hpp"

namespace goat {

// --------------------------------------------------------------------------
// Copy-mixture task
// --------------------------------------------------------------------------

// Rule used to generate each position: copy token 0, copy the previous
// token, or sample uniformly. Position 0 is always a uniform draw.
enum class CopyRule : int { kGlobal = 0, kLocal = 1, kNoise = 2 };

struct ToyTaskSpec {
  Index vocab_size = 32;
  Index seq_len = 64;
  double p_global = 0.45;
  double p_local = 0.45;
  double p_noise = 0.10;
  std::uint64_t seed = 0;
};

void validate(const ToyTaskSpec& spec);

struct CopyMixtureBatch {
  Eigen::MatrixXi tokens;  // n_sequences x seq_len
  Eigen::MatrixXi rules;   // n_sequences x seq_len, entries are CopyRule values
};

// Deterministic given (spec.seed, stream); distinct streams give
// independent draws from the same distribution.
CopyMixtureBatch gen_copy_mixture(const ToyTaskSpec& spec, Index n_sequences,
                                  std::uint64_t stream = 0);

// --------------------------------------------------------------------------
// Model configuration
// --------------------------------------------------------------------------

enum class PositionalVariant {
  kGoat,          // spectral relative prior + sink bias lanes
  kLearnedAbsPe,  // learned absolute position embeddings, plain heads
  kAlibiSlope,    // key-linear slope only
};

struct OptimizerConfig {
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  Index batch_size = 16;
};

struct ToyModelConfig {
  Index layers = 2;
  Index heads = 2;
  Index d_model = 64;
  Index head_dim = 32;
  Index modes = 4;  // spectral frequencies per head (goat variant)
  Index vocab_size = 32;
  Index seq_len = 64;  // training context; sink l_ref and abs-PE table size
  Index sink_hidden = 16;
  Index sink_features = 8;
  PositionalVariant variant = PositionalVariant::kGoat;
  OptimizerConfig opt;
  std::uint64_t init_seed = 0;
};

void validate(const ToyModelConfig& cfg);

struct ParamInfo {
  std::string name;
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  bool decay = false;  // participates in decoupled weight decay

  Index size() const { return rows * cols; }
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(Index step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  Index step() const { return step_; }

 private:
  Index step_;
};

// --------------------------------------------------------------------------
// Model
// --------------------------------------------------------------------------

template <typename Scalar>
class ToyModel {
 public:
  explicit ToyModel(const ToyModelConfig& cfg);

  const ToyModelConfig& config() const { return cfg_; }
  const std::vector<ParamInfo>& param_infos() const { return infos_; }
  Index param_count() const { return params_.size(); }
  VecX<Scalar>& params() { return params_; }
  const VecX<Scalar>& params() const { return params_; }

  // Named flat slice of the parameter vector; throws on unknown name.
  Eigen::Map<MatX<Scalar>> param(const std::string& name);
  Eigen::Map<const MatX<Scalar>> param(const std::string& name) const;

  // Fills every parameter with N(0, scale) noise (layer-norm gains around 1);
  // exercises all gradient paths for finite-difference checks.
  void randomize_all(std::uint64_t seed, Scalar scale);

  // Next-token logits, one row per position. Works at any sequence length;
  // the abs-PE variant clamps positions beyond its table.
  MatX<Scalar> forward(const Eigen::VectorXi& tokens) const;

  // Mean cross-entropy over targets at positions >= 1, averaged over the batch.
  Scalar loss(const Eigen::MatrixXi& tokens) const;
  Scalar loss_and_grad(const Eigen::MatrixXi& tokens, VecX<Scalar>& grad) const;

  GoatHeadConfig head_config() const;
  SpectralPriorParams<Scalar> spectral_at(Index layer, Index head) const;
  SinkBiasParams<Scalar> sink_at(Index layer, Index head) const;

 private:
  struct Workspace;
  void forward_into(const Eigen::VectorXi& tokens, Workspace& ws) const;
  Scalar batch_loss(const Eigen::MatrixXi& tokens, VecX<Scalar>* grad) const;

  ToyModelConfig cfg_;
  std::vector<ParamInfo> infos_;
  VecX<Scalar> params_;
};

extern template class ToyModel<float>;
extern template class ToyModel<double>;

// --------------------------------------------------------------------------
// Training and evaluation
// --------------------------------------------------------------------------

struct TrainResult {
  std::vector<double> loss_trace;  // one entry per step
};

// Adam with decoupled weight decay and global-norm gradient clipping.
// Deterministic given seeds; throws DivergenceError if the loss leaves
// the reals.
TrainResult train(ToyModel<float>& model, const ToyTaskSpec& task, Index steps);

struct PriorDecomposition {
  MatXd k_sink;            // row-broadcast of u(j)
  MatXd k_rel;             // kappa(i - j)
  MatXd k_total_centered;  // rows of k_rel + k_sink with the row mean removed
  MatXd induced_prior;     // causal row softmax of k_rel + k_sink
};

// head is the flattened index layer * heads + head_in_layer.
template <typename Scalar>
PriorDecomposition extract_prior_decomposition(const ToyModel<Scalar>& model, Index head,
                                               Index length);

extern template PriorDecomposition extract_prior_decomposition<float>(
    const ToyModel<float>&, Index, Index);
extern template PriorDecomposition extract_prior_decomposition<double>(
    const ToyModel<double>&, Index, Index);

struct ExtrapolationPoint {
  Index length;
  double copy_accuracy;  // argmax accuracy at positions generated by a copy rule
  Index cases;
};

// Fresh sequences from the task distribution at each length; the draws
// depend only on (task.seed, eval_seed, length), so paired model
// comparisons see identical data.
std::vector<ExtrapolationPoint> eval_extrapolation(const ToyModel<float>& model,
                                                   const ToyTaskSpec& task,
                                                   const std::vector<Index>& lengths,
                                                   Index n_sequences,
                                                   std::uint64_t eval_seed);

}  // namespace goat
