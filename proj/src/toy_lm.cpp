#include "goat/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace goat {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

constexpr double kLnEps = 1e-5;

// Exact GELU: x * Phi(x) with the Gaussian CDF.
template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / Scalar(std::numbers::sqrt2)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar phi = Scalar(0.5) * (Scalar(1) + std::erf(x / Scalar(std::numbers::sqrt2)));
  const Scalar dens =
      std::exp(Scalar(-0.5) * x * x) * Scalar(0.3989422804014327);  // 1/sqrt(2 pi)
  return phi + x * dens;
}

// Default spectral frequency band: periods from 2 tokens to 4096.
template <typename Scalar>
VecX<Scalar> head_frequencies(Index modes) {
  if (modes == 0) return VecX<Scalar>();
  return geometric_frequencies<Scalar>(
      modes, Scalar(2) * Scalar(std::numbers::pi) / Scalar(4096), Scalar(std::numbers::pi));
}

template <typename Scalar>
struct LayerNormCache {
  MatX<Scalar> xhat;  // (x - mean) * rstd
  VecX<Scalar> rstd;  // per row
  MatX<Scalar> out;   // xhat * diag(g) + b
};

template <typename Scalar>
LayerNormCache<Scalar> layer_norm(const MatX<Scalar>& x,
                                  const Eigen::Map<const MatX<Scalar>>& g,
                                  const Eigen::Map<const MatX<Scalar>>& b) {
  const Index rows = x.rows();
  const Index cols = x.cols();
  LayerNormCache<Scalar> c;
  c.xhat.resize(rows, cols);
  c.rstd.resize(rows);
  for (Index i = 0; i < rows; ++i) {
    const Scalar mean = x.row(i).mean();
    const Scalar var = (x.row(i).array() - mean).square().mean();
    const Scalar rstd = Scalar(1) / std::sqrt(var + Scalar(kLnEps));
    c.xhat.row(i) = ((x.row(i).array() - mean) * rstd).matrix();
    c.rstd(i) = rstd;
  }
  c.out = ((c.xhat.array().rowwise() * g.col(0).transpose().array()).rowwise() +
           b.col(0).transpose().array())
              .matrix();
  return c;
}

// dx for y = xhat * g + b given upstream dy; accumulates into dg/db.
template <typename Scalar>
MatX<Scalar> layer_norm_backward(const MatX<Scalar>& dy, const LayerNormCache<Scalar>& c,
                                 const Eigen::Map<const MatX<Scalar>>& g,
                                 Eigen::Map<MatX<Scalar>> dg, Eigen::Map<MatX<Scalar>> db) {
  const Index rows = dy.rows();
  const Index cols = dy.cols();
  dg.col(0) += (dy.array() * c.xhat.array()).colwise().sum().transpose().matrix();
  db.col(0) += dy.colwise().sum().transpose();
  MatX<Scalar> dx(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto dxhat = (dy.row(i).array() * g.col(0).transpose().array()).eval();
    const Scalar m1 = dxhat.mean();
    const Scalar m2 = (dxhat * c.xhat.row(i).array()).mean();
    dx.row(i) = (c.rstd(i) * (dxhat - m1 - c.xhat.row(i).array() * m2)).matrix();
  }
  return dx;
}

}  // namespace

void validate(const ToyTaskSpec& spec) {
  if (spec.vocab_size < 1 || spec.seq_len < 2) {
    throw std::invalid_argument("ToyTaskSpec: need vocab_size >= 1 and seq_len >= 2");
  }
  if (spec.p_global < 0 || spec.p_local < 0 || spec.p_noise < 0 ||
      std::abs(spec.p_global + spec.p_local + spec.p_noise - 1.0) > 1e-12) {
    throw std::invalid_argument("ToyTaskSpec: mixture probabilities must sum to 1");
  }
}

CopyMixtureBatch gen_copy_mixture(const ToyTaskSpec& spec, Index n_sequences,
                                  std::uint64_t stream) {
  validate(spec);
  std::mt19937_64 rng(splitmix64(spec.seed) ^ splitmix64(stream + 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> tok(0, static_cast<int>(spec.vocab_size) - 1);
  CopyMixtureBatch batch;
  batch.tokens.resize(n_sequences, spec.seq_len);
  batch.rules.resize(n_sequences, spec.seq_len);
  for (Index s = 0; s < n_sequences; ++s) {
    batch.tokens(s, 0) = tok(rng);
    batch.rules(s, 0) = static_cast<int>(CopyRule::kNoise);
    for (Index t = 1; t < spec.seq_len; ++t) {
      const double r = unit(rng);
      if (r < spec.p_global) {
        batch.tokens(s, t) = batch.tokens(s, 0);
        batch.rules(s, t) = static_cast<int>(CopyRule::kGlobal);
      } else if (r < spec.p_global + spec.p_local) {
        batch.tokens(s, t) = batch.tokens(s, t - 1);
        batch.rules(s, t) = static_cast<int>(CopyRule::kLocal);
      } else {
        batch.tokens(s, t) = tok(rng);
        batch.rules(s, t) = static_cast<int>(CopyRule::kNoise);
      }
    }
  }
  return batch;
}

void validate(const ToyModelConfig& cfg) {
  if (cfg.layers < 1 || cfg.heads < 1 || cfg.d_model < 1 || cfg.vocab_size < 1 ||
      cfg.seq_len < 2) {
    throw std::invalid_argument("ToyModelConfig: invalid sizes");
  }
  if (cfg.d_model != cfg.heads * cfg.head_dim) {
    throw std::invalid_argument("ToyModelConfig: d_model must equal heads * head_dim");
  }
  if (cfg.sink_features % 2 != 0 || cfg.sink_features < 0 || cfg.sink_hidden < 1) {
    throw std::invalid_argument("ToyModelConfig: invalid sink MLP sizes");
  }
  Index pos_dim = 0;
  if (cfg.variant == PositionalVariant::kGoat) pos_dim = 2 * cfg.modes + 2;
  if (cfg.variant == PositionalVariant::kAlibiSlope) pos_dim = 2;
  if (cfg.head_dim - pos_dim < 1) {
    throw std::invalid_argument("ToyModelConfig: head_dim leaves no content lanes");
  }
}

template <typename Scalar>
ToyModel<Scalar>::ToyModel(const ToyModelConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  const Index d = cfg_.d_model;
  const Index dff = 4 * d;
  const GoatHeadConfig hc = head_config();
  const Index dc = cfg_.variant == PositionalVariant::kLearnedAbsPe ? cfg_.head_dim
                                                                    : hc.content_dim();
  Index offset = 0;
  auto add = [&](const std::string& name, Index rows, Index cols, bool decay) {
    infos_.push_back(ParamInfo{name, offset, rows, cols, decay});
    offset += rows * cols;
  };
  add("embed", cfg_.vocab_size, d, true);
  if (cfg_.variant == PositionalVariant::kLearnedAbsPe) {
    add("pos_embed", cfg_.seq_len, d, true);
  }
  for (Index l = 0; l < cfg_.layers; ++l) {
    const std::string lp = "l" + std::to_string(l) + ".";
    add(lp + "ln1.g", d, 1, false);
    add(lp + "ln1.b", d, 1, false);
    for (Index h = 0; h < cfg_.heads; ++h) {
      const std::string hp = lp + "h" + std::to_string(h) + ".";
      add(hp + "wq", d, dc, true);
      add(hp + "wk", d, dc, true);
      add(hp + "wv", d, cfg_.head_dim, true);
      if (cfg_.variant == PositionalVariant::kGoat) {
        add(hp + "alpha", cfg_.modes, 1, false);
        add(hp + "beta", cfg_.modes, 1, false);
        add(hp + "sink_slope", 1, 1, false);
        add(hp + "sink_w1", cfg_.sink_hidden, cfg_.sink_features + 1, false);
        add(hp + "sink_b1", cfg_.sink_hidden, 1, false);
        add(hp + "sink_w2", cfg_.sink_hidden, 1, false);
        add(hp + "sink_b2", 1, 1, false);
      } else if (cfg_.variant == PositionalVariant::kAlibiSlope) {
        add(hp + "sink_slope", 1, 1, false);
      }
    }
    add(lp + "wo", d, d, true);
    add(lp + "ln2.g", d, 1, false);
    add(lp + "ln2.b", d, 1, false);
    add(lp + "mlp.w1", d, dff, true);
    add(lp + "mlp.b1", dff, 1, false);
    add(lp + "mlp.w2", dff, d, true);
    add(lp + "mlp.b2", d, 1, false);
  }
  add("lnf.g", d, 1, false);
  add("lnf.b", d, 1, false);
  add("unembed", d, cfg_.vocab_size, true);

  params_ = VecX<Scalar>::Zero(offset);
  std::mt19937_64 rng(splitmix64(cfg_.init_seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const ParamInfo& info : infos_) {
    auto view = param(info.name);
    if (ends_with(info.name, ".g")) {
      view.setOnes();
    } else if (info.decay) {
      for (Index i = 0; i < view.size(); ++i) {
        view.data()[i] = static_cast<Scalar>(0.08 * gauss(rng));
      }
    } else if (ends_with(info.name, ".sink_w1")) {
      for (Index i = 0; i < view.size(); ++i) {
        view.data()[i] = static_cast<Scalar>(0.4 * gauss(rng));
      }
    }
    // everything else (biases, layer-norm shifts, prior weights) starts at 0:
    // the prior is uniform and the head reduces to standard attention.
  }
}

template <typename Scalar>
Eigen::Map<MatX<Scalar>> ToyModel<Scalar>::param(const std::string& name) {
  for (const ParamInfo& info : infos_) {
    if (info.name == name) {
      return Eigen::Map<MatX<Scalar>>(params_.data() + info.offset, info.rows, info.cols);
    }
  }
  throw std::invalid_argument("ToyModel: unknown parameter " + name);
}

template <typename Scalar>
Eigen::Map<const MatX<Scalar>> ToyModel<Scalar>::param(const std::string& name) const {
  for (const ParamInfo& info : infos_) {
    if (info.name == name) {
      return Eigen::Map<const MatX<Scalar>>(params_.data() + info.offset, info.rows,
                                            info.cols);
    }
  }
  throw std::invalid_argument("ToyModel: unknown parameter " + name);
}

template <typename Scalar>
void ToyModel<Scalar>::randomize_all(std::uint64_t seed, Scalar scale) {
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const ParamInfo& info : infos_) {
    auto view = param(info.name);
    const Scalar base = ends_with(info.name, ".g") ? Scalar(1) : Scalar(0);
    for (Index i = 0; i < view.size(); ++i) {
      view.data()[i] = base + scale * static_cast<Scalar>(gauss(rng));
    }
  }
}

template <typename Scalar>
GoatHeadConfig ToyModel<Scalar>::head_config() const {
  GoatHeadConfig hc;
  hc.head_dim = cfg_.head_dim;
  hc.modes = cfg_.variant == PositionalVariant::kGoat ? cfg_.modes : 0;
  hc.causal = true;
  return hc;
}

template <typename Scalar>
SpectralPriorParams<Scalar> ToyModel<Scalar>::spectral_at(Index layer, Index head) const {
  SpectralPriorParams<Scalar> sp =
      SpectralPriorParams<Scalar>::zeros(head_frequencies<Scalar>(head_config().modes));
  if (cfg_.variant == PositionalVariant::kGoat && cfg_.modes > 0) {
    const std::string hp = "l" + std::to_string(layer) + ".h" + std::to_string(head) + ".";
    sp.alpha = param(hp + "alpha").col(0);
    sp.beta = param(hp + "beta").col(0);
  }
  return sp;
}

template <typename Scalar>
SinkBiasParams<Scalar> ToyModel<Scalar>::sink_at(Index layer, Index head) const {
  const std::string hp = "l" + std::to_string(layer) + ".h" + std::to_string(head) + ".";
  if (cfg_.variant == PositionalVariant::kGoat) {
    SinkBiasParams<Scalar> sink =
        SinkBiasParams<Scalar>::zeros(cfg_.sink_hidden, cfg_.sink_features, cfg_.seq_len);
    sink.slope = param(hp + "sink_slope")(0, 0);
    sink.mlp_w1 = param(hp + "sink_w1");
    sink.mlp_b1 = param(hp + "sink_b1").col(0);
    sink.mlp_w2 = param(hp + "sink_w2").col(0);
    sink.mlp_b2 = param(hp + "sink_b2")(0, 0);
    return sink;
  }
  SinkBiasParams<Scalar> sink = SinkBiasParams<Scalar>::zeros(1, 0, cfg_.seq_len);
  if (cfg_.variant == PositionalVariant::kAlibiSlope) {
    sink.slope = param(hp + "sink_slope")(0, 0);
  }
  return sink;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename Scalar>
struct ToyModel<Scalar>::Workspace {
  struct HeadCache {
    MatX<Scalar> qc, kc, v;
    MatX<Scalar> q_comp, k_comp;
    MatX<Scalar> attn;    // softmax weights L x L
    MatX<Scalar> sink_h;  // tanh hidden of the sink MLP (goat)
  };
  struct LayerCache {
    MatX<Scalar> x_in;
    LayerNormCache<Scalar> ln1;
    std::vector<HeadCache> heads;
    MatX<Scalar> concat;
    MatX<Scalar> x_mid;
    LayerNormCache<Scalar> ln2;
    MatX<Scalar> u1;
    MatX<Scalar> act;
  };
  MatX<Scalar> x0;
  std::vector<LayerCache> layers;
  LayerNormCache<Scalar> lnf;
  MatX<Scalar> logits;
  MatX<Scalar> fourier;    // L x 2R, shared across heads
  MatX<Scalar> sink_feat;  // L x (F+1), shared across heads
};

template <typename Scalar>
void ToyModel<Scalar>::forward_into(const Eigen::VectorXi& tokens, Workspace& ws) const {
  const ToyModelConfig& cfg = cfg_;
  const Index L = tokens.size();
  const Index d = cfg.d_model;
  const GoatHeadConfig hc = head_config();
  const bool composite = cfg.variant != PositionalVariant::kLearnedAbsPe;
  const Index dc = composite ? hc.content_dim() : cfg.head_dim;
  const Scalar inv_root_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(cfg.head_dim));
  if (L < 1) throw std::invalid_argument("ToyModel: empty sequence");

  const auto embed = param("embed");
  ws.x0.resize(L, d);
  for (Index t = 0; t < L; ++t) {
    if (tokens(t) < 0 || tokens(t) >= cfg.vocab_size) {
      throw std::invalid_argument("ToyModel: token id out of range");
    }
    ws.x0.row(t) = embed.row(tokens(t));
  }
  if (cfg.variant == PositionalVariant::kLearnedAbsPe) {
    // the table has no entries beyond the training context; past it the
    // indices wrap, so long sequences see repeated position identities
    const auto pos = param("pos_embed");
    for (Index t = 0; t < L; ++t) {
      ws.x0.row(t) += pos.row(t % cfg.seq_len);
    }
  }
  if (composite) {
    ws.fourier = fourier_key_matrix<Scalar>(L, head_frequencies<Scalar>(hc.modes));
    const Index feat = cfg.variant == PositionalVariant::kGoat ? cfg.sink_features : 0;
    ws.sink_feat = sink_feature_matrix<Scalar>(L, feat, cfg.seq_len);
  }

  MatX<Scalar> x = ws.x0;
  ws.layers.assign(cfg.layers, typename Workspace::LayerCache{});
  for (Index l = 0; l < cfg.layers; ++l) {
    auto& lc = ws.layers[l];
    const std::string lp = "l" + std::to_string(l) + ".";
    lc.x_in = x;
    lc.ln1 = layer_norm<Scalar>(x, param(lp + "ln1.g"), param(lp + "ln1.b"));
    lc.heads.assign(cfg.heads, typename Workspace::HeadCache{});
    lc.concat.resize(L, d);
    for (Index h = 0; h < cfg.heads; ++h) {
      auto& hcache = lc.heads[h];
      const std::string hp = lp + "h" + std::to_string(h) + ".";
      hcache.qc = lc.ln1.out * param(hp + "wq");
      hcache.kc = lc.ln1.out * param(hp + "wk");
      hcache.v = lc.ln1.out * param(hp + "wv");
      MatX<Scalar> logits;
      if (composite) {
        const Scalar root_dh = std::sqrt(static_cast<Scalar>(cfg.head_dim));
        const Scalar gain =
            std::sqrt(static_cast<Scalar>(cfg.head_dim) / static_cast<Scalar>(dc));
        hcache.q_comp.resize(L, cfg.head_dim);
        hcache.k_comp.resize(L, cfg.head_dim);
        hcache.q_comp.leftCols(dc) = hcache.qc * gain;
        hcache.k_comp.leftCols(dc) = hcache.kc;
        if (hc.modes > 0) {
          const auto alpha = param(hp + "alpha");
          const auto beta = param(hp + "beta");
          for (Index r = 0; r < hc.modes; ++r) {
            const auto c = ws.fourier.col(2 * r);
            const auto s = ws.fourier.col(2 * r + 1);
            hcache.q_comp.col(dc + 2 * r) = (alpha(r, 0) * c + beta(r, 0) * s) * root_dh;
            hcache.q_comp.col(dc + 2 * r + 1) = (alpha(r, 0) * s - beta(r, 0) * c) * root_dh;
          }
          hcache.k_comp.middleCols(dc, 2 * hc.modes) = ws.fourier;
        }
        VecX<Scalar> u;
        const Scalar slope = param(hp + "sink_slope")(0, 0);
        if (cfg.variant == PositionalVariant::kGoat) {
          const auto w1 = param(hp + "sink_w1");
          const auto b1 = param(hp + "sink_b1");
          const auto w2 = param(hp + "sink_w2");
          const Scalar b2 = param(hp + "sink_b2")(0, 0);
          hcache.sink_h = ((ws.sink_feat * w1.transpose()).rowwise() + b1.col(0).transpose())
                              .array()
                              .tanh()
                              .matrix();
          u = slope * ws.sink_feat.col(cfg.sink_features) + hcache.sink_h * w2.col(0) +
              VecX<Scalar>::Constant(L, b2);
        } else {
          u = slope * ws.sink_feat.col(0);
        }
        hcache.q_comp.col(cfg.head_dim - 2).setConstant(root_dh);
        hcache.q_comp.col(cfg.head_dim - 1).setZero();
        hcache.k_comp.col(cfg.head_dim - 2) = u;
        hcache.k_comp.col(cfg.head_dim - 1).setZero();
        logits = hcache.q_comp * hcache.k_comp.transpose() * inv_root_dh;
      } else {
        logits = hcache.qc * hcache.kc.transpose() * inv_root_dh;
      }
      hcache.attn = masked_row_softmax<Scalar>(std::move(logits), true);
      lc.concat.middleCols(h * cfg.head_dim, cfg.head_dim) = hcache.attn * hcache.v;
    }
    lc.x_mid = lc.x_in + lc.concat * param(lp + "wo");
    lc.ln2 = layer_norm<Scalar>(lc.x_mid, param(lp + "ln2.g"), param(lp + "ln2.b"));
    lc.u1 = (lc.ln2.out * param(lp + "mlp.w1")).rowwise() +
            param(lp + "mlp.b1").col(0).transpose();
    lc.act = lc.u1.unaryExpr([](Scalar v) { return gelu(v); });
    x = lc.x_mid + ((lc.act * param(lp + "mlp.w2")).rowwise() +
                    param(lp + "mlp.b2").col(0).transpose());
  }
  ws.lnf = layer_norm<Scalar>(x, param("lnf.g"), param("lnf.b"));
  ws.logits = ws.lnf.out * param("unembed");
}

template <typename Scalar>
MatX<Scalar> ToyModel<Scalar>::forward(const Eigen::VectorXi& tokens) const {
  Workspace ws;
  forward_into(tokens, ws);
  return ws.logits;
}

template <typename Scalar>
Scalar ToyModel<Scalar>::batch_loss(const Eigen::MatrixXi& tokens,
                                    VecX<Scalar>* grad) const {
  const Index n = tokens.rows();
  const Index L = tokens.cols();
  if (n < 1 || L < 2) {
    throw std::invalid_argument("ToyModel: batch must be n x L with L >= 2");
  }
  const ToyModelConfig& cfg = cfg_;
  const GoatHeadConfig hc = head_config();
  const bool composite = cfg.variant != PositionalVariant::kLearnedAbsPe;
  const Index dc = composite ? hc.content_dim() : cfg.head_dim;
  const Scalar inv_root_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(cfg.head_dim));
  const Scalar inv_count = Scalar(1) / static_cast<Scalar>(n * (L - 1));

  auto gview = [&](const std::string& name) {
    for (const ParamInfo& info : infos_) {
      if (info.name == name) {
        return Eigen::Map<MatX<Scalar>>(grad->data() + info.offset, info.rows, info.cols);
      }
    }
    throw std::invalid_argument("ToyModel: unknown parameter " + name);
  };
  if (grad != nullptr) grad->setZero(params_.size());

  Scalar total = 0;
  Workspace ws;
  for (Index s = 0; s < n; ++s) {
    const Eigen::VectorXi seq = tokens.row(s).transpose();
    forward_into(seq, ws);

    MatX<Scalar> dlogits;
    if (grad != nullptr) dlogits = MatX<Scalar>::Zero(L, cfg.vocab_size);
    for (Index t = 0; t + 1 < L; ++t) {
      const VecX<Scalar> p = stable_softmax<Scalar>(ws.logits.row(t).transpose());
      const int target = seq(t + 1);
      total -= std::log(std::max(p(target), std::numeric_limits<Scalar>::min())) * inv_count;
      if (grad != nullptr) {
        dlogits.row(t) = p.transpose() * inv_count;
        dlogits(t, target) -= inv_count;
      }
    }
    if (grad == nullptr) continue;

    gview("unembed") += ws.lnf.out.transpose() * dlogits;
    MatX<Scalar> dnf = dlogits * param("unembed").transpose();
    MatX<Scalar> dx = layer_norm_backward<Scalar>(dnf, ws.lnf, param("lnf.g"),
                                                  gview("lnf.g"), gview("lnf.b"));

    for (Index l = cfg.layers - 1; l >= 0; --l) {
      auto& lc = ws.layers[l];
      const std::string lp = "l" + std::to_string(l) + ".";

      // MLP block: x = x_mid + gelu(n2 w1 + b1) w2 + b2
      gview(lp + "mlp.w2") += lc.act.transpose() * dx;
      gview(lp + "mlp.b2").col(0) += dx.colwise().sum().transpose();
      MatX<Scalar> dact = dx * param(lp + "mlp.w2").transpose();
      MatX<Scalar> du1 =
          (dact.array() *
           lc.u1.unaryExpr([](Scalar u) { return gelu_grad(u); }).array())
              .matrix();
      gview(lp + "mlp.w1") += lc.ln2.out.transpose() * du1;
      gview(lp + "mlp.b1").col(0) += du1.colwise().sum().transpose();
      MatX<Scalar> dn2 = du1 * param(lp + "mlp.w1").transpose();
      MatX<Scalar> dx_mid =
          dx + layer_norm_backward<Scalar>(dn2, lc.ln2, param(lp + "ln2.g"),
                                           gview(lp + "ln2.g"), gview(lp + "ln2.b"));

      // attention block: x_mid = x_in + concat * wo
      gview(lp + "wo") += lc.concat.transpose() * dx_mid;
      MatX<Scalar> dconcat = dx_mid * param(lp + "wo").transpose();
      MatX<Scalar> dn1 = MatX<Scalar>::Zero(L, cfg.d_model);
      for (Index h = 0; h < cfg.heads; ++h) {
        auto& hcache = lc.heads[h];
        const std::string hp = lp + "h" + std::to_string(h) + ".";
        const MatX<Scalar> dhead = dconcat.middleCols(h * cfg.head_dim, cfg.head_dim);
        MatX<Scalar> dattn = dhead * hcache.v.transpose();
        MatX<Scalar> dv = hcache.attn.transpose() * dhead;
        MatX<Scalar> dz(L, L);
        for (Index i = 0; i < L; ++i) {
          const Scalar dot = dattn.row(i).cwiseProduct(hcache.attn.row(i)).sum();
          dz.row(i) = hcache.attn.row(i).cwiseProduct(
              dattn.row(i) - MatX<Scalar>::Constant(1, L, dot));
        }
        MatX<Scalar> dqc, dkc;
        if (composite) {
          MatX<Scalar> dq_comp = dz * hcache.k_comp * inv_root_dh;
          MatX<Scalar> dk_comp = dz.transpose() * hcache.q_comp * inv_root_dh;
          const Scalar root_dh = std::sqrt(static_cast<Scalar>(cfg.head_dim));
          const Scalar gain =
              std::sqrt(static_cast<Scalar>(cfg.head_dim) / static_cast<Scalar>(dc));
          dqc = dq_comp.leftCols(dc) * gain;
          dkc = dk_comp.leftCols(dc);
          if (hc.modes > 0) {
            auto dalpha = gview(hp + "alpha");
            auto dbeta = gview(hp + "beta");
            for (Index r = 0; r < hc.modes; ++r) {
              const VecX<Scalar> c = ws.fourier.col(2 * r);
              const VecX<Scalar> sn = ws.fourier.col(2 * r + 1);
              const VecX<Scalar> d_even = dq_comp.col(dc + 2 * r) * root_dh;
              const VecX<Scalar> d_odd = dq_comp.col(dc + 2 * r + 1) * root_dh;
              dalpha(r, 0) += d_even.dot(c) + d_odd.dot(sn);
              dbeta(r, 0) += d_even.dot(sn) - d_odd.dot(c);
            }
          }
          const VecX<Scalar> du = dk_comp.col(cfg.head_dim - 2);
          if (cfg.variant == PositionalVariant::kGoat) {
            gview(hp + "sink_slope")(0, 0) += du.dot(ws.sink_feat.col(cfg.sink_features));
            const auto w2 = param(hp + "sink_w2");
            gview(hp + "sink_w2").col(0) += hcache.sink_h.transpose() * du;
            gview(hp + "sink_b2")(0, 0) += du.sum();
            MatX<Scalar> dh_s = du * w2.col(0).transpose();  // L x hidden
            MatX<Scalar> dpre =
                (dh_s.array() * (Scalar(1) - hcache.sink_h.array().square())).matrix();
            gview(hp + "sink_w1") += dpre.transpose() * ws.sink_feat;
            gview(hp + "sink_b1").col(0) += dpre.colwise().sum().transpose();
          } else {
            gview(hp + "sink_slope")(0, 0) += du.dot(ws.sink_feat.col(0));
          }
        } else {
          dqc = dz * hcache.kc * inv_root_dh;
          dkc = dz.transpose() * hcache.qc * inv_root_dh;
        }
        gview(hp + "wq") += lc.ln1.out.transpose() * dqc;
        gview(hp + "wk") += lc.ln1.out.transpose() * dkc;
        gview(hp + "wv") += lc.ln1.out.transpose() * dv;
        dn1 += dqc * param(hp + "wq").transpose() + dkc * param(hp + "wk").transpose() +
               dv * param(hp + "wv").transpose();
      }
      dx = dx_mid + layer_norm_backward<Scalar>(dn1, lc.ln1, param(lp + "ln1.g"),
                                                gview(lp + "ln1.g"), gview(lp + "ln1.b"));
    }

    auto dembed = gview("embed");
    for (Index t = 0; t < L; ++t) dembed.row(seq(t)) += dx.row(t);
    if (cfg.variant == PositionalVariant::kLearnedAbsPe) {
      auto dpos = gview("pos_embed");
      for (Index t = 0; t < L; ++t) dpos.row(t % cfg.seq_len) += dx.row(t);
    }
  }
  return total;
}

template <typename Scalar>
Scalar ToyModel<Scalar>::loss(const Eigen::MatrixXi& tokens) const {
  return batch_loss(tokens, nullptr);
}

template <typename Scalar>
Scalar ToyModel<Scalar>::loss_and_grad(const Eigen::MatrixXi& tokens,
                                       VecX<Scalar>& grad) const {
  return batch_loss(tokens, &grad);
}

template class ToyModel<float>;
template class ToyModel<double>;

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainResult train(ToyModel<float>& model, const ToyTaskSpec& task, Index steps) {
  validate(task);
  const OptimizerConfig& opt = model.config().opt;
  const Index n_params = model.param_count();
  VecXd m = VecXd::Zero(n_params);
  VecXd v = VecXd::Zero(n_params);
  VecX<float> grad(n_params);
  TrainResult result;
  result.loss_trace.reserve(steps);

  ToyTaskSpec batch_spec = task;
  batch_spec.seq_len = model.config().seq_len;
  batch_spec.vocab_size = model.config().vocab_size;

  for (Index step = 0; step < steps; ++step) {
    const CopyMixtureBatch batch =
        gen_copy_mixture(batch_spec, opt.batch_size, static_cast<std::uint64_t>(step) + 1);
    float loss = 0;
    try {
      loss = model.loss_and_grad(batch.tokens, grad);
    } catch (const std::invalid_argument&) {
      // non-finite activations surface as domain errors in the softmax
      throw DivergenceError(step,
                            "train: non-finite state at step " + std::to_string(step));
    }
    if (!std::isfinite(loss)) {
      throw DivergenceError(step,
                            "train: loss is not finite at step " + std::to_string(step));
    }
    double norm_sq = 0.0;
    for (Index i = 0; i < n_params; ++i) {
      norm_sq += static_cast<double>(grad(i)) * static_cast<double>(grad(i));
    }
    const double norm = std::sqrt(norm_sq);
    const double clip_scale = norm > opt.clip_norm ? opt.clip_norm / norm : 1.0;

    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(opt.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.beta2, t);
    for (const ParamInfo& info : model.param_infos()) {
      const double wd = info.decay ? opt.weight_decay : 0.0;
      for (Index i = info.offset; i < info.offset + info.size(); ++i) {
        const double g = static_cast<double>(grad(i)) * clip_scale;
        m(i) = opt.beta1 * m(i) + (1.0 - opt.beta1) * g;
        v(i) = opt.beta2 * v(i) + (1.0 - opt.beta2) * g * g;
        const double update = (m(i) / bc1) / (std::sqrt(v(i) / bc2) + opt.eps);
        double p = static_cast<double>(model.params()(i));
        p -= opt.learning_rate * (update + wd * p);
        model.params()(i) = static_cast<float>(p);
      }
    }
    result.loss_trace.push_back(static_cast<double>(loss));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Prior extraction and evaluation
// ---------------------------------------------------------------------------

template <typename Scalar>
PriorDecomposition extract_prior_decomposition(const ToyModel<Scalar>& model, Index head,
                                               Index length) {
  const ToyModelConfig& cfg = model.config();
  if (head < 0 || head >= cfg.layers * cfg.heads) {
    throw std::invalid_argument("extract_prior_decomposition: head index out of range");
  }
  const Index layer = head / cfg.heads;
  const Index h = head % cfg.heads;

  SpectralPriorParams<double> spectral;
  SinkBiasParams<double> sink;
  {
    const SpectralPriorParams<Scalar> sp = model.spectral_at(layer, h);
    spectral.frequencies = sp.frequencies.template cast<double>();
    spectral.alpha = sp.alpha.template cast<double>();
    spectral.beta = sp.beta.template cast<double>();
    const SinkBiasParams<Scalar> sk = model.sink_at(layer, h);
    sink.slope = static_cast<double>(sk.slope);
    sink.mlp_w1 = sk.mlp_w1.template cast<double>();
    sink.mlp_b1 = sk.mlp_b1.template cast<double>();
    sink.mlp_w2 = sk.mlp_w2.template cast<double>();
    sink.mlp_b2 = static_cast<double>(sk.mlp_b2);
    sink.feature_count = sk.feature_count;
    sink.l_ref = sk.l_ref;
  }

  PriorDecomposition dec;
  const VecXd u = sink_bias_vector<double>(length, sink);
  dec.k_sink = VecXd::Ones(length) * u.transpose();
  dec.k_rel.resize(length, length);
  for (Index i = 0; i < length; ++i) {
    for (Index j = 0; j < length; ++j) {
      dec.k_rel(i, j) = relative_log_prior<double>(i, j, spectral);
    }
  }
  MatXd total = dec.k_rel + dec.k_sink;
  dec.k_total_centered = total.colwise() - total.rowwise().mean();
  dec.induced_prior = masked_row_softmax<double>(std::move(total), true);
  return dec;
}

template PriorDecomposition extract_prior_decomposition<float>(const ToyModel<float>&, Index,
                                                               Index);
template PriorDecomposition extract_prior_decomposition<double>(const ToyModel<double>&,
                                                                Index, Index);

std::vector<ExtrapolationPoint> eval_extrapolation(const ToyModel<float>& model,
                                                   const ToyTaskSpec& task,
                                                   const std::vector<Index>& lengths,
                                                   Index n_sequences,
                                                   std::uint64_t eval_seed) {
  std::vector<ExtrapolationPoint> points;
  points.reserve(lengths.size());
  for (const Index length : lengths) {
    ToyTaskSpec spec = task;
    spec.seq_len = length;
    const std::uint64_t stream =
        splitmix64(eval_seed ^ (0x5bf03635ull + static_cast<std::uint64_t>(length)));
    const CopyMixtureBatch batch = gen_copy_mixture(spec, n_sequences, stream);
    Index correct = 0;
    Index cases = 0;
    for (Index s = 0; s < n_sequences; ++s) {
      const Eigen::VectorXi seq = batch.tokens.row(s).transpose();
      const MatX<float> logits = model.forward(seq);
      for (Index t = 1; t < length; ++t) {
        const int rule = batch.rules(s, t);
        if (rule != static_cast<int>(CopyRule::kGlobal) &&
            rule != static_cast<int>(CopyRule::kLocal)) {
          continue;
        }
        Index argmax = 0;
        logits.row(t - 1).maxCoeff(&argmax);
        cases += 1;
        if (argmax == seq(t)) correct += 1;
      }
    }
    points.push_back({length, cases > 0 ? static_cast<double>(correct) / cases : 0.0, cases});
  }
  return points;
}

}  // namespace goat
