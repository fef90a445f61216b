#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "goat/serialize.hpp"
#include "goat/toy_lm.hpp"

using namespace goat;

namespace {

ToyModelConfig micro_config(PositionalVariant variant, std::uint64_t seed) {
  ToyModelConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.d_model = 16;
  cfg.head_dim = 8;
  cfg.modes = 1;
  cfg.vocab_size = 7;
  cfg.seq_len = 7;
  cfg.sink_hidden = 4;
  cfg.sink_features = 4;
  cfg.variant = variant;
  cfg.init_seed = seed;
  return cfg;
}

// Central finite differences against the analytic gradient; returns the
// worst relative error over all parameters.
double max_fd_error(ToyModel<double>& model, const Eigen::MatrixXi& tokens) {
  VecXd grad(model.param_count());
  model.loss_and_grad(tokens, grad);
  const double h = 1e-4;
  double worst = 0.0;
  for (Index i = 0; i < model.param_count(); ++i) {
    const double saved = model.params()(i);
    model.params()(i) = saved + h;
    const double up = model.loss(tokens);
    model.params()(i) = saved - h;
    const double down = model.loss(tokens);
    model.params()(i) = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double rel = std::abs(numeric - grad(i)) /
                       std::max({1.0, std::abs(numeric), std::abs(grad(i))});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace

TEST_CASE("copy mixture generator follows its rules") {
  SUBCASE("pure noise gives a near-uniform unigram distribution") {
    ToyTaskSpec spec;
    spec.vocab_size = 8;
    spec.seq_len = 32;
    spec.p_global = 0.0;
    spec.p_local = 0.0;
    spec.p_noise = 1.0;
    spec.seed = 5;
    const CopyMixtureBatch batch = gen_copy_mixture(spec, 256);
    VecXd counts = VecXd::Zero(8);
    for (Index s = 0; s < 256; ++s) {
      for (Index t = 0; t < 32; ++t) counts(batch.tokens(s, t)) += 1.0;
    }
    const double n = 256.0 * 32.0;
    const double expected = n / 8.0;
    const double sigma = std::sqrt(n * (1.0 / 8.0) * (7.0 / 8.0));
    for (Index v = 0; v < 8; ++v) CHECK(std::abs(counts(v) - expected) <= 3.0 * sigma);
  }
  SUBCASE("pure global copying repeats token 0") {
    ToyTaskSpec spec;
    spec.p_global = 1.0;
    spec.p_local = 0.0;
    spec.p_noise = 0.0;
    spec.seed = 6;
    const CopyMixtureBatch batch = gen_copy_mixture(spec, 16);
    for (Index s = 0; s < 16; ++s) {
      for (Index t = 1; t < spec.seq_len; ++t) {
        CHECK(batch.tokens(s, t) == batch.tokens(s, 0));
        CHECK(batch.rules(s, t) == static_cast<int>(CopyRule::kGlobal));
      }
    }
  }
  SUBCASE("pure local copying yields constant sequences") {
    ToyTaskSpec spec;
    spec.p_global = 0.0;
    spec.p_local = 1.0;
    spec.p_noise = 0.0;
    spec.seed = 7;
    const CopyMixtureBatch batch = gen_copy_mixture(spec, 16);
    for (Index s = 0; s < 16; ++s) {
      for (Index t = 1; t < spec.seq_len; ++t) {
        CHECK(batch.tokens(s, t) == batch.tokens(s, 0));
      }
    }
  }
  SUBCASE("identical seeds and streams reproduce bitwise") {
    ToyTaskSpec spec;
    spec.seed = 42;
    const CopyMixtureBatch a = gen_copy_mixture(spec, 8, 3);
    const CopyMixtureBatch b = gen_copy_mixture(spec, 8, 3);
    CHECK(a.tokens == b.tokens);
    CHECK(a.rules == b.rules);
    const CopyMixtureBatch c = gen_copy_mixture(spec, 8, 4);
    CHECK(a.tokens != c.tokens);
  }
  SUBCASE("mixture probabilities must sum to one") {
    ToyTaskSpec bad;
    bad.p_noise = 0.5;
    CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  }
}

TEST_CASE("analytic gradients match finite differences on all variants") {
  for (const PositionalVariant variant :
       {PositionalVariant::kGoat, PositionalVariant::kLearnedAbsPe,
        PositionalVariant::kAlibiSlope}) {
    ToyModel<double> model(micro_config(variant, 11));
    model.randomize_all(17, 0.2);
    ToyTaskSpec task;
    task.vocab_size = 7;
    task.seq_len = 7;
    task.seed = 23;
    const CopyMixtureBatch batch = gen_copy_mixture(task, 2);
    CHECK(max_fd_error(model, batch.tokens) <= 1e-5);
  }
}

TEST_CASE("zero-init prior params give finite spectral gradients that match FD") {
  ToyModel<double> model(micro_config(PositionalVariant::kGoat, 3));
  // projections are random at init, prior weights exactly zero
  ToyTaskSpec task;
  task.vocab_size = 7;
  task.seq_len = 7;
  task.seed = 29;
  const CopyMixtureBatch batch = gen_copy_mixture(task, 2);
  VecXd grad(model.param_count());
  const double loss = model.loss_and_grad(batch.tokens, grad);
  CHECK(std::isfinite(loss));
  CHECK(grad.allFinite());
  CHECK(max_fd_error(model, batch.tokens) <= 1e-5);
}

TEST_CASE("degenerate one-token task sits at the optimum") {
  ToyModelConfig cfg = micro_config(PositionalVariant::kGoat, 5);
  cfg.vocab_size = 1;
  ToyModel<double> model(cfg);
  Eigen::MatrixXi tokens = Eigen::MatrixXi::Zero(2, 7);
  VecXd grad(model.param_count());
  const double loss = model.loss_and_grad(tokens, grad);
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(grad.norm() < 1e-8);
}

TEST_CASE("training is deterministic and loss decreases on the copy task") {
  ToyModelConfig cfg = micro_config(PositionalVariant::kGoat, 1);
  cfg.opt.batch_size = 4;
  cfg.opt.learning_rate = 3e-3;
  ToyTaskSpec task;
  task.vocab_size = 7;
  task.seq_len = 7;
  task.seed = 9;

  ToyModel<float> a(cfg);
  ToyModel<float> b(cfg);
  CHECK(a.params() == b.params());
  const TrainResult ra = train(a, task, 30);
  const TrainResult rb = train(b, task, 30);
  REQUIRE(ra.loss_trace.size() == 30);
  for (std::size_t i = 0; i < 30; ++i) CHECK(ra.loss_trace[i] == rb.loss_trace[i]);
  CHECK(a.params() == b.params());

  const double head = ra.loss_trace[0];
  const double tail = ra.loss_trace.back();
  CHECK(tail < head);
  for (const double v : ra.loss_trace) CHECK(std::isfinite(v));
}

TEST_CASE("divergence raises an error carrying the step index") {
  ToyModelConfig cfg = micro_config(PositionalVariant::kGoat, 2);
  cfg.opt.learning_rate = 1e12;
  cfg.opt.clip_norm = 1e12;
  cfg.opt.batch_size = 2;
  ToyTaskSpec task;
  task.vocab_size = 7;
  task.seq_len = 7;
  ToyModel<float> model(cfg);
  try {
    train(model, task, 50);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() >= 0);
    CHECK(e.step() < 50);
  }
}

TEST_CASE("prior decomposition of a zero-init model") {
  ToyModel<float> model(micro_config(PositionalVariant::kGoat, 4));
  const PriorDecomposition dec = extract_prior_decomposition(model, 1, 12);
  for (Index i = 0; i < 12; ++i) {
    CHECK(std::abs(dec.k_total_centered.row(i).mean()) <= 1e-12);
    for (Index j = 0; j <= i; ++j) {
      CHECK(dec.induced_prior(i, j) == doctest::Approx(1.0 / (i + 1)).epsilon(1e-12));
    }
    for (Index j = i + 1; j < 12; ++j) CHECK(dec.induced_prior(i, j) == 0.0);
  }
  CHECK_THROWS_AS(extract_prior_decomposition(model, 99, 12), std::invalid_argument);
}

TEST_CASE("induced prior ignores content projections and row shifts") {
  ToyModelConfig cfg = micro_config(PositionalVariant::kGoat, 6);
  ToyModel<float> model(cfg);
  model.randomize_all(31, 0.3);
  const PriorDecomposition before = extract_prior_decomposition(model, 2, 10);

  // block-diagonal isolation: content projections do not touch the prior
  for (Index l = 0; l < cfg.layers; ++l) {
    for (Index h = 0; h < cfg.heads; ++h) {
      const std::string hp = "l" + std::to_string(l) + ".h" + std::to_string(h) + ".";
      model.param(hp + "wq").setZero();
      model.param(hp + "wk").setZero();
    }
  }
  const PriorDecomposition after = extract_prior_decomposition(model, 2, 10);
  CHECK((before.induced_prior - after.induced_prior).cwiseAbs().maxCoeff() == 0.0);
  CHECK((before.k_rel - after.k_rel).cwiseAbs().maxCoeff() == 0.0);
  CHECK((before.k_sink - after.k_sink).cwiseAbs().maxCoeff() == 0.0);

  // row shifts of the total log-prior leave the induced prior unchanged
  MatXd shifted = before.k_rel + before.k_sink;
  for (Index i = 0; i < 10; ++i) shifted.row(i).array() += 0.37 * (i - 4.0);
  const MatXd reshifted = masked_row_softmax<double>(std::move(shifted), true);
  CHECK((reshifted - before.induced_prior).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("checkpoint round trip preserves parameters and config") {
  ToyModelConfig cfg = micro_config(PositionalVariant::kGoat, 8);
  ToyModel<float> model(cfg);
  model.randomize_all(77, 0.1);
  const nlohmann::json doc = checkpoint_to_json(model);
  const ToyModel<float> loaded = checkpoint_from_json(doc);
  CHECK(loaded.config().layers == cfg.layers);
  CHECK(loaded.config().variant == cfg.variant);
  CHECK(loaded.param_count() == model.param_count());
  CHECK(loaded.params() == model.params());

  nlohmann::json broken = doc;
  broken["params"].erase("embed");
  CHECK_THROWS_AS(checkpoint_from_json(broken), std::invalid_argument);
}

TEST_CASE("evaluation at the training length matches the training distribution") {
  ToyModelConfig cfg = micro_config(PositionalVariant::kGoat, 10);
  cfg.opt.batch_size = 4;
  ToyTaskSpec task;
  task.vocab_size = 7;
  task.seq_len = 7;
  task.seed = 12;
  ToyModel<float> model(cfg);
  train(model, task, 40);
  const auto points = eval_extrapolation(model, task, {7, 7}, 32, 99);
  REQUIRE(points.size() == 2);
  CHECK(points[0].copy_accuracy == points[1].copy_accuracy);  // same draws, same model
  CHECK(points[0].cases > 0);
  const auto longer = eval_extrapolation(model, task, {14}, 8, 99);
  CHECK(longer[0].length == 14);
  CHECK(longer[0].cases > 0);
}

TEST_CASE("abs-PE variant runs past its table by clamping") {
  ToyModelConfig cfg = micro_config(PositionalVariant::kLearnedAbsPe, 13);
  ToyModel<float> model(cfg);
  Eigen::VectorXi tokens = Eigen::VectorXi::Zero(3 * cfg.seq_len);
  const MatX<float> logits = model.forward(tokens);
  CHECK(logits.rows() == 3 * cfg.seq_len);
  CHECK(logits.allFinite());
}

TEST_CASE("model validates its configuration") {
  ToyModelConfig cfg = micro_config(PositionalVariant::kGoat, 0);
  cfg.d_model = 24;  // heads * head_dim mismatch
  CHECK_THROWS_AS(ToyModel<float>{cfg}, std::invalid_argument);
  ToyModelConfig narrow = micro_config(PositionalVariant::kGoat, 0);
  narrow.modes = 3;  // pos dim 8 leaves no content lanes in head_dim 8
  CHECK_THROWS_AS(ToyModel<float>{narrow}, std::invalid_argument);
}
