// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.
#include <cstdarg>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "goat/bench.hpp"
#include "goat/eot.hpp"
#include "goat/theory.hpp"
#include "goat/toy_lm.hpp"
#include "goat/verify.hpp"

using namespace goat;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

char buffer[512];

std::string fmt(const char* format, ...) {
  va_list args;
  va_start(args, format);
  std::vsnprintf(buffer, sizeof(buffer), format, args);
  va_end(args);
  return buffer;
}

bool suites_clean(const std::vector<CheckResult>& results, double* worst = nullptr) {
  bool ok = true;
  for (const CheckResult& r : results) {
    if (r.failures != 0) ok = false;
    if (worst != nullptr) *worst = std::max(*worst, r.max_violation);
  }
  return ok;
}

// ---------------------------------------------------------------------------

Outcome criterion_eot_optimality() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  const bool ok = suites_clean(run_verify_suite("optimality", 2024), &worst);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {ok && secs < 10.0,
          fmt("100 problems, oracle L-inf + 1000 probes each, worst=%.2e, %.1fs (limit 10s)",
              worst, secs)};
}

Outcome criterion_factorization() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  const bool ok = suites_clean(run_verify_suite("factorization", 2024), &worst);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {ok && secs < 5.0,
          fmt("exhaustive 256x256, R in {1,4,8}, tol 1e-10, worst=%.2e, %.1fs (limit 5s)",
              worst, secs)};
}

Outcome criterion_scaling_trick() {
  double worst = 0.0;
  bool ok = suites_clean(run_verify_suite("scaling", 2024), &worst);
  ok = suites_clean(run_verify_suite("two_path", 2024), &worst) && ok;
  return {ok, fmt("identity + composite-vs-dense weights, tol 1e-10, worst=%.2e", worst)};
}

Outcome criterion_collapse() {
  double worst = 0.0;
  bool ok = suites_clean(run_verify_suite("collapse", 2024), &worst);
  // omega = 0: posterior equals the prior to 1e-15
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_eq = 0.0;
  for (int c = 0; c < 200; ++c) {
    const Index L = 2 + (c * 7) % 255;
    VecXd p(L);
    for (Index i = 0; i < L; ++i) p(i) = unit(rng) + 0.01;
    const ProbVector prior(p / p.sum());
    const ProbVector posterior =
        kl_prior_attention(TransportProblem(VecXd::Constant(L, 1.7), prior, 1.0));
    worst_eq = std::max(worst_eq,
                        (posterior.values() - prior.values()).cwiseAbs().maxCoeff());
  }
  ok = ok && worst_eq <= 1e-15;
  return {ok, fmt("10000 random instances, 0 violations; low-signal max distance %.1e; omega=0 L-inf=%.1e <= 1e-15",
                  worst, worst_eq)};
}

Outcome criterion_sensitivity() {
  double worst = 0.0;
  const bool ok = suites_clean(run_verify_suite("sensitivity", 2024), &worst);
  return {ok, fmt("uniform exact, delta in {0,1,ln L,30}, L in {2..1024}, equality to 1e-12, worst=%.2e",
                  worst)};
}

Outcome criterion_maxent() {
  double worst = 0.0;
  bool ok = suites_clean(run_verify_suite("maxent", 2024), &worst);
  const RecencyPrior prior = maxent_recency(2, 0.25);
  const double lambda_err = std::abs(prior.lambda - std::log(3.0));
  ok = ok && lambda_err <= 1e-10 && std::abs(prior.mean_lag - 0.25) <= 1e-10;
  return {ok, fmt("mean within 1e-10; L=2 mu=0.25 lambda err=%.1e; entropy beats 1000 probes/case",
                  lambda_err)};
}

Outcome criterion_alibi() {
  double worst = 0.0;
  const bool ok = suites_clean(run_verify_suite("alibi", 2024), &worst);
  return {ok, fmt("1000 random rows, max diff %.2e <= 1e-14", worst)};
}

Outcome criterion_rank_one() {
  double worst = 0.0;
  const bool ok = suites_clean(run_verify_suite("rank_one", 2024), &worst);
  return {ok, fmt("100 broadcast matrices sigma2/sigma1 <= 1e-9 (worst %.1e); rank-2 controls flagged",
                  worst)};
}

Outcome criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();
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
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.init_seed = seed;
    ToyModel<double> model(cfg);
    model.randomize_all(seed * 131, 0.2);
    ToyTaskSpec task;
    task.vocab_size = 7;
    task.seq_len = 7;
    task.seed = seed;
    const CopyMixtureBatch batch = gen_copy_mixture(task, 2);
    VecXd grad(model.param_count());
    model.loss_and_grad(batch.tokens, grad);
    const double h = 1e-4;
    for (Index i = 0; i < model.param_count(); ++i) {
      const double saved = model.params()(i);
      model.params()(i) = saved + h;
      const double up = model.loss(batch.tokens);
      model.params()(i) = saved - h;
      const double down = model.loss(batch.tokens);
      model.params()(i) = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = std::abs(numeric - grad(i)) /
                         std::max({1.0, std::abs(numeric), std::abs(grad(i))});
      worst = std::max(worst, rel);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= 1e-5 && secs < 120.0,
          fmt("5 seeds, every parameter vs central FD, max rel err %.2e <= 1e-5, %.1fs (limit 120s)",
              worst, secs)};
}

Outcome criterion_fig1_structure() {
  const auto start = std::chrono::steady_clock::now();
  ToyModelConfig cfg;  // desk-scale configuration
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.d_model = 64;
  cfg.head_dim = 32;
  cfg.modes = 4;
  cfg.vocab_size = 32;
  cfg.seq_len = 64;
  cfg.opt.batch_size = 8;
  cfg.opt.learning_rate = 3e-3;
  cfg.init_seed = 1;
  ToyTaskSpec task;
  task.vocab_size = 32;
  task.seq_len = 64;
  task.p_global = 0.45;
  task.p_local = 0.45;
  task.p_noise = 0.10;
  task.seed = 1;
  ToyModel<float> model(cfg);
  train(model, task, 3000);

  double best_frac = 0.0;
  Index best_head = -1;
  bool pass = false;
  for (Index head = 0; head < cfg.layers * cfg.heads; ++head) {
    const PriorDecomposition dec = extract_prior_decomposition(model, head, cfg.seq_len);
    Index good = 0, total = 0;
    for (Index i = 8; i < cfg.seq_len; ++i) {
      Index argmax = 0;
      dec.induced_prior.row(i).head(i + 1).maxCoeff(&argmax);
      total += 1;
      if (argmax == 0 || argmax == i - 1) good += 1;
    }
    const double frac = static_cast<double>(good) / static_cast<double>(total);
    Index u_argmax = 0;
    dec.k_sink.row(0).maxCoeff(&u_argmax);
    const bool head_ok = frac >= 0.9 && u_argmax == 0;
    if (head_ok && frac > best_frac) {
      best_frac = frac;
      best_head = head;
      pass = true;
    } else if (!pass && frac > best_frac) {
      best_frac = frac;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {pass && secs < 600.0,
          fmt("3000 steps; head %lld: argmax in {0,i-1} for %.0f%% of rows i>=8 (need 90%%), u max at j=0, %.0fs (limit 600s)",
              static_cast<long long>(best_head), best_frac * 100.0, secs)};
}

Outcome criterion_extrapolation() {
  // Faithful paired comparison; see the design notes on the second clause.
  const Index train_len = 32;
  const std::vector<Index> lengths = {train_len, 4 * train_len};
  bool retention_ok = true;
  bool paired_ok = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ToyModelConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.d_model = 64;
    cfg.head_dim = 32;
    cfg.modes = 4;
    cfg.vocab_size = 32;
    cfg.seq_len = train_len;
    cfg.opt.batch_size = 8;
    cfg.init_seed = seed;
    ToyTaskSpec task;
    task.vocab_size = 32;
    task.seq_len = train_len;
    task.seed = seed;

    cfg.variant = PositionalVariant::kGoat;
    ToyModel<float> goat_model(cfg);
    train(goat_model, task, 800);
    const auto goat_points = eval_extrapolation(goat_model, task, lengths, 128, 7777);

    cfg.variant = PositionalVariant::kLearnedAbsPe;
    ToyModel<float> pe_model(cfg);
    train(pe_model, task, 800);
    const auto pe_points = eval_extrapolation(pe_model, task, lengths, 128, 7777);

    const double goat_ret = goat_points[1].copy_accuracy / goat_points[0].copy_accuracy;
    const double goat_deg = goat_points[0].copy_accuracy - goat_points[1].copy_accuracy;
    const double pe_deg = pe_points[0].copy_accuracy - pe_points[1].copy_accuracy;
    if (goat_ret < 0.9) retention_ok = false;
    if (!(pe_deg > goat_deg)) paired_ok = false;
    detail += fmt("[seed %llu: goat %.3f->%.3f, abs_pe %.3f->%.3f] ",
                  static_cast<unsigned long long>(seed), goat_points[0].copy_accuracy,
                  goat_points[1].copy_accuracy, pe_points[0].copy_accuracy,
                  pe_points[1].copy_accuracy);
  }
  std::string verdict = retention_ok ? "retention >=0.9x: yes; " : "retention >=0.9x: NO; ";
  verdict += paired_ok ? "baseline degrades strictly more on all seeds: yes"
                       : "baseline degrades strictly more on all seeds: NO (task is "
                         "position-free at desk scale; see README notes)";
  return {retention_ok && paired_ok, verdict + " " + detail};
}

Outcome criterion_memory_scaling() {
  const std::vector<Index> lengths = {256, 512, 1024, 4096};
  const Index head_dim = 32;
  const Index modes = 4;
  const Index pos_dim = 2 * modes + 2;
  const auto rows = run_bench(lengths, head_dim, modes, 2024);
  auto bytes_of = [&](Index length, const std::string& path) -> double {
    for (const BenchRow& r : rows) {
      if (r.length == length && r.path == path) return static_cast<double>(r.bytes);
    }
    return -1.0;
  };
  bool ok = true;
  // doubling L quadruples the dense-bias allocation (+-1%)
  for (const Index length : {Index(256), Index(512)}) {
    const double ratio = bytes_of(2 * length, "dense_bias") / bytes_of(length, "dense_bias");
    if (std::abs(ratio - 4.0) > 0.04) ok = false;
  }
  // composite extra allocation is exactly 2 * L * d_p doubles
  for (const Index length : lengths) {
    if (bytes_of(length, "composite") !=
        static_cast<double>(2 * length * pos_dim * static_cast<Index>(sizeof(double)))) {
      ok = false;
    }
  }
  const double big_ratio = bytes_of(4096, "dense_bias") / bytes_of(4096, "composite");
  const double expected = 4096.0 / (2.0 * static_cast<double>(pos_dim));
  if (!(big_ratio >= expected / 2.0 && big_ratio <= expected * 2.0)) ok = false;
  return {ok, fmt("dense O(L^2): 2x L -> 4.00x bytes; composite extra = 2 L d_p; "
                  "ratio@4096 = %.0f (expected %.0f within 2x)",
                  big_ratio, expected)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "closed-form EOT optimality", criterion_eot_optimality},
      {2, "spectral factorization identity", criterion_factorization},
      {3, "scaling-trick identity", criterion_scaling_trick},
      {4, "collapse to prior", criterion_collapse},
      {5, "sensitivity bounds", criterion_sensitivity},
      {6, "max-entropy recency", criterion_maxent},
      {7, "lag/key bias equivalence", criterion_alibi},
      {8, "rank-one sinks", criterion_rank_one},
      {9, "gradient correctness", criterion_gradients},
      {10, "copy-mixture prior recovery", criterion_fig1_structure},
      {11, "length extrapolation", criterion_extrapolation},
      {12, "memory scaling", criterion_memory_scaling},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const Outcome outcome = c.run();
    if (!outcome.pass) failures += 1;
    std::printf("[%s] %2d. %s — %s\n", outcome.pass ? "PASS" : "FAIL", c.id, c.name,
                outcome.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/12 criteria passed\n", 12 - failures);
  return failures == 0 ? 0 : 1;
}
