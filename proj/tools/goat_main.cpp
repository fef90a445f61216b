// goat: verification suites, toy training, prior dumps, micro-benchmarks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "goat/bench.hpp"
#include "goat/matrix_io.hpp"
#include "goat/serialize.hpp"
#include "goat/toy_lm.hpp"
#include "goat/verify.hpp"

namespace fs = std::filesystem;
using goat::Index;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

// Expands `key = value` lines (# comments allowed) from --config FILE into
// argv entries. Keys already given as flags are skipped, so flags override
// the file; unknown keys surface as parse errors.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    }
  }
  if (config_path.empty()) return args;
  std::ifstream in(config_path);
  if (!in) throw std::runtime_error("cannot open config file: " + config_path);

  std::vector<std::string> expanded = args;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key = value");
    }
    const std::string flag = "--" + key;
    bool given_on_cli = false;
    for (const std::string& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) given_on_cli = true;
    }
    if (given_on_cli) continue;
    expanded.push_back(flag);
    std::size_t start = 0;
    while (start <= value.size()) {
      const auto comma = value.find(',', start);
      const std::string piece =
          trim(value.substr(start, comma == std::string::npos ? std::string::npos
                                                              : comma - start));
      if (!piece.empty()) expanded.push_back(piece);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  return expanded;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

struct VerifyOptions {
  std::string suite = "all";
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

int cmd_verify(const VerifyOptions& opt) {
  std::vector<goat::CheckResult> results;
  if (opt.suite == "all") {
    results = goat::run_all_verify_suites(opt.seed);
  } else {
    try {
      results = goat::run_verify_suite(opt.suite, opt.seed);
    } catch (const std::invalid_argument& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitConfig;
    }
  }
  long long failures = 0;
  for (const goat::CheckResult& r : results) {
    failures += r.failures;
    std::printf("%-40s cases=%-8lld failures=%-6lld max_violation=%.3e\n",
                r.check_name.c_str(), r.cases, r.failures, r.max_violation);
  }
  ensure_dir(opt.out_dir);
  const std::string report_path = join_path(opt.out_dir, "verify_report.json");
  std::ofstream out(report_path);
  out << goat::verify_report_to_json(results).dump(1) << "\n";
  std::printf("report: %s\n", report_path.c_str());
  return failures == 0 ? kExitOk : kExitFailure;
}

struct TrainOptions {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  Index steps = 3000;
  std::string variant = "goat";
  Index layers = 2;
  Index heads = 2;
  Index d_model = 64;
  Index head_dim = 32;
  Index modes = 4;
  Index vocab = 32;
  Index seq_len = 64;
  double p_global = 0.45;
  double p_local = 0.45;
  double p_noise = 0.10;
  double learning_rate = 3e-3;
  Index batch_size = 8;
  std::vector<Index> eval_lengths;
  Index eval_sequences = 32;
};

int cmd_train_toy(const TrainOptions& opt) {
  goat::ToyModelConfig cfg;
  cfg.layers = opt.layers;
  cfg.heads = opt.heads;
  cfg.d_model = opt.d_model;
  cfg.head_dim = opt.head_dim;
  cfg.modes = opt.modes;
  cfg.vocab_size = opt.vocab;
  cfg.seq_len = opt.seq_len;
  cfg.opt.learning_rate = opt.learning_rate;
  cfg.opt.batch_size = opt.batch_size;
  cfg.init_seed = opt.seed;
  if (opt.variant == "goat") {
    cfg.variant = goat::PositionalVariant::kGoat;
  } else if (opt.variant == "abs_pe") {
    cfg.variant = goat::PositionalVariant::kLearnedAbsPe;
  } else if (opt.variant == "alibi") {
    cfg.variant = goat::PositionalVariant::kAlibiSlope;
  } else {
    std::fprintf(stderr, "error: unknown variant %s\n", opt.variant.c_str());
    return kExitConfig;
  }

  goat::ToyTaskSpec task;
  task.vocab_size = opt.vocab;
  task.seq_len = opt.seq_len;
  task.p_global = opt.p_global;
  task.p_local = opt.p_local;
  task.p_noise = opt.p_noise;
  task.seed = opt.seed;

  goat::ToyModel<float> model(cfg);
  goat::TrainResult result;
  try {
    result = goat::train(model, task, opt.steps);
  } catch (const goat::DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }

  ensure_dir(opt.out_dir);
  goat::save_checkpoint(model, join_path(opt.out_dir, "checkpoint.json"));
  {
    std::ofstream loss_csv(join_path(opt.out_dir, "loss.csv"));
    loss_csv << "step,loss\n";
    char line[64];
    for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
      std::snprintf(line, sizeof(line), "%zu,%.9g\n", i, result.loss_trace[i]);
      loss_csv << line;
    }
  }
  std::vector<Index> lengths = opt.eval_lengths;
  if (lengths.empty()) lengths = {opt.seq_len, 2 * opt.seq_len, 4 * opt.seq_len};
  const auto points =
      goat::eval_extrapolation(model, task, lengths, opt.eval_sequences, opt.seed + 1);
  {
    std::ofstream eval_csv(join_path(opt.out_dir, "eval.csv"));
    eval_csv << "length,copy_accuracy,cases\n";
    char line[96];
    for (const goat::ExtrapolationPoint& p : points) {
      std::snprintf(line, sizeof(line), "%lld,%.17g,%lld\n",
                    static_cast<long long>(p.length), p.copy_accuracy,
                    static_cast<long long>(p.cases));
      eval_csv << line;
    }
  }
  std::printf("final loss: %.6f\n", result.loss_trace.empty() ? 0.0 : result.loss_trace.back());
  for (const goat::ExtrapolationPoint& p : points) {
    std::printf("copy accuracy @ L=%lld: %.4f (%lld cases)\n",
                static_cast<long long>(p.length), p.copy_accuracy,
                static_cast<long long>(p.cases));
  }
  std::printf("wrote %s, %s, %s\n", join_path(opt.out_dir, "checkpoint.json").c_str(),
              join_path(opt.out_dir, "loss.csv").c_str(),
              join_path(opt.out_dir, "eval.csv").c_str());
  return kExitOk;
}

struct DumpOptions {
  std::string checkpoint;
  Index head = 0;
  Index length = 0;  // defaults to the training context
  std::string out_dir = ".";
};

int cmd_dump_prior(const DumpOptions& opt) {
  if (!fs::exists(opt.checkpoint)) {
    std::fprintf(stderr, "error: checkpoint not found: %s\n", opt.checkpoint.c_str());
    return kExitConfig;
  }
  goat::ToyModel<float> model = goat::load_checkpoint(opt.checkpoint);
  const Index length = opt.length > 0 ? opt.length : model.config().seq_len;
  const goat::PriorDecomposition dec =
      goat::extract_prior_decomposition(model, opt.head, length);
  ensure_dir(opt.out_dir);
  const std::pair<const char*, const goat::MatXd*> panels[] = {
      {"k_sink", &dec.k_sink},
      {"k_rel", &dec.k_rel},
      {"k_centered", &dec.k_total_centered},
      {"induced_prior", &dec.induced_prior},
  };
  for (const auto& [name, matrix] : panels) {
    goat::write_matrix_csv(*matrix, join_path(opt.out_dir, std::string(name) + ".csv"));
    goat::write_pgm(*matrix, join_path(opt.out_dir, std::string(name) + ".pgm"));
  }
  {
    const Index layer = opt.head / model.config().heads;
    const Index h = opt.head % model.config().heads;
    const goat::SpectralPriorParams<float> sp = model.spectral_at(layer, h);
    const goat::SinkBiasParams<float> sk = model.sink_at(layer, h);
    goat::SpectralPriorParams<double> spectral;
    spectral.frequencies = sp.frequencies.cast<double>();
    spectral.alpha = sp.alpha.cast<double>();
    spectral.beta = sp.beta.cast<double>();
    goat::SinkBiasParams<double> sink;
    sink.slope = sk.slope;
    sink.mlp_w1 = sk.mlp_w1.cast<double>();
    sink.mlp_b1 = sk.mlp_b1.cast<double>();
    sink.mlp_w2 = sk.mlp_w2.cast<double>();
    sink.mlp_b2 = sk.mlp_b2;
    sink.feature_count = sk.feature_count;
    sink.l_ref = sk.l_ref;
    std::ofstream out(join_path(opt.out_dir, "prior_params.json"));
    out << goat::prior_params_to_json(spectral, sink).dump(1) << "\n";
  }
  std::printf("wrote k_sink, k_rel, k_centered, induced_prior (.csv/.pgm) and "
              "prior_params.json under %s\n",
              opt.out_dir.c_str());
  return kExitOk;
}

struct BenchOptions {
  std::vector<Index> lengths = {128, 256, 512, 1024, 2048};
  Index head_dim = 32;
  Index modes = 4;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

int cmd_bench(const BenchOptions& opt) {
  const std::vector<goat::BenchRow> rows =
      goat::run_bench(opt.lengths, opt.head_dim, opt.modes, opt.seed);
  const std::string csv = goat::bench_to_csv(rows);
  std::fputs(csv.c_str(), stdout);
  ensure_dir(opt.out_dir);
  std::ofstream out(join_path(opt.out_dir, "bench.csv"));
  out << csv;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KL-prior entropic-optimal-transport attention toolkit"};
  app.require_subcommand(1);
  std::string config_path;  // consumed by expand_config before parsing

  VerifyOptions verify_opt;
  CLI::App* verify = app.add_subcommand("verify", "run verification suites");
  verify->add_option("--suite", verify_opt.suite, "suite name (default: all)");
  verify->add_option("--seed", verify_opt.seed, "RNG seed");
  verify->add_option("--out", verify_opt.out_dir, "output directory");
  verify->add_option("--config", config_path, "key = value config file");

  TrainOptions train_opt;
  CLI::App* train = app.add_subcommand("train-toy", "train the toy copy-mixture LM");
  train->add_option("--seed", train_opt.seed, "RNG seed");
  train->add_option("--out", train_opt.out_dir, "output directory");
  train->add_option("--steps", train_opt.steps, "training steps");
  train->add_option("--variant", train_opt.variant, "goat | abs_pe | alibi");
  train->add_option("--layers", train_opt.layers, "transformer layers");
  train->add_option("--heads", train_opt.heads, "attention heads");
  train->add_option("--d-model", train_opt.d_model, "model width");
  train->add_option("--head-dim", train_opt.head_dim, "per-head dimension");
  train->add_option("--modes", train_opt.modes, "spectral frequencies per head");
  train->add_option("--vocab", train_opt.vocab, "vocabulary size");
  train->add_option("--seq-len", train_opt.seq_len, "training context length");
  train->add_option("--p-global", train_opt.p_global, "P(copy token 0)");
  train->add_option("--p-local", train_opt.p_local, "P(copy previous token)");
  train->add_option("--p-noise", train_opt.p_noise, "P(uniform noise)");
  train->add_option("--lr", train_opt.learning_rate, "learning rate");
  train->add_option("--batch", train_opt.batch_size, "batch size");
  train->add_option("--eval-lengths", train_opt.eval_lengths,
                    "evaluation lengths (default L, 2L, 4L)");
  train->add_option("--eval-sequences", train_opt.eval_sequences,
                    "sequences per evaluation length");
  train->add_option("--config", config_path, "key = value config file");

  DumpOptions dump_opt;
  CLI::App* dump = app.add_subcommand("dump-prior", "dump a head's prior decomposition");
  dump->add_option("--checkpoint", dump_opt.checkpoint, "checkpoint path")->required();
  dump->add_option("--head", dump_opt.head, "flattened head index (layer*heads + h)");
  dump->add_option("--length", dump_opt.length, "grid size (default: training context)");
  dump->add_option("--out", dump_opt.out_dir, "output directory");
  dump->add_option("--config", config_path, "key = value config file");

  BenchOptions bench_opt;
  CLI::App* bench = app.add_subcommand("bench", "composite vs dense-bias micro-benchmark");
  bench->add_option("--lengths", bench_opt.lengths, "sequence lengths");
  bench->add_option("--head-dim", bench_opt.head_dim, "head dimension");
  bench->add_option("--modes", bench_opt.modes, "spectral frequencies");
  bench->add_option("--seed", bench_opt.seed, "RNG seed");
  bench->add_option("--out", bench_opt.out_dir, "output directory");
  bench->add_option("--config", config_path, "key = value config file");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(args);
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }

  try {
    if (verify->parsed()) return cmd_verify(verify_opt);
    if (train->parsed()) return cmd_train_toy(train_opt);
    if (dump->parsed()) return cmd_dump_prior(dump_opt);
    if (bench->parsed()) return cmd_bench(bench_opt);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
