#include "goat/bench.hpp"

#include <chrono>
#include <cstdio>
#include <numbers>
#include <random>

#include "goat/attention.hpp"
#include "goat/prior.hpp"

namespace goat {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ns(Clock::time_point start) {
  return std::chrono::duration<double, std::nano>(Clock::now() - start).count();
}

std::uint64_t payload_bytes(Index rows, Index cols) {
  return static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) *
         sizeof(double);
}

}  // namespace

std::vector<BenchRow> run_bench(const std::vector<Index>& lengths, Index head_dim,
                                Index modes, std::uint64_t seed) {
  GoatHeadConfig cfg{head_dim, modes, true};
  validate(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SpectralPriorParams<double> spectral = SpectralPriorParams<double>::zeros(
      modes > 0 ? geometric_frequencies<double>(modes, 2.0 * std::numbers::pi / 4096.0,
                                                std::numbers::pi)
                : VecXd());
  for (Index r = 0; r < modes; ++r) {
    spectral.alpha(r) = 0.3 * gauss(rng);
    spectral.beta(r) = 0.3 * gauss(rng);
  }
  SinkBiasParams<double> sink = SinkBiasParams<double>::zeros(16, 8, 1024);
  sink.slope = gauss(rng);
  for (Index i = 0; i < sink.mlp_w1.size(); ++i) sink.mlp_w1.data()[i] = 0.4 * gauss(rng);
  for (Index i = 0; i < sink.mlp_w2.size(); ++i) sink.mlp_w2(i) = 0.2 * gauss(rng);

  std::vector<BenchRow> rows;
  for (const Index length : lengths) {
    const Index dc = cfg.content_dim();
    MatXd q_c(length, dc), k_c(length, dc), values(length, head_dim);
    for (Index i = 0; i < q_c.size(); ++i) q_c.data()[i] = gauss(rng);
    for (Index i = 0; i < k_c.size(); ++i) k_c.data()[i] = gauss(rng);
    for (Index i = 0; i < values.size(); ++i) values.data()[i] = gauss(rng);

    {
      const auto start = Clock::now();
      AttentionBatch<double> batch;
      batch.queries = compose_query_matrix(q_c, spectral, cfg);
      batch.keys = compose_key_matrix(k_c, spectral, sink, cfg);
      batch.values = values;
      batch.causal = true;
      const AttentionResult<double> result = sdpa(batch);
      const double ns = elapsed_ns(start);
      (void)result;
      // positional lanes added to q' and k' beyond the content blocks
      const std::uint64_t extra = 2 * payload_bytes(length, cfg.pos_dim());
      rows.push_back(
          {length, "composite", extra, ns / static_cast<double>(length)});
    }
    {
      const auto start = Clock::now();
      const MatXd bias = log_prior_matrix(length, spectral, sink);
      const AttentionResult<double> result =
          explicit_bias_attention(q_c, k_c, values, bias, true);
      const double ns = elapsed_ns(start);
      (void)result;
      rows.push_back({length, "dense_bias", payload_bytes(length, length),
                      ns / static_cast<double>(length)});
    }
  }
  return rows;
}

std::string bench_to_csv(const std::vector<BenchRow>& rows) {
  std::string out = "L,path,bytes,ns_per_token\n";
  char line[160];
  for (const BenchRow& r : rows) {
    std::snprintf(line, sizeof(line), "%lld,%s,%llu,%.1f\n",
                  static_cast<long long>(r.length), r.path.c_str(),
                  static_cast<unsigned long long>(r.bytes), r.ns_per_token);
    out += line;
  }
  return out;
}

}  // namespace goat
