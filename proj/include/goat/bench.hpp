#pragma once

// Micro-benchmark of the composite path against the dense-bias path:
// wall time per token and instrumented matrix payload bytes, to exhibit
// O(L d_p) vs O(L^2) positional allocation growth.

#include <cstdint>
#include <string>
#include <vector>

#include "goat/types.hpp"

namespace goat {

struct BenchRow {
  Index length;
  std::string path;       // "composite" or "dense_bias"
  std::uint64_t bytes;    // positional/bias payload allocated by the path
  double ns_per_token;
};

// bytes counts what each path allocates on top of the shared content
// tensors: the L x L bias matrix for the dense path, the 2 * L * d_p
// positional lanes for the composite path.
std::vector<BenchRow> run_bench(const std::vector<Index>& lengths, Index head_dim,
                                Index modes, std::uint64_t seed);

std::string bench_to_csv(const std::vector<BenchRow>& rows);

}  // namespace goat
