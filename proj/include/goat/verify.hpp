#pragma once

// Property-sweep suites behind the `verify` command: each suite runs a
// batch of randomized or exhaustive checks and reports
// {check_name, cases, failures, max_violation}.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace goat {

struct CheckResult {
  std::string check_name;
  long long cases = 0;
  long long failures = 0;
  double max_violation = 0.0;
};

// Suite names accepted by run_suite: softmax, optimality, convexity,
// factorization, scaling, two_path, collapse, sensitivity, maxent, alibi,
// rank_one.
std::vector<std::string> verify_suite_names();

// Throws std::invalid_argument for an unknown suite name.
std::vector<CheckResult> run_verify_suite(const std::string& suite, std::uint64_t seed);

std::vector<CheckResult> run_all_verify_suites(std::uint64_t seed);

nlohmann::json verify_report_to_json(const std::vector<CheckResult>& results);

// Worker-thread cap from GOAT_THREADS (>= 1); hardware concurrency otherwise.
int max_worker_threads();

}  // namespace goat
