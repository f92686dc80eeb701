#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace rpalab {

struct SuiteReport {
  std::string name;
  bool pass = false;
  double measured = 0.0;   // worst observed error, or the statistic being bounded
  double tolerance = 0.0;  // pass threshold for `measured`
  double seconds = 0.0;
  std::string detail;

  nlohmann::json to_json() const;
};

/// Closed-form KL-regularized attention against a projected Newton solve of the same
/// objective, over `cases` random (scores, prior) pairs of length 2..6.
SuiteReport verify_klmap(std::size_t cases = 1000, std::uint64_t seed = 1);
/// Row and column sums after 50 Sinkhorn rounds on random positive 8x8 matrices.
SuiteReport verify_sinkhorn(std::size_t cases = 100, std::uint64_t seed = 2);
/// Row sums of A A^T equal 1/(NK) for A with rows summing to 1/N and columns to 1/K.
SuiteReport verify_rowsum(std::size_t cases = 100, std::uint64_t seed = 3);
/// Attention outputs are bit-identical when each score row is shifted by a constant.
SuiteReport verify_shift(std::size_t cases = 100, std::uint64_t seed = 4);
/// Every parameter gradient of a tiny full model against central differences.
SuiteReport verify_grad(std::uint64_t seed = 5);
/// Monte Carlo expected gain of a noisy-sign step against its analytic lower bound.
SuiteReport verify_signgain(std::uint64_t seed = 6);
/// Projected noisy ascent with 0.5/t steps lands within 0.05 of the optimum in >= 95 of 100 seeds.
SuiteReport verify_ascent(std::uint64_t seed = 7);
/// Dominant context takes over the mixture; equal utilities leave it still.
SuiteReport verify_nash(std::uint64_t seed = 8);

const std::vector<std::string>& verify_suites();
/// Runs one named suite, or every suite for "all". Unknown names throw std::invalid_argument.
std::vector<SuiteReport> run_verify(const std::string& suite);

}  // namespace rpalab
