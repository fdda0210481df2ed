#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace prefdiff {

struct VerifyResult {
    std::string name;
    double value = 0.0;
    std::string tolerance;
    bool pass = false;
};

// Exact-math and Monte Carlo checks runnable on a fresh checkout: the
// gradient identity of the log-sigmoid preference loss, the Jensen bound,
// order-statistics coverage, storage accounting, and finite-difference
// conformance of every loss. Deterministic given the seed.
std::vector<VerifyResult> run_verify_suite(std::uint64_t seed);

}  // namespace prefdiff
