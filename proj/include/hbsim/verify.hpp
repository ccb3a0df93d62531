// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Self-check of the functional attention kernel against dense references,
// runnable from the command line with --verify.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hbsim {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;

  friend bool operator==(const CheckResult&, const CheckResult&) = default;
};

struct VerifyConfig {
  std::uint64_t seed = 0;
  int head_dim = 64;
  // Sequence length of the toy traces.
  int seq_len = 4096;
  int trials = 8;
  double tolerance = 1e-6;
};

// Online-softmax splits, metadata bounds, dense degeneration, streaming mask
// coverage and eviction replay. Deterministic for a given config.
std::vector<CheckResult> verify_kernel(const VerifyConfig& cfg);

bool all_passed(const std::vector<CheckResult>& checks);

}  // namespace hbsim
