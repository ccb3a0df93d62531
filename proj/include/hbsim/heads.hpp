// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace hbsim {

enum class HeadKind { Streaming, Retrieval };

std::string_view to_string(HeadKind kind);

// Gating value of one KV head, as exported by an offline head-identification run.
struct AlphaEntry {
  int layer = 0;
  int head = 0;
  double alpha = 1.0;

  friend bool operator==(const AlphaEntry&, const AlphaEntry&) = default;
};

struct HeadProfile {
  int layer = 0;
  int head = 0;
  HeadKind kind = HeadKind::Retrieval;
  double alpha = 1.0;

  friend bool operator==(const HeadProfile&, const HeadProfile&) = default;
};

// Retrieval iff alpha >= threshold. Throws std::invalid_argument for alphas
// outside [0, 1].
std::vector<HeadProfile> classify_heads(std::span<const AlphaEntry> alphas, double threshold);

// Threshold that leaves exactly floor(fraction * n) heads below it when the
// alphas are distinct. fraction = 0.5 gives the usual median.
double quantile_threshold(std::span<const AlphaEntry> alphas, double fraction);
double median_threshold(std::span<const AlphaEntry> alphas);

}  // namespace hbsim
