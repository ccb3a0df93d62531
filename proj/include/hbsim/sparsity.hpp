// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>

namespace hbsim {

enum class RelevanceMode {
  // sum_d max(q[d] * tau_min[d], q[d] * tau_max[d]); an upper bound on q.k.
  Elementwise,
  // max(q . tau_min, q . tau_max); cheaper but not a bound.
  Scalar,
};

enum class ImportanceMode {
  // Softmax probability mass that landed on the page this step.
  AttentionMass,
  // The page's relevance score, clamped at zero.
  Relevance,
};

// Hybrid sparse attention knobs. Defaults keep the retrieval-head selection
// length at 4096 tokens: top_k * page_size + n_sink + n_local == 4096.
struct SparsityConfig {
  static constexpr std::int64_t kUnlimitedPages = std::numeric_limits<std::int64_t>::max();

  int page_size = 32;
  int n_sink = 64;
  int n_local = 1536;
  // 2 GiB per bank shared by 32 layers with one retrieval head per bank and
  // layer at 256 B/token leaves 8192 pages of 32 tokens.
  std::int64_t budget_pages = 8192;
  int top_k = 78;
  int share_stride = 4;
  // Local-window tokens kept on the logic die in addition to the sinks.
  int logic_resident_local = 64;
  RelevanceMode relevance = RelevanceMode::Elementwise;
  ImportanceMode importance = ImportanceMode::AttentionMass;

  std::int64_t selection_length() const {
    return static_cast<std::int64_t>(top_k) * page_size + n_sink + n_local;
  }
  int logic_resident_tokens() const { return n_sink + logic_resident_local; }

  // Throws ConfigError on negative counts, zero page size/stride/budget.
  void validate() const;

  friend bool operator==(const SparsityConfig&, const SparsityConfig&) = default;
};

}  // namespace hbsim
