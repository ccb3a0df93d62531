// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "hbsim/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "hbsim/error.hpp"
#include "hbsim/sparsity.hpp"

namespace hbsim {

std::string_view to_string(HeadKind kind) {
  return kind == HeadKind::Streaming ? "streaming" : "retrieval";
}

namespace {

void check_alpha(const AlphaEntry& e) {
  if (!(e.alpha >= 0.0 && e.alpha <= 1.0))
    throw std::invalid_argument("alpha of layer " + std::to_string(e.layer) + " head " +
                                std::to_string(e.head) + " is outside [0, 1]");
}

}  // namespace

std::vector<HeadProfile> classify_heads(std::span<const AlphaEntry> alphas, double threshold) {
  std::vector<HeadProfile> out;
  out.reserve(alphas.size());
  for (const auto& e : alphas) {
    check_alpha(e);
    out.push_back({e.layer, e.head, e.alpha >= threshold ? HeadKind::Retrieval : HeadKind::Streaming,
                   e.alpha});
  }
  return out;
}

double quantile_threshold(std::span<const AlphaEntry> alphas, double fraction) {
  if (alphas.empty()) throw std::invalid_argument("quantile_threshold: no heads");
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument("quantile_threshold: fraction outside [0, 1]");
  std::vector<double> sorted;
  sorted.reserve(alphas.size());
  for (const auto& e : alphas) {
    check_alpha(e);
    sorted.push_back(e.alpha);
  }
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  const auto below = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  if (below == 0) return sorted.front();
  if (below >= n) return std::nextafter(sorted.back(), std::numeric_limits<double>::infinity());
  return 0.5 * (sorted[below - 1] + sorted[below]);
}

double median_threshold(std::span<const AlphaEntry> alphas) {
  return quantile_threshold(alphas, 0.5);
}

void SparsityConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("sparsity config: " + what);
  };
  require(page_size > 0, "page_size must be positive");
  require(n_sink >= 0, "n_sink must be non-negative");
  require(n_local >= 0, "n_local must be non-negative");
  require(budget_pages > 0, "budget_pages must be positive");
  require(top_k >= 0, "top_k must be non-negative");
  require(share_stride > 0, "share_stride must be positive");
  require(logic_resident_local >= 0, "logic_resident_local must be non-negative");
}

}  // namespace hbsim
