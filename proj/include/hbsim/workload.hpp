// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic model shapes, KV traces and gating profiles.
//
// Every generator is a pure function of (seed, config). Random streams use
// std::mt19937_64 seeded per (layer, head) substream with
//   splitmix64(seed ^ (((layer << 32) | (head + 1)) * 0x9E3779B97F4A7C15)).
// Bounded integers in [lo, hi] are lo + (((x >> 32) * (hi - lo + 1)) >> 32) and
// unit reals are (x >> 11) * 2^-53, so traces are reproducible on any platform.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "hbsim/heads.hpp"

namespace hbsim {

struct Precision {
  int weight_bits = 8;
  int activation_bits = 8;
  int kv_bits = 8;

  friend bool operator==(const Precision&, const Precision&) = default;
};

struct ModelSpec {
  std::string name = "custom";
  int n_layers = 1;
  int n_kv_heads = 1;
  int n_q_heads = 1;
  int head_dim = 128;
  int hidden_dim = 4096;
  int ffn_dim = 11008;
  Precision precision;

  int group_size() const { return n_q_heads / n_kv_heads; }
  // Bits of one token's key plus value for one KV head.
  std::uint64_t token_kv_bits() const;

  // Throws ConfigError for non-positive dims or n_q_heads not a multiple of
  // n_kv_heads.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// llama2-7b, llama3-8b, mistral-7b, vicuna-13b. "custom" has no built-in
// shape and must come from JSON; it and unknown names throw ConfigError.
ModelSpec builtin_model(std::string_view name);
std::vector<std::string> builtin_model_names();

struct TraceConfig {
  std::uint64_t seed = 0;
  std::int64_t seq_len = 0;
  int value_min = -128;
  int value_max = 127;

  void validate() const;

  friend bool operator==(const TraceConfig&, const TraceConfig&) = default;
};

using Int8Matrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct KvStream {
  int layer = 0;
  int head = 0;
  Int8Matrix keys;
  Int8Matrix values;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t substream_seed(std::uint64_t seed, std::uint32_t layer, std::uint32_t head);
std::int64_t bounded_draw(std::uint64_t x, std::int64_t lo, std::int64_t hi);
double unit_draw(std::uint64_t x);

// Per token: head_dim key draws, then head_dim value draws.
KvStream gen_head_trace(const TraceConfig& cfg, int head_dim, int layer, int head);
std::vector<KvStream> gen_kv_trace(const TraceConfig& cfg, const ModelSpec& model);

// Exactly floor(sparsity * n_kv_heads) streaming heads per layer, picked by a
// seeded Fisher-Yates shuffle. Streaming alphas lie in [0, 0.5) and retrieval
// alphas in [0.5, 1], so a 0.5 threshold (or the matching quantile) recovers
// the split.
std::vector<AlphaEntry> gen_alpha_profile(const ModelSpec& model, double target_static_sparsity,
                                          std::uint64_t seed);

}  // namespace hbsim
