// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Count-level decode-step simulator.
//
// Each KV head turns into a demand (tokens streamed from memory, tokens held
// on the logic die, metadata pages scanned). A tile distributes its heads'
// demands over banks, either on each head's own bank group or striped across
// all tile banks, and every bank's work becomes compute, memory and NoC
// cycles. Tiles of a stage run in parallel; stages and layers run back to
// back.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hbsim/arch.hpp"
#include "hbsim/mapping.hpp"
#include "hbsim/sparsity.hpp"
#include "hbsim/workload.hpp"

namespace hbsim {

enum class Mode { Full, SparseUnbalanced, SparseBalanced };
enum class Scope { AttentionOnly, EndToEnd };

std::string_view to_string(Mode mode);
std::string_view to_string(Scope scope);
// Accepts "full", "sparse-unbalanced", "sparse-balanced" (and "unbalanced",
// "balanced"); throws ConfigError otherwise.
Mode parse_mode(std::string_view text);
Scope parse_scope(std::string_view text);

struct SimOptions {
  Scope scope = Scope::AttentionOnly;
  // Bank busy time is max(compute, memory) + noc instead of the serial sum.
  bool overlap_compute_memory = false;
  int softmax_ops_per_token = 8;

  friend bool operator==(const SimOptions&, const SimOptions&) = default;
};

struct BankTimeline {
  Cycles compute_cycles = 0;
  Cycles memory_cycles = 0;
  Cycles noc_cycles = 0;
  Cycles idle_cycles = 0;

  Cycles busy(bool overlap = false) const;

  friend bool operator==(const BankTimeline&, const BankTimeline&) = default;
};

struct EnergyBreakdown {
  double memory_pj = 0.0;
  double compute_pj = 0.0;
  double noc_pj = 0.0;
  double total_pj = 0.0;

  friend bool operator==(const EnergyBreakdown&, const EnergyBreakdown&) = default;
};

struct SimReport {
  std::string model;
  Mode mode = Mode::Full;
  Scope scope = Scope::AttentionOnly;
  std::int64_t seq_len = 0;
  int mesh_rows = 0;
  int mesh_cols = 0;
  std::vector<BankTimeline> banks;
  Cycles attention_cycles = 0;
  Cycles end_to_end_cycles = 0;
  EnergyBreakdown energy;
  std::uint64_t tokens_processed = 0;
  std::uint64_t kv_bits_fetched = 0;
  std::uint64_t mem_bits = 0;
  std::uint64_t compute_ops = 0;
  std::uint64_t noc_bit_hops = 0;
  bool selection_step = false;
  int tiles_balanced = 0;

  friend bool operator==(const SimReport&, const SimReport&) = default;
};

// Token population of one KV head's cache at sequence length seq_len, after
// eviction. Streaming heads keep no pages.
struct KvOccupancy {
  std::int64_t sink = 0;
  std::int64_t local = 0;
  std::int64_t paged_tokens = 0;
  std::int64_t pages = 0;

  std::int64_t total() const { return sink + local + paged_tokens; }

  friend bool operator==(const KvOccupancy&, const KvOccupancy&) = default;
};

KvOccupancy occupancy(std::int64_t seq_len, const SparsityConfig& cfg, HeadKind kind);

// A decode step refreshes the retrieval selection when seq_len is a multiple
// of share_stride; the other steps reuse it.
bool is_selection_step(std::int64_t seq_len, const SparsityConfig& cfg);

// Attention work of one KV head for one decode step.
struct HeadDemand {
  HeadKind kind = HeadKind::Retrieval;
  // Own bank group, home bank first.
  std::vector<int> banks;
  std::int64_t attended_tokens = 0;
  // Attended tokens served from logic-die SRAM on the home bank.
  std::int64_t resident_tokens = 0;
  // Attended tokens streamed from stacked memory.
  std::int64_t memory_tokens = 0;
  // Page metadata scanned for selection (0 on reuse steps and dense fallback).
  std::int64_t metadata_pages = 0;
  std::int64_t top_k = 0;

  friend bool operator==(const HeadDemand&, const HeadDemand&) = default;
};

HeadDemand head_demand(HeadKind kind, std::vector<int> banks, std::int64_t seq_len,
                       const SparsityConfig& cfg, Mode mode);

// Work assigned to one bank before conversion to cycles.
struct BankWork {
  int bank = 0;
  std::uint64_t ops = 0;
  std::uint64_t mem_bits = 0;
  std::uint64_t kv_tokens = 0;
  Cycles noc_cycles = 0;
  std::uint64_t noc_bit_hops = 0;

  friend bool operator==(const BankWork&, const BankWork&) = default;
};

enum class Placement {
  // Each head works only on its own bank group.
  OwnBanks,
  // Memory-resident KV tokens and metadata of every head are striped over all
  // tile banks, starting at the head's home bank; each bank computes what it
  // stores and ships a softmax partial to the home bank.
  Interleaved,
};

// Per-bank work of a tile; the result is index-aligned with `tile_banks`.
std::vector<BankWork> distribute_tile(std::span<const HeadDemand> demands,
                                      std::span<const int> tile_banks, Placement placement,
                                      const ModelSpec& model, const HardwareSpec& spec,
                                      const SimOptions& options = {});

std::vector<BankWork> balance_tile(std::span<const HeadDemand> demands,
                                   std::span<const int> tile_banks, const ModelSpec& model,
                                   const HardwareSpec& spec, const SimOptions& options = {});

std::vector<BankTimeline> to_timelines(std::span<const BankWork> work, const HardwareSpec& spec,
                                       const SimOptions& options = {});

// Throws ConfigError when the plan does not match the model or the mesh, and
// InvariantViolation when an internal accounting check fails.
SimReport simulate_decode_step(const ModelSpec& model, const MappingPlan& plan,
                               const SparsityConfig& cfg, const HardwareSpec& spec, Mode mode,
                               std::int64_t seq_len, const SimOptions& options = {});

// One report per seq_len in [seq_from, seq_to) stepping by `stride`.
std::vector<SimReport> run_decode_range(const ModelSpec& model, const MappingPlan& plan,
                                        const SparsityConfig& cfg, const HardwareSpec& spec,
                                        Mode mode, std::int64_t seq_from, std::int64_t seq_to,
                                        std::int64_t stride, const SimOptions& options = {});

}  // namespace hbsim
