// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Head-to-bank mapping: stage decomposition, retrieval/streaming tiling on
// the mesh, and round-robin token interleaving inside a tile.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "hbsim/arch.hpp"
#include "hbsim/heads.hpp"

namespace hbsim {

// ---------------------------------------------------------------------------
// Decomposition
// ---------------------------------------------------------------------------

enum class DecompositionMode {
  // Largest divisor first; a divisor may be used more than once.
  Greedy,
  // Every divisor at most once per segment; ConfigError when that fails.
  StrictDistinct,
};

// One pipeline segment. Each stage runs `stages[i]` heads concurrently, each
// head owning n_banks / stages[i] banks.
struct StagePlan {
  std::vector<int> stages;
  int n_banks = 0;

  int head_count() const;
  int banks_per_head(std::size_t stage) const { return n_banks / stages.at(stage); }

  friend bool operator==(const StagePlan&, const StagePlan&) = default;
};

std::vector<StagePlan> decompose_heads(int n_h, int n_b,
                                       DecompositionMode mode = DecompositionMode::Greedy);

// Total number of sequential stages across all segments.
int stage_count(std::span<const StagePlan> plan);

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

struct PlacedHead {
  int id = 0;
  HeadKind kind = HeadKind::Retrieval;
  BankCoord location;
};

struct Tile {
  // Index into the assign_tiles input of the minority-kind head.
  int anchor = 0;
  // Indices into the input, anchor first, then ascending.
  std::vector<int> members;

  friend bool operator==(const Tile&, const Tile&) = default;
};

struct TilePlan {
  std::vector<Tile> tiles;
  int t = 0;
  int capacity = 0;
  int max_dist = 0;
  HeadKind minority = HeadKind::Retrieval;

  friend bool operator==(const TilePlan&, const TilePlan&) = default;
};

// Groups heads so each tile holds exactly one head of the minority kind (ties:
// retrieval), at most ceil(n / t) heads, and the largest anchor-to-member
// Manhattan distance over all tiles is minimal. Feasibility of a distance bound
// is a bipartite max-flow; the bound itself is binary-searched over the
// distinct anchor/member distances. At the optimal bound, an assignment giving
// every tile floor or ceil of the majority count is preferred when one exists.
//
// Throws ConfigError when either kind is absent, there are more heads than
// banks, or a location lies outside the mesh.
TilePlan assign_tiles(std::span<const PlacedHead> heads, int mesh_rows, int mesh_cols);

// Dinic max-flow with integer capacities. Edges are visited in insertion
// order, so the returned flow decomposition is deterministic.
class MaxFlow {
 public:
  explicit MaxFlow(int nodes);
  void add_edge(int from, int to, std::int64_t capacity);
  // Raising a capacity keeps the current flow; a later solve() augments it.
  void set_capacity(int edge, std::int64_t capacity);
  std::int64_t solve(int source, int sink);
  // Flow pushed on the i-th edge added.
  std::int64_t flow_on(int edge) const;

 private:
  struct Edge {
    int to;
    std::int64_t cap;
    std::int64_t flow;
  };
  bool bfs(int s, int t);
  std::int64_t dfs(int v, int t, std::int64_t pushed);

  std::vector<Edge> edges_;
  std::vector<std::vector<int>> adj_;
  std::vector<int> level_;
  std::vector<std::size_t> next_;
};

// ---------------------------------------------------------------------------
// Interleaving and co-placement
// ---------------------------------------------------------------------------

using PageId = std::int64_t;

// Per-bank token offsets of one page: token j goes to slot (start + j) mod n.
struct PageSlices {
  std::vector<std::vector<int>> per_bank;

  friend bool operator==(const PageSlices&, const PageSlices&) = default;
};

PageSlices interleave_page(int page_size, std::span<const BankCoord> tile_banks, int start = 0);

// Tokens of `tokens` consecutive positions striped from slot `start`.
std::vector<std::int64_t> interleave_counts(std::int64_t tokens, int n_banks, int start = 0);

struct InterleaveMap {
  std::vector<BankCoord> banks;
  std::map<PageId, PageSlices> pages;

  void add_page(PageId id, int page_size, int start = 0);
};

struct TokenRef {
  PageId page = 0;
  int offset = 0;

  friend bool operator==(const TokenRef&, const TokenRef&) = default;
};

// Work list per tile bank: exactly the selected tokens that bank stores.
// Throws std::out_of_range for a page missing from the map.
std::vector<std::vector<TokenRef>> co_place(std::span<const PageId> selection,
                                            const InterleaveMap& imap);

// Baseline allocation that stores whole page p on bank p mod n_banks.
std::vector<std::int64_t> paged_per_bank_counts(std::span<const PageId> selection, int page_size,
                                                int n_banks);

// ---------------------------------------------------------------------------
// Whole-model mapping
// ---------------------------------------------------------------------------

struct HeadGroup {
  int layer = 0;
  int head = 0;
  HeadKind kind = HeadKind::Retrieval;
  // Row-major bank ids owned by the head; the first is its home bank.
  std::vector<int> banks;

  friend bool operator==(const HeadGroup&, const HeadGroup&) = default;
};

struct StageMapping {
  int banks_per_head = 0;
  std::vector<HeadGroup> heads;
  TilePlan tiling;

  friend bool operator==(const StageMapping&, const StageMapping&) = default;
};

struct LayerMapping {
  int layer = 0;
  std::vector<StagePlan> segments;
  std::vector<StageMapping> stages;

  friend bool operator==(const LayerMapping&, const LayerMapping&) = default;
};

struct MappingPlan {
  int mesh_rows = 0;
  int mesh_cols = 0;
  std::vector<LayerMapping> layers;

  friend bool operator==(const MappingPlan&, const MappingPlan&) = default;
};

// Pins each stage's heads row-major onto contiguous bank groups and tiles
// every stage that mixes head kinds; uniform stages get one tile per head.
// `profiles` must hold exactly one entry per (layer, head).
MappingPlan build_mapping(int n_layers, int n_kv_heads, std::span<const HeadProfile> profiles,
                          const HardwareSpec& spec,
                          DecompositionMode mode = DecompositionMode::Greedy);

}  // namespace hbsim
