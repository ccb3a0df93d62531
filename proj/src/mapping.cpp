// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "hbsim/mapping.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>

#include "hbsim/error.hpp"

namespace hbsim {

// ---------------------------------------------------------------------------
// Decomposition
// ---------------------------------------------------------------------------

int StagePlan::head_count() const { return std::accumulate(stages.begin(), stages.end(), 0); }

int stage_count(std::span<const StagePlan> plan) {
  int n = 0;
  for (const auto& seg : plan) n += static_cast<int>(seg.stages.size());
  return n;
}

namespace {

std::vector<int> divisors_descending(int n) {
  std::vector<int> out;
  for (int d = n; d >= 1; --d)
    if (n % d == 0) out.push_back(d);
  return out;
}

std::vector<int> greedy_split(int n_h, const std::vector<int>& divisors) {
  std::vector<int> stages;
  int remaining = n_h;
  while (remaining > 0) {
    const auto it = std::find_if(divisors.begin(), divisors.end(),
                                 [&](int d) { return d <= remaining; });
    stages.push_back(*it);  // 1 always divides, so a candidate exists.
    remaining -= *it;
  }
  return stages;
}

// Distinct divisors summing to n_h, larger divisors tried first.
bool distinct_split(const std::vector<int>& divisors, std::size_t from, int remaining,
                    std::vector<int>& picked, std::set<std::pair<std::size_t, int>>& dead) {
  if (remaining == 0) return true;
  if (from >= divisors.size() || dead.count({from, remaining}) != 0) return false;
  for (std::size_t i = from; i < divisors.size(); ++i) {
    if (divisors[i] > remaining) continue;
    picked.push_back(divisors[i]);
    if (distinct_split(divisors, i + 1, remaining - divisors[i], picked, dead)) return true;
    picked.pop_back();
  }
  dead.insert({from, remaining});
  return false;
}

std::vector<int> split_segment(int n_h, int n_b, DecompositionMode mode) {
  if (n_b % n_h == 0) return {n_h};
  const auto divisors = divisors_descending(n_b);
  if (mode == DecompositionMode::Greedy) return greedy_split(n_h, divisors);
  std::vector<int> picked;
  std::set<std::pair<std::size_t, int>> dead;
  if (!distinct_split(divisors, 0, n_h, picked, dead))
    throw ConfigError("decompose_heads: " + std::to_string(n_h) +
                      " heads cannot be written as distinct divisors of " + std::to_string(n_b));
  return picked;
}

}  // namespace

std::vector<StagePlan> decompose_heads(int n_h, int n_b, DecompositionMode mode) {
  if (n_h < 1 || n_b < 1) throw ConfigError("decompose_heads: head and bank counts must be >= 1");
  std::vector<StagePlan> plan;
  int remaining = n_h;
  while (remaining > n_b) {
    plan.push_back({{n_b}, n_b});
    remaining -= n_b;
  }
  plan.push_back({split_segment(remaining, n_b, mode), n_b});
  return plan;
}

// ---------------------------------------------------------------------------
// Max-flow
// ---------------------------------------------------------------------------

MaxFlow::MaxFlow(int nodes) : adj_(static_cast<std::size_t>(nodes)) {}

void MaxFlow::add_edge(int from, int to, std::int64_t capacity) {
  adj_.at(static_cast<std::size_t>(from)).push_back(static_cast<int>(edges_.size()));
  edges_.push_back({to, capacity, 0});
  adj_.at(static_cast<std::size_t>(to)).push_back(static_cast<int>(edges_.size()));
  edges_.push_back({from, 0, 0});
}

void MaxFlow::set_capacity(int edge, std::int64_t capacity) {
  auto& e = edges_.at(2 * static_cast<std::size_t>(edge));
  if (capacity < e.flow) throw std::invalid_argument("MaxFlow::set_capacity: below current flow");
  e.cap = capacity;
}

std::int64_t MaxFlow::flow_on(int edge) const { return edges_.at(2 * static_cast<std::size_t>(edge)).flow; }

bool MaxFlow::bfs(int s, int t) {
  level_.assign(adj_.size(), -1);
  std::queue<int> q;
  level_[static_cast<std::size_t>(s)] = 0;
  q.push(s);
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int id : adj_[static_cast<std::size_t>(v)]) {
      const auto& e = edges_[static_cast<std::size_t>(id)];
      if (e.cap - e.flow > 0 && level_[static_cast<std::size_t>(e.to)] < 0) {
        level_[static_cast<std::size_t>(e.to)] = level_[static_cast<std::size_t>(v)] + 1;
        q.push(e.to);
      }
    }
  }
  return level_[static_cast<std::size_t>(t)] >= 0;
}

std::int64_t MaxFlow::dfs(int v, int t, std::int64_t pushed) {
  if (v == t || pushed == 0) return pushed;
  const auto vi = static_cast<std::size_t>(v);
  for (; next_[vi] < adj_[vi].size(); ++next_[vi]) {
    const int id = adj_[vi][next_[vi]];
    auto& e = edges_[static_cast<std::size_t>(id)];
    if (level_[static_cast<std::size_t>(e.to)] != level_[vi] + 1 || e.cap - e.flow <= 0) continue;
    const std::int64_t got = dfs(e.to, t, std::min(pushed, e.cap - e.flow));
    if (got > 0) {
      e.flow += got;
      edges_[static_cast<std::size_t>(id ^ 1)].flow -= got;
      return got;
    }
  }
  return 0;
}

std::int64_t MaxFlow::solve(int source, int sink) {
  std::int64_t total = 0;
  while (bfs(source, sink)) {
    next_.assign(adj_.size(), 0);
    while (const std::int64_t f = dfs(source, sink, std::numeric_limits<std::int64_t>::max()))
      total += f;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

namespace {

// Returns, for each major head, the index (into `minors`) of its anchor, or an
// empty vector if distance bound `d` is infeasible. With `even`, every anchor
// must first take floor(m / t) members; augmenting never lowers the flow out
// of the source, so the second pass keeps that floor.
std::vector<int> assign_within(const std::vector<const PlacedHead*>& minors,
                               const std::vector<const PlacedHead*>& majors, int capacity, int d,
                               bool even = false) {
  const int t = static_cast<int>(minors.size());
  const int m = static_cast<int>(majors.size());
  const int source = 0;
  const int sink = 1 + t + m;
  MaxFlow flow(sink + 1);
  int edge = 0;
  const int floor_share = m / t;
  for (int i = 0; i < t; ++i, ++edge)
    flow.add_edge(source, 1 + i, even ? floor_share : capacity - 1);
  std::vector<std::vector<std::pair<int, int>>> edges_of_major(static_cast<std::size_t>(m));
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < m; ++j)
      if (manhattan(minors[static_cast<std::size_t>(i)]->location,
                    majors[static_cast<std::size_t>(j)]->location) <= d) {
        flow.add_edge(1 + i, 1 + t + j, 1);
        edges_of_major[static_cast<std::size_t>(j)].push_back({edge++, i});
      }
  for (int j = 0; j < m; ++j, ++edge) flow.add_edge(1 + t + j, sink, 1);
  std::int64_t total = flow.solve(source, sink);
  if (even) {
    if (total != static_cast<std::int64_t>(floor_share) * t) return {};
    for (int i = 0; i < t; ++i) flow.set_capacity(i, capacity - 1);
    total += flow.solve(source, sink);
  }
  if (total != m) return {};

  std::vector<int> anchor(static_cast<std::size_t>(m), -1);
  for (int j = 0; j < m; ++j)
    for (auto [id, i] : edges_of_major[static_cast<std::size_t>(j)])
      if (flow.flow_on(id) == 1) anchor[static_cast<std::size_t>(j)] = i;
  return anchor;
}

}  // namespace

TilePlan assign_tiles(std::span<const PlacedHead> heads, int mesh_rows, int mesh_cols) {
  if (mesh_rows <= 0 || mesh_cols <= 0) throw ConfigError("assign_tiles: empty mesh");
  if (static_cast<long>(heads.size()) > static_cast<long>(mesh_rows) * mesh_cols)
    throw ConfigError("assign_tiles: more heads than banks");
  std::vector<int> minor_idx;
  std::vector<int> major_idx;
  const auto n_r = std::count_if(heads.begin(), heads.end(),
                                 [](const PlacedHead& h) { return h.kind == HeadKind::Retrieval; });
  const auto n_s = static_cast<std::ptrdiff_t>(heads.size()) - n_r;
  if (n_r == 0 || n_s == 0) throw ConfigError("assign_tiles: both head kinds are required");

  TilePlan plan;
  plan.minority = n_r <= n_s ? HeadKind::Retrieval : HeadKind::Streaming;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const auto& h = heads[i];
    if (h.location.row < 0 || h.location.col < 0 || h.location.row >= mesh_rows ||
        h.location.col >= mesh_cols)
      throw ConfigError("assign_tiles: head location outside the mesh");
    (h.kind == plan.minority ? minor_idx : major_idx).push_back(static_cast<int>(i));
  }

  std::vector<const PlacedHead*> minors;
  std::vector<const PlacedHead*> majors;
  for (int i : minor_idx) minors.push_back(&heads[static_cast<std::size_t>(i)]);
  for (int j : major_idx) majors.push_back(&heads[static_cast<std::size_t>(j)]);

  plan.t = static_cast<int>(minors.size());
  plan.capacity = static_cast<int>((heads.size() + minors.size() - 1) / minors.size());

  std::set<int> distances;
  for (const auto* a : minors)
    for (const auto* b : majors) distances.insert(manhattan(a->location, b->location));
  const std::vector<int> candidates(distances.begin(), distances.end());

  // Always feasible at the largest distance: t * (capacity - 1) >= n_major.
  std::size_t lo = 0;
  std::size_t hi = candidates.size() - 1;
  std::vector<int> best = assign_within(minors, majors, plan.capacity, candidates[hi]);
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    auto got = assign_within(minors, majors, plan.capacity, candidates[mid]);
    if (got.empty()) {
      lo = mid + 1;
    } else {
      best = std::move(got);
      hi = mid;
    }
  }
  if (best.empty()) throw InvariantViolation("assign_tiles: no feasible assignment");
  if (auto even = assign_within(minors, majors, plan.capacity, candidates[lo], true); !even.empty())
    best = std::move(even);

  plan.tiles.resize(minors.size());
  for (std::size_t i = 0; i < minors.size(); ++i) {
    plan.tiles[i].anchor = minor_idx[i];
    plan.tiles[i].members.push_back(minor_idx[i]);
  }
  for (std::size_t j = 0; j < majors.size(); ++j) {
    auto& tile = plan.tiles[static_cast<std::size_t>(best[j])];
    tile.members.push_back(major_idx[j]);
    plan.max_dist = std::max(plan.max_dist, manhattan(minors[static_cast<std::size_t>(best[j])]->location,
                                                      majors[j]->location));
  }
  for (auto& tile : plan.tiles) std::sort(tile.members.begin() + 1, tile.members.end());
  return plan;
}

// ---------------------------------------------------------------------------
// Interleaving
// ---------------------------------------------------------------------------

PageSlices interleave_page(int page_size, std::span<const BankCoord> tile_banks, int start) {
  if (tile_banks.empty()) throw std::invalid_argument("interleave_page: no banks");
  if (page_size < 0) throw std::invalid_argument("interleave_page: negative page size");
  const int n = static_cast<int>(tile_banks.size());
  PageSlices slices;
  slices.per_bank.resize(tile_banks.size());
  const int first = ((start % n) + n) % n;
  for (int j = 0; j < page_size; ++j)
    slices.per_bank[static_cast<std::size_t>((first + j) % n)].push_back(j);
  return slices;
}

std::vector<std::int64_t> interleave_counts(std::int64_t tokens, int n_banks, int start) {
  if (n_banks <= 0) throw std::invalid_argument("interleave_counts: no banks");
  if (tokens < 0) throw std::invalid_argument("interleave_counts: negative token count");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_banks), tokens / n_banks);
  const int first = ((start % n_banks) + n_banks) % n_banks;
  for (std::int64_t i = 0; i < tokens % n_banks; ++i)
    ++counts[static_cast<std::size_t>((first + i) % n_banks)];
  return counts;
}

void InterleaveMap::add_page(PageId id, int page_size, int start) {
  pages[id] = interleave_page(page_size, banks, start);
}

std::vector<std::vector<TokenRef>> co_place(std::span<const PageId> selection,
                                            const InterleaveMap& imap) {
  std::vector<std::vector<TokenRef>> work(imap.banks.size());
  for (PageId id : selection) {
    const auto it = imap.pages.find(id);
    if (it == imap.pages.end())
      throw std::out_of_range("co_place: page " + std::to_string(id) + " is not interleaved");
    for (std::size_t b = 0; b < it->second.per_bank.size() && b < work.size(); ++b)
      for (int offset : it->second.per_bank[b]) work[b].push_back({id, offset});
  }
  return work;
}

std::vector<std::int64_t> paged_per_bank_counts(std::span<const PageId> selection, int page_size,
                                                int n_banks) {
  if (n_banks <= 0) throw std::invalid_argument("paged_per_bank_counts: no banks");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_banks), 0);
  for (PageId id : selection) counts[static_cast<std::size_t>(((id % n_banks) + n_banks) % n_banks)] += page_size;
  return counts;
}

// ---------------------------------------------------------------------------
// Whole-model mapping
// ---------------------------------------------------------------------------

MappingPlan build_mapping(int n_layers, int n_kv_heads, std::span<const HeadProfile> profiles,
                          const HardwareSpec& spec, DecompositionMode mode) {
  spec.validate();
  if (n_layers <= 0 || n_kv_heads <= 0) throw ConfigError("build_mapping: empty model");
  if (profiles.size() != static_cast<std::size_t>(n_layers) * static_cast<std::size_t>(n_kv_heads))
    throw ConfigError("build_mapping: expected one head profile per (layer, head)");

  std::vector<const HeadProfile*> lookup(profiles.size(), nullptr);
  for (const auto& p : profiles) {
    if (p.layer < 0 || p.layer >= n_layers || p.head < 0 || p.head >= n_kv_heads)
      throw ConfigError("build_mapping: head profile out of range");
    auto& slot = lookup[static_cast<std::size_t>(p.layer) * static_cast<std::size_t>(n_kv_heads) +
                        static_cast<std::size_t>(p.head)];
    if (slot != nullptr) throw ConfigError("build_mapping: duplicate head profile");
    slot = &p;
  }

  const int n_b = spec.bank_count();
  const auto segments = decompose_heads(n_kv_heads, n_b, mode);

  MappingPlan plan;
  plan.mesh_rows = spec.mesh_rows;
  plan.mesh_cols = spec.mesh_cols;
  for (int layer = 0; layer < n_layers; ++layer) {
    LayerMapping lm;
    lm.layer = layer;
    lm.segments = segments;
    int cursor = 0;
    for (const auto& seg : segments) {
      for (int count : seg.stages) {
        StageMapping sm;
        sm.banks_per_head = n_b / count;
        std::vector<PlacedHead> placed;
        for (int i = 0; i < count; ++i) {
          const auto* p = lookup[static_cast<std::size_t>(layer) * static_cast<std::size_t>(n_kv_heads) +
                                 static_cast<std::size_t>(cursor + i)];
          HeadGroup g{layer, cursor + i, p->kind, {}};
          for (int b = 0; b < sm.banks_per_head; ++b) g.banks.push_back(i * sm.banks_per_head + b);
          placed.push_back({cursor + i, g.kind, spec.coord_of(g.banks.front())});
          sm.heads.push_back(std::move(g));
        }
        const bool mixed = std::any_of(placed.begin(), placed.end(), [&](const PlacedHead& h) {
          return h.kind != placed.front().kind;
        });
        if (mixed) {
          sm.tiling = assign_tiles(placed, spec.mesh_rows, spec.mesh_cols);
        } else {
          sm.tiling.t = count;
          sm.tiling.capacity = 1;
          sm.tiling.minority = placed.front().kind;
          for (int i = 0; i < count; ++i) sm.tiling.tiles.push_back({i, {i}});
        }
        lm.stages.push_back(std::move(sm));
        cursor += count;
      }
    }
    plan.layers.push_back(std::move(lm));
  }
  return plan;
}

}  // namespace hbsim
