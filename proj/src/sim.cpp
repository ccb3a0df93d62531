// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "hbsim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "hbsim/error.hpp"

namespace hbsim {

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Full: return "full";
    case Mode::SparseUnbalanced: return "sparse-unbalanced";
    case Mode::SparseBalanced: return "sparse-balanced";
  }
  return "unknown";
}

std::string_view to_string(Scope scope) {
  return scope == Scope::AttentionOnly ? "attention" : "end-to-end";
}

Mode parse_mode(std::string_view text) {
  if (text == "full") return Mode::Full;
  if (text == "sparse-unbalanced" || text == "unbalanced") return Mode::SparseUnbalanced;
  if (text == "sparse-balanced" || text == "balanced") return Mode::SparseBalanced;
  throw ConfigError("unknown mode '" + std::string(text) + "'");
}

Scope parse_scope(std::string_view text) {
  if (text == "attention") return Scope::AttentionOnly;
  if (text == "end-to-end") return Scope::EndToEnd;
  throw ConfigError("unknown scope '" + std::string(text) + "'");
}

Cycles BankTimeline::busy(bool overlap) const {
  return (overlap ? std::max(compute_cycles, memory_cycles) : compute_cycles + memory_cycles) +
         noc_cycles;
}

KvOccupancy occupancy(std::int64_t seq_len, const SparsityConfig& cfg, HeadKind kind) {
  KvOccupancy o;
  if (seq_len <= 0) return o;
  o.sink = std::min<std::int64_t>(cfg.n_sink, seq_len);
  o.local = std::min<std::int64_t>(cfg.n_local, seq_len - o.sink);
  if (kind == HeadKind::Streaming) return o;
  o.paged_tokens = seq_len - o.sink - o.local;
  o.pages = (o.paged_tokens + cfg.page_size - 1) / cfg.page_size;
  if (o.pages > cfg.budget_pages) {
    // Only sealed, full pages are evicted; the page being filled stays.
    o.paged_tokens -= (o.pages - cfg.budget_pages) * cfg.page_size;
    o.pages = cfg.budget_pages;
  }
  return o;
}

bool is_selection_step(std::int64_t seq_len, const SparsityConfig& cfg) {
  return seq_len % cfg.share_stride == 0;
}

HeadDemand head_demand(HeadKind kind, std::vector<int> banks, std::int64_t seq_len,
                       const SparsityConfig& cfg, Mode mode) {
  if (banks.empty()) throw ConfigError("head_demand: head owns no banks");
  HeadDemand d;
  d.kind = kind;
  d.banks = std::move(banks);
  if (seq_len <= 0) return d;

  const KvOccupancy occ = occupancy(seq_len, cfg, kind);
  if (mode == Mode::Full) {
    d.attended_tokens = seq_len;
  } else if (kind == HeadKind::Streaming) {
    d.attended_tokens = occ.sink + occ.local;
  } else {
    const std::int64_t k = cfg.top_k;
    const std::int64_t selected = std::min(k * cfg.page_size, occ.paged_tokens);
    const bool dense = k >= occ.pages || occ.pages + selected >= occ.paged_tokens;
    if (dense) {
      d.attended_tokens = occ.total();
    } else {
      d.attended_tokens = occ.sink + occ.local + selected;
      d.top_k = k;
      if (k > 0 && is_selection_step(seq_len, cfg)) d.metadata_pages = occ.pages;
    }
  }
  d.resident_tokens = std::min<std::int64_t>(occ.sink, cfg.n_sink) +
                      std::min<std::int64_t>(occ.local, cfg.logic_resident_local);
  d.resident_tokens = std::min(d.resident_tokens, d.attended_tokens);
  d.memory_tokens = d.attended_tokens - d.resident_tokens;
  return d;
}

namespace {

std::uint64_t topk_ops(std::int64_t m) {
  if (m < 2) return 0;
  const double x = static_cast<double>(m);
  return static_cast<std::uint64_t>(std::ceil(x * std::log2(x)));
}

struct TileContext {
  std::vector<BankWork>& work;
  std::span<const int> tile_banks;
  const HardwareSpec& spec;

  void send(std::size_t src, std::size_t dst, std::uint64_t bits) {
    if (src == dst || bits == 0) return;
    const BankCoord a = spec.coord_of(tile_banks[src]);
    const BankCoord b = spec.coord_of(tile_banks[dst]);
    work[src].noc_cycles += noc_cycles(bits, a, b, spec);
    work[src].noc_bit_hops += bits * static_cast<std::uint64_t>(manhattan(a, b));
  }
};

}  // namespace

std::vector<BankWork> distribute_tile(std::span<const HeadDemand> demands,
                                      std::span<const int> tile_banks, Placement placement,
                                      const ModelSpec& model, const HardwareSpec& spec,
                                      const SimOptions& options) {
  if (tile_banks.empty()) throw ConfigError("distribute_tile: tile has no banks");
  std::map<int, std::size_t> pos;
  std::vector<BankWork> work(tile_banks.size());
  for (std::size_t i = 0; i < tile_banks.size(); ++i) {
    if (!spec.contains(spec.coord_of(tile_banks[i])) || tile_banks[i] < 0)
      throw ConfigError("distribute_tile: bank outside the mesh");
    if (!pos.emplace(tile_banks[i], i).second)
      throw ConfigError("distribute_tile: bank listed twice in a tile");
    work[i].bank = tile_banks[i];
  }
  TileContext ctx{work, tile_banks, spec};

  const auto g = static_cast<std::uint64_t>(model.group_size());
  const auto hd = static_cast<std::uint64_t>(model.head_dim);
  const std::uint64_t token_bits = model.token_kv_bits();
  // Two elementwise bound vectors per page.
  const std::uint64_t meta_bits = token_bits;
  // q.k, then p.v: 3 * head_dim MACs per query head, plus softmax.
  const std::uint64_t token_ops =
      2 * g * 3 * hd + g * static_cast<std::uint64_t>(options.softmax_ops_per_token);

  for (const auto& d : demands) {
    std::vector<std::size_t> set;
    std::size_t home = 0;
    if (placement == Placement::OwnBanks) {
      for (int b : d.banks) {
        const auto it = pos.find(b);
        if (it == pos.end()) throw ConfigError("distribute_tile: head bank outside its tile");
        set.push_back(it->second);
      }
    } else {
      const auto it = pos.find(d.banks.front());
      if (it == pos.end()) throw ConfigError("distribute_tile: head bank outside its tile");
      for (std::size_t i = 0; i < tile_banks.size(); ++i) set.push_back(i);
      home = it->second;
    }
    const int n = static_cast<int>(set.size());
    const int start = static_cast<int>(home);
    const std::size_t home_idx = set[home];

    const auto tokens = interleave_counts(d.memory_tokens, n, start);
    int contributors = 0;
    for (int i = 0; i < n; ++i) {
      auto& w = work[set[static_cast<std::size_t>(i)]];
      const auto c = static_cast<std::uint64_t>(tokens[static_cast<std::size_t>(i)]);
      w.mem_bits += c * token_bits;
      w.ops += c * token_ops;
      w.kv_tokens += c;
      if (c > 0 || (set[static_cast<std::size_t>(i)] == home_idx && d.resident_tokens > 0))
        ++contributors;
    }
    work[home_idx].ops += static_cast<std::uint64_t>(d.resident_tokens) * token_ops;
    work[home_idx].kv_tokens += static_cast<std::uint64_t>(d.resident_tokens);

    if (d.metadata_pages > 0) {
      const auto pages = interleave_counts(d.metadata_pages, n, start);
      std::int64_t candidates = 0;
      for (int i = 0; i < n; ++i) {
        const std::size_t b = set[static_cast<std::size_t>(i)];
        const std::int64_t p = pages[static_cast<std::size_t>(i)];
        work[b].mem_bits += static_cast<std::uint64_t>(p) * meta_bits;
        work[b].ops += static_cast<std::uint64_t>(p) * 2 * g * hd + topk_ops(p);
        if (n > 1 && p > 0) {
          const std::int64_t local_best = std::min(d.top_k, p);
          candidates += local_best;
          // (score, page id) pairs, 32 bits each.
          ctx.send(b, home_idx, static_cast<std::uint64_t>(local_best) * 64);
        }
      }
      if (n > 1) {
        work[home_idx].ops += topk_ops(candidates);
        for (int i = 0; i < n; ++i)
          ctx.send(home_idx, set[static_cast<std::size_t>(i)], static_cast<std::uint64_t>(d.top_k) * 32);
      }
    }

    if (contributors > 1) {
      for (int i = 0; i < n; ++i) {
        const std::size_t b = set[static_cast<std::size_t>(i)];
        if (b != home_idx && tokens[static_cast<std::size_t>(i)] > 0)
          ctx.send(b, home_idx, g * (2 + hd) * 32);
      }
      work[home_idx].ops += static_cast<std::uint64_t>(contributors) * hd * g;
    }
  }
  return work;
}

std::vector<BankWork> balance_tile(std::span<const HeadDemand> demands,
                                   std::span<const int> tile_banks, const ModelSpec& model,
                                   const HardwareSpec& spec, const SimOptions& options) {
  return distribute_tile(demands, tile_banks, Placement::Interleaved, model, spec, options);
}

std::vector<BankTimeline> to_timelines(std::span<const BankWork> work, const HardwareSpec& spec,
                                       const SimOptions& options) {
  std::vector<BankTimeline> out;
  out.reserve(work.size());
  for (const auto& w : work)
    out.push_back({compute_cycles_for_ops(w.ops, spec), memory_cycles(w.mem_bits, spec), w.noc_cycles, 0});
  Cycles makespan = 0;
  for (const auto& t : out) makespan = std::max(makespan, t.busy(options.overlap_compute_memory));
  for (auto& t : out) t.idle_cycles = makespan - t.busy(options.overlap_compute_memory);
  return out;
}

namespace {

Cycles makespan_of(std::span<const BankTimeline> t, bool overlap) {
  Cycles m = 0;
  for (const auto& b : t) m = std::max(m, b.busy(overlap));
  return m;
}

void check_plan(const ModelSpec& model, const MappingPlan& plan, const HardwareSpec& spec) {
  if (plan.mesh_rows != spec.mesh_rows || plan.mesh_cols != spec.mesh_cols)
    throw ConfigError("mapping plan was built for a different mesh");
  if (static_cast<int>(plan.layers.size()) != model.n_layers)
    throw ConfigError("mapping plan layer count does not match the model");
  for (const auto& layer : plan.layers) {
    int heads = 0;
    for (const auto& stage : layer.stages) {
      heads += static_cast<int>(stage.heads.size());
      std::vector<int> used(static_cast<std::size_t>(spec.bank_count()), 0);
      for (const auto& tile : stage.tiling.tiles)
        for (int m : tile.members) {
          if (m < 0 || m >= static_cast<int>(stage.heads.size()))
            throw ConfigError("mapping plan tile references an unknown head");
          for (int b : stage.heads[static_cast<std::size_t>(m)].banks) {
            if (b < 0 || b >= spec.bank_count()) throw ConfigError("mapping plan bank outside the mesh");
            if (used[static_cast<std::size_t>(b)]++ != 0)
              throw ConfigError("mapping plan places two heads on one bank in a stage");
          }
        }
    }
    if (heads != model.n_kv_heads) throw ConfigError("mapping plan head count does not match the model");
  }
}

}  // namespace

SimReport simulate_decode_step(const ModelSpec& model, const MappingPlan& plan,
                               const SparsityConfig& cfg, const HardwareSpec& spec, Mode mode,
                               std::int64_t seq_len, const SimOptions& options) {
  model.validate();
  cfg.validate();
  spec.validate();
  if (seq_len < 0) throw ConfigError("seq_len must be non-negative");
  check_plan(model, plan, spec);

  const bool overlap = options.overlap_compute_memory;
  SimReport r;
  r.model = model.name;
  r.mode = mode;
  r.scope = options.scope;
  r.seq_len = seq_len;
  r.mesh_rows = spec.mesh_rows;
  r.mesh_cols = spec.mesh_cols;
  r.banks.assign(static_cast<std::size_t>(spec.bank_count()), {});
  r.selection_step = mode != Mode::Full && is_selection_step(seq_len, cfg);

  std::uint64_t attention_bits = 0;
  for (const auto& layer : plan.layers) {
    for (const auto& stage : layer.stages) {
      Cycles stage_makespan = 0;
      for (const auto& tile : stage.tiling.tiles) {
        std::vector<int> tile_banks;
        std::vector<HeadDemand> demands;
        for (int m : tile.members) {
          const auto& h = stage.heads[static_cast<std::size_t>(m)];
          tile_banks.insert(tile_banks.end(), h.banks.begin(), h.banks.end());
          demands.push_back(head_demand(h.kind, h.banks, seq_len, cfg, mode));
          r.tokens_processed += static_cast<std::uint64_t>(demands.back().attended_tokens);
        }

        auto work = distribute_tile(demands, tile_banks, Placement::OwnBanks, model, spec, options);
        auto timeline = to_timelines(work, spec, options);
        if (mode == Mode::SparseBalanced && tile_banks.size() > 1) {
          auto bal = balance_tile(demands, tile_banks, model, spec, options);
          auto bal_timeline = to_timelines(bal, spec, options);
          if (makespan_of(bal_timeline, overlap) <= makespan_of(timeline, overlap)) {
            work = std::move(bal);
            timeline = std::move(bal_timeline);
            ++r.tiles_balanced;
          }
        }

        const Cycles makespan = makespan_of(timeline, overlap);
        stage_makespan = std::max(stage_makespan, makespan);
        for (std::size_t i = 0; i < work.size(); ++i) {
          const auto& t = timeline[i];
          if (t.busy(overlap) + t.idle_cycles != makespan)
            throw InvariantViolation("bank busy + idle differs from the tile makespan");
          auto& acc = r.banks[static_cast<std::size_t>(work[i].bank)];
          acc.compute_cycles += t.compute_cycles;
          acc.memory_cycles += t.memory_cycles;
          acc.noc_cycles += t.noc_cycles;
          acc.idle_cycles += t.idle_cycles;
          attention_bits += work[i].mem_bits;
          r.compute_ops += work[i].ops;
          r.noc_bit_hops += work[i].noc_bit_hops;
        }
      }
      r.attention_cycles += stage_makespan;
    }
  }
  r.kv_bits_fetched = attention_bits;
  r.mem_bits = attention_bits;
  r.end_to_end_cycles = r.attention_cycles;

  if (options.scope == Scope::EndToEnd) {
    const auto n_b = static_cast<std::uint64_t>(spec.bank_count());
    const auto hidden = static_cast<std::uint64_t>(model.hidden_dim);
    const auto hd = static_cast<std::uint64_t>(model.head_dim);
    const auto nq = static_cast<std::uint64_t>(model.n_q_heads);
    const auto nkv = static_cast<std::uint64_t>(model.n_kv_heads);
    const std::uint64_t params = hidden * hd * (nq + 2 * nkv) + nq * hd * hidden +
                                 3 * hidden * static_cast<std::uint64_t>(model.ffn_dim);
    const std::uint64_t bank_bits = ceil_div(params * static_cast<std::uint64_t>(model.precision.weight_bits), n_b);
    const std::uint64_t bank_ops = 2 * ceil_div(params, n_b);
    const std::uint64_t act_bits = hidden * static_cast<std::uint64_t>(model.precision.activation_bits);
    const auto depth = static_cast<std::uint64_t>(spec.mesh_rows - 1 + spec.mesh_cols - 1);
    // Reduce to one bank, then broadcast back, along a spanning tree.
    const Cycles allreduce = 2 * depth * ceil_div(act_bits, spec.noc_link_bits);
    const std::uint64_t allreduce_bit_hops = 2 * (n_b - 1) * act_bits;

    const Cycles comp = compute_cycles_for_ops(bank_ops, spec);
    const Cycles mem = memory_cycles(bank_bits, spec);
    const Cycles layer_extra = (overlap ? std::max(comp, mem) : comp + mem) + 2 * allreduce;
    const auto layers = static_cast<std::uint64_t>(model.n_layers);
    for (auto& b : r.banks) {
      b.compute_cycles += layers * comp;
      b.memory_cycles += layers * mem;
      b.noc_cycles += layers * 2 * allreduce;
    }
    r.end_to_end_cycles += layers * layer_extra;
    r.mem_bits += layers * bank_bits * n_b;
    r.compute_ops += layers * bank_ops * n_b;
    r.noc_bit_hops += layers * 2 * allreduce_bit_hops;
  }

  r.energy.memory_pj = static_cast<double>(r.mem_bits) * spec.mem_access_energy_pj_per_bit;
  r.energy.compute_pj = static_cast<double>(r.compute_ops) * spec.compute_energy_pj_per_op;
  r.energy.noc_pj = static_cast<double>(r.noc_bit_hops) * spec.noc_energy_pj_per_bit_hop;
  r.energy.total_pj = r.energy.memory_pj + r.energy.compute_pj + r.energy.noc_pj;
  if (r.energy.total_pj != r.energy.memory_pj + r.energy.compute_pj + r.energy.noc_pj)
    throw InvariantViolation("energy components do not sum to the total");
  return r;
}

std::vector<SimReport> run_decode_range(const ModelSpec& model, const MappingPlan& plan,
                                        const SparsityConfig& cfg, const HardwareSpec& spec,
                                        Mode mode, std::int64_t seq_from, std::int64_t seq_to,
                                        std::int64_t stride, const SimOptions& options) {
  if (seq_from > seq_to) throw ConfigError("run_decode_range: seq_from exceeds seq_to");
  std::vector<SimReport> out;
  if (seq_from == seq_to) return out;
  if (stride <= 0) throw ConfigError("run_decode_range: stride must be positive");
  for (std::int64_t L = seq_from; L < seq_to; L += stride)
    out.push_back(simulate_decode_step(model, plan, cfg, spec, mode, L, options));
  return out;
}

}  // namespace hbsim
