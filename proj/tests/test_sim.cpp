// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "hbsim/error.hpp"
#include "hbsim/sim.hpp"

using namespace hbsim;

namespace {

ModelSpec custom_model(int layers, int kv, int q) {
  ModelSpec m;
  m.name = "custom";
  m.n_layers = layers;
  m.n_kv_heads = kv;
  m.n_q_heads = q;
  m.head_dim = 128;
  return m;
}

std::vector<HeadProfile> kinds(int layers, const std::vector<HeadKind>& per_layer) {
  std::vector<HeadProfile> out;
  for (int l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < per_layer.size(); ++h)
      out.push_back({l, static_cast<int>(h), per_layer[h], per_layer[h] == HeadKind::Retrieval ? 1.0 : 0.0});
  return out;
}

Cycles idle_on(const SimReport& r, const std::vector<int>& banks) {
  Cycles s = 0;
  for (int b : banks) s += r.banks[static_cast<std::size_t>(b)].idle_cycles;
  return s;
}

std::uint64_t topk_cost(std::int64_t m) {
  return m < 2 ? 0 : static_cast<std::uint64_t>(std::ceil(static_cast<double>(m) * std::log2(static_cast<double>(m))));
}

}  // namespace

TEST_SUITE("sim") {
  TEST_CASE("mode and scope names") {
    CHECK(parse_mode("full") == Mode::Full);
    CHECK(parse_mode("balanced") == Mode::SparseBalanced);
    CHECK(parse_mode("sparse-unbalanced") == Mode::SparseUnbalanced);
    CHECK(to_string(Mode::SparseBalanced) == "sparse-balanced");
    CHECK(parse_scope("end-to-end") == Scope::EndToEnd);
    CHECK_THROWS_AS(parse_mode("sparse"), ConfigError);
    CHECK_THROWS_AS(parse_scope("all"), ConfigError);
  }

  TEST_CASE("occupancy") {
    SparsityConfig c;
    c.page_size = 4;
    c.n_sink = 2;
    c.n_local = 6;
    c.budget_pages = 3;
    CHECK(occupancy(0, c, HeadKind::Retrieval) == KvOccupancy{});
    CHECK(occupancy(5, c, HeadKind::Retrieval) == KvOccupancy{2, 3, 0, 0});
    CHECK(occupancy(19, c, HeadKind::Retrieval) == KvOccupancy{2, 6, 11, 3});
    // 24 paged tokens = 6 full pages; three are evicted.
    CHECK(occupancy(32, c, HeadKind::Retrieval) == KvOccupancy{2, 6, 12, 3});
    // 25 paged tokens: the open page is kept, four sealed pages evicted.
    CHECK(occupancy(33, c, HeadKind::Retrieval) == KvOccupancy{2, 6, 9, 3});
    CHECK(occupancy(33, c, HeadKind::Streaming) == KvOccupancy{2, 6, 0, 0});
  }

  TEST_CASE("head demand") {
    SparsityConfig c;
    const auto full = head_demand(HeadKind::Streaming, {0}, 100000, c, Mode::Full);
    CHECK(full.attended_tokens == 100000);
    CHECK(full.resident_tokens == 64 + 64);
    CHECK(full.memory_tokens == 100000 - 128);

    const auto s = head_demand(HeadKind::Streaming, {0}, 100000, c, Mode::SparseBalanced);
    CHECK(s.attended_tokens == 64 + 1536);
    CHECK(s.metadata_pages == 0);

    const auto r = head_demand(HeadKind::Retrieval, {0, 1}, 100000, c, Mode::SparseUnbalanced);
    CHECK(r.attended_tokens == c.selection_length());
    CHECK(r.top_k == 78);
    CHECK(r.metadata_pages == (100000 - 1600 + 31) / 32);
    CHECK(r.memory_tokens == r.attended_tokens - 128);

    const auto reuse = head_demand(HeadKind::Retrieval, {0}, 100001, c, Mode::SparseUnbalanced);
    CHECK(reuse.metadata_pages == 0);
    CHECK(reuse.attended_tokens == c.selection_length());

    // Short context falls back to dense.
    const auto shortc = head_demand(HeadKind::Retrieval, {0}, 3000, c, Mode::SparseUnbalanced);
    CHECK(shortc.attended_tokens == 3000);
    CHECK(shortc.metadata_pages == 0);
    CHECK_THROWS_AS(head_demand(HeadKind::Retrieval, {}, 10, c, Mode::Full), ConfigError);
  }

  TEST_CASE("closed form: one retrieval and three streaming heads on one bank each") {
    const auto model = custom_model(1, 4, 16);
    const HardwareSpec hw;
    SparsityConfig c;
    const std::int64_t L = 65536;
    std::vector<HeadDemand> d{head_demand(HeadKind::Retrieval, {0}, L, c, Mode::SparseUnbalanced)};
    for (int b = 1; b < 4; ++b) d.push_back(head_demand(HeadKind::Streaming, {b}, L, c, Mode::SparseUnbalanced));
    const std::vector<int> banks{0, 1, 2, 3};
    const auto w = distribute_tile(d, banks, Placement::OwnBanks, model, hw);

    const std::uint64_t g = 4, hd = 128, tb = 2 * 128 * 8;
    const std::uint64_t tok_ops = 2 * g * 3 * hd + g * 8;
    const std::int64_t pages = (L - 1600 + 31) / 32;
    CHECK(w[0].mem_bits == static_cast<std::uint64_t>(c.selection_length() - 128 + pages) * tb);
    CHECK(w[0].ops == static_cast<std::uint64_t>(c.selection_length()) * tok_ops +
                          static_cast<std::uint64_t>(pages) * 2 * g * hd + topk_cost(pages));
    for (int b = 1; b < 4; ++b) {
      CHECK(w[static_cast<std::size_t>(b)].mem_bits == (1600 - 128) * tb);
      CHECK(w[static_cast<std::size_t>(b)].ops == 1600 * tok_ops);
      CHECK(w[static_cast<std::size_t>(b)].noc_cycles == 0);
    }
    const auto t = to_timelines(w, hw);
    CHECK(t[0].memory_cycles == ceil_div(w[0].mem_bits, 256));
    CHECK(t[0].idle_cycles == 0);
    CHECK(t[1].idle_cycles == t[0].busy() - t[1].busy());

    // Interleaving keeps total KV traffic and only adds merge messages.
    const auto bw = balance_tile(d, banks, model, hw);
    std::uint64_t own_bits = 0, bal_bits = 0, bal_tokens = 0;
    for (const auto& x : w) own_bits += x.mem_bits;
    for (const auto& x : bw) {
      bal_bits += x.mem_bits;
      bal_tokens += x.kv_tokens;
    }
    CHECK(own_bits == bal_bits);
    CHECK(bal_tokens == static_cast<std::uint64_t>(c.selection_length() + 3 * 1600));
    const auto bt = to_timelines(bw, hw);
    Cycles own_max = 0, bal_max = 0;
    for (const auto& x : t) own_max = std::max(own_max, x.busy());
    for (const auto& x : bt) bal_max = std::max(bal_max, x.busy());
    CHECK(bal_max < own_max);
  }

  TEST_CASE("property: interleaved KV tokens differ by at most one per head across tile banks") {
    const auto model = custom_model(1, 4, 4);
    const HardwareSpec hw;
    SparsityConfig c;
    for (std::int64_t L : {100, 5000, 40000, 123457}) {
      std::vector<HeadDemand> d;
      for (int b = 0; b < 4; ++b)
        d.push_back(head_demand(b == 2 ? HeadKind::Retrieval : HeadKind::Streaming, {b}, L, c, Mode::SparseBalanced));
      const std::vector<int> banks{0, 1, 2, 3};
      const auto w = balance_tile(d, banks, model, hw);
      std::vector<std::int64_t> mem_tokens;
      std::int64_t total = 0;
      for (const auto& x : w) mem_tokens.push_back(static_cast<std::int64_t>(x.kv_tokens));
      for (const auto& h : d) total += h.memory_tokens;
      // Resident tokens are computed on the home bank only.
      for (std::size_t b = 0; b < 4; ++b) mem_tokens[b] -= d[b].resident_tokens;
      CHECK(std::accumulate(mem_tokens.begin(), mem_tokens.end(), std::int64_t{0}) == total);
      const auto [lo, hi] = std::minmax_element(mem_tokens.begin(), mem_tokens.end());
      CHECK(*hi - *lo <= 4);
    }
  }

  TEST_CASE("distribute_tile validation") {
    const auto model = custom_model(1, 2, 2);
    const HardwareSpec hw;
    std::vector<HeadDemand> d{head_demand(HeadKind::Retrieval, {5}, 10, SparsityConfig{}, Mode::Full)};
    const std::vector<int> banks{0, 1};
    CHECK_THROWS_AS(distribute_tile(d, banks, Placement::OwnBanks, model, hw), ConfigError);
    const std::vector<int> twice{0, 0};
    CHECK_THROWS_AS(distribute_tile({}, twice, Placement::OwnBanks, model, hw), ConfigError);
    CHECK_THROWS_AS(distribute_tile({}, {}, Placement::OwnBanks, model, hw), ConfigError);
  }

  TEST_CASE("degenerate sparsity equals full attention") {
    const auto model = builtin_model("llama3-8b");
    const HardwareSpec hw;
    SparsityConfig c;
    c.top_k = 1 << 20;
    c.budget_pages = SparsityConfig::kUnlimitedPages;
    const auto profiles = kinds(32, std::vector<HeadKind>(8, HeadKind::Retrieval));
    const auto plan = build_mapping(32, 8, profiles, hw);
    for (std::int64_t L : {1, 4096, 65536}) {
      const auto full = simulate_decode_step(model, plan, c, hw, Mode::Full, L);
      const auto un = simulate_decode_step(model, plan, c, hw, Mode::SparseUnbalanced, L);
      CHECK(un.attention_cycles == full.attention_cycles);
      CHECK(un.mem_bits == full.mem_bits);
      CHECK(un.tokens_processed == full.tokens_processed);
    }
  }

  TEST_CASE("balancing a retrieval tile with two streaming heads") {
    const auto model = custom_model(1, 3, 12);
    HardwareSpec hw;
    hw.mesh_rows = 1;
    hw.mesh_cols = 3;
    const SparsityConfig c;
    const auto plan =
        build_mapping(1, 3, kinds(1, {HeadKind::Retrieval, HeadKind::Streaming, HeadKind::Streaming}), hw);
    REQUIRE(plan.layers[0].stages[0].tiling.tiles.size() == 1);
    const auto un = simulate_decode_step(model, plan, c, hw, Mode::SparseUnbalanced, 12288);
    const auto bal = simulate_decode_step(model, plan, c, hw, Mode::SparseBalanced, 12288);
    const auto un_idle = idle_on(un, {1, 2});
    CHECK(un_idle > 0);
    CHECK(un.banks[0].idle_cycles == 0);
    CHECK(idle_on(bal, {0, 1, 2}) * 20 <= idle_on(un, {0, 1, 2}));
    const double speedup = static_cast<double>(un.attention_cycles) / static_cast<double>(bal.attention_cycles);
    CHECK(speedup >= 1.6);
    CHECK(speedup <= 2.4);
    CHECK(bal.tiles_balanced == 1);
    CHECK(bal.noc_bit_hops > 0);
    CHECK(un.noc_bit_hops == 0);
  }

  TEST_CASE("property: balanced never slower, sparse never fetches more") {
    const HardwareSpec hw;
    const SparsityConfig c;
    for (const auto& name : builtin_model_names()) {
      const auto model = builtin_model(name);
      const auto profiles = classify_heads(gen_alpha_profile(model, 0.5, 4), 0.5);
      const auto plan = build_mapping(model.n_layers, model.n_kv_heads, profiles, hw);
      for (std::int64_t L : {1000, 8192, 50001, 262144}) {
        const auto full = simulate_decode_step(model, plan, c, hw, Mode::Full, L);
        const auto un = simulate_decode_step(model, plan, c, hw, Mode::SparseUnbalanced, L);
        const auto bal = simulate_decode_step(model, plan, c, hw, Mode::SparseBalanced, L);
        CHECK(bal.attention_cycles <= un.attention_cycles);
        CHECK(bal.kv_bits_fetched == un.kv_bits_fetched);
        CHECK(un.tokens_processed <= full.tokens_processed);
        const double e = bal.energy.memory_pj + bal.energy.compute_pj + bal.energy.noc_pj;
        CHECK(bal.energy.total_pj == doctest::Approx(e).epsilon(1e-12));
        for (const auto* r : {&full, &un, &bal})
          for (const auto& b : r->banks) CHECK(b.idle_cycles <= r->attention_cycles);
      }
    }
  }

  TEST_CASE("property: full-attention traffic grows at least linearly") {
    const HardwareSpec hw;
    const SparsityConfig c;
    const auto model = builtin_model("llama2-7b");
    const auto profiles = classify_heads(gen_alpha_profile(model, 0.5, 4), 0.5);
    const auto plan = build_mapping(model.n_layers, model.n_kv_heads, profiles, hw);
    for (std::int64_t L : {1024, 4096, 32768}) {
      const auto a = simulate_decode_step(model, plan, c, hw, Mode::Full, L);
      const auto b = simulate_decode_step(model, plan, c, hw, Mode::Full, 2 * L);
      CHECK(b.kv_bits_fetched >= 2 * a.kv_bits_fetched);
      CHECK(b.attention_cycles > a.attention_cycles);
    }
  }

  TEST_CASE("end-to-end scope adds projection and FFN work") {
    const HardwareSpec hw;
    const SparsityConfig c;
    const auto model = builtin_model("llama3-8b");
    const auto profiles = classify_heads(gen_alpha_profile(model, 0.5, 4), 0.5);
    const auto plan = build_mapping(model.n_layers, model.n_kv_heads, profiles, hw);
    SimOptions o;
    o.scope = Scope::EndToEnd;
    const auto att = simulate_decode_step(model, plan, c, hw, Mode::SparseBalanced, 32768);
    const auto e2e = simulate_decode_step(model, plan, c, hw, Mode::SparseBalanced, 32768, o);
    CHECK(e2e.attention_cycles == att.attention_cycles);
    CHECK(e2e.end_to_end_cycles > att.end_to_end_cycles);
    CHECK(att.end_to_end_cycles == att.attention_cycles);
    CHECK(e2e.mem_bits > att.mem_bits);
    CHECK(e2e.kv_bits_fetched == att.kv_bits_fetched);
    CHECK(e2e.scope == Scope::EndToEnd);

    SimOptions ov;
    ov.overlap_compute_memory = true;
    CHECK(simulate_decode_step(model, plan, c, hw, Mode::Full, 32768, ov).attention_cycles <
          simulate_decode_step(model, plan, c, hw, Mode::Full, 32768).attention_cycles);
  }

  TEST_CASE("determinism") {
    const HardwareSpec hw;
    const SparsityConfig c;
    const auto model = builtin_model("mistral-7b");
    const auto profiles = classify_heads(gen_alpha_profile(model, 0.5, 9), 0.5);
    const auto plan = build_mapping(model.n_layers, model.n_kv_heads, profiles, hw);
    CHECK(simulate_decode_step(model, plan, c, hw, Mode::SparseBalanced, 77777) ==
          simulate_decode_step(model, plan, c, hw, Mode::SparseBalanced, 77777));
  }

  TEST_CASE("decode ranges") {
    const HardwareSpec hw;
    const SparsityConfig c;
    const auto model = builtin_model("llama3-8b");
    const auto profiles = classify_heads(gen_alpha_profile(model, 0.5, 4), 0.5);
    const auto plan = build_mapping(model.n_layers, model.n_kv_heads, profiles, hw);
    CHECK(run_decode_range(model, plan, c, hw, Mode::Full, 100, 100, 0).empty());
    CHECK_THROWS_AS(run_decode_range(model, plan, c, hw, Mode::Full, 100, 50, 1), ConfigError);
    CHECK_THROWS_AS(run_decode_range(model, plan, c, hw, Mode::Full, 100, 150, 0), ConfigError);

    const auto steps = run_decode_range(model, plan, c, hw, Mode::SparseBalanced, 40000, 40006, 1);
    REQUIRE(steps.size() == 6);
    for (const auto& s : steps) CHECK(s.selection_step == (s.seq_len % 4 == 0));
    CHECK(steps[0].attention_cycles > steps[1].attention_cycles);

    const auto full = run_decode_range(model, plan, c, hw, Mode::Full, 8192, 131072 + 1, 8192);
    const auto bal = run_decode_range(model, plan, c, hw, Mode::SparseBalanced, 8192, 131072 + 1, 8192);
    double prev = 0;
    for (std::size_t i = 0; i < full.size(); ++i) {
      const double s = static_cast<double>(full[i].attention_cycles) / static_cast<double>(bal[i].attention_cycles);
      CHECK(s >= prev);
      prev = s;
    }
    CHECK(prev > 5.0);
  }

  TEST_CASE("plan mismatches are configuration errors") {
    const HardwareSpec hw;
    const SparsityConfig c;
    const auto model = builtin_model("llama3-8b");
    const auto profiles = classify_heads(gen_alpha_profile(model, 0.5, 4), 0.5);
    const auto plan = build_mapping(model.n_layers, model.n_kv_heads, profiles, hw);
    CHECK_THROWS_AS(simulate_decode_step(builtin_model("llama2-7b"), plan, c, hw, Mode::Full, 10), ConfigError);
    HardwareSpec other;
    other.mesh_rows = 2;
    CHECK_THROWS_AS(simulate_decode_step(model, plan, c, other, Mode::Full, 10), ConfigError);
    auto broken = plan;
    broken.layers[3].stages[0].heads[1].banks = broken.layers[3].stages[0].heads[0].banks;
    CHECK_THROWS_AS(simulate_decode_step(model, broken, c, hw, Mode::Full, 10), ConfigError);
    CHECK_THROWS_AS(simulate_decode_step(model, plan, c, hw, Mode::Full, -1), ConfigError);
  }
}
