// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "hbsim/error.hpp"
#include "hbsim/mapping.hpp"
#include "hbsim/workload.hpp"
#include "oracles.hpp"

using namespace hbsim;

namespace {

std::vector<std::vector<int>> stages_of(const std::vector<StagePlan>& plan) {
  std::vector<std::vector<int>> out;
  for (const auto& s : plan) out.push_back(s.stages);
  return out;
}

BankCoord at(int idx, int cols) { return {idx / cols, idx % cols}; }

// Random placement of n_r retrieval and n_s streaming heads on distinct banks.
std::vector<PlacedHead> random_placement(std::mt19937_64& rng, int n_r, int n_s, int rows, int cols) {
  std::vector<int> cells(static_cast<std::size_t>(rows * cols));
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  std::vector<PlacedHead> heads;
  for (int i = 0; i < n_r + n_s; ++i)
    heads.push_back({i, i < n_r ? HeadKind::Retrieval : HeadKind::Streaming, at(cells[static_cast<std::size_t>(i)], cols)});
  std::shuffle(heads.begin(), heads.end(), rng);
  return heads;
}

void check_tiling(const std::vector<PlacedHead>& heads, const TilePlan& plan) {
  const int n_r = static_cast<int>(std::count_if(heads.begin(), heads.end(),
                                                 [](const PlacedHead& h) { return h.kind == HeadKind::Retrieval; }));
  const int n = static_cast<int>(heads.size());
  const int t = std::min(n_r, n - n_r);
  CHECK(plan.t == t);
  CHECK(static_cast<int>(plan.tiles.size()) == t);
  CHECK(plan.capacity == (n + t - 1) / t);
  std::vector<int> seen(heads.size(), 0);
  int worst = 0;
  for (const auto& tile : plan.tiles) {
    CHECK(static_cast<int>(tile.members.size()) <= plan.capacity);
    REQUIRE(!tile.members.empty());
    CHECK(tile.members.front() == tile.anchor);
    CHECK(std::is_sorted(tile.members.begin() + 1, tile.members.end()));
    const auto& anchor = heads[static_cast<std::size_t>(tile.anchor)];
    CHECK(anchor.kind == plan.minority);
    for (std::size_t i = 0; i < tile.members.size(); ++i) {
      const auto& h = heads[static_cast<std::size_t>(tile.members[i])];
      ++seen[static_cast<std::size_t>(tile.members[i])];
      if (i > 0) {
        CHECK(h.kind != plan.minority);
        worst = std::max(worst, manhattan(anchor.location, h.location));
      }
    }
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
  CHECK(worst == plan.max_dist);
}

int brute_force_max_dist(const std::vector<PlacedHead>& heads, HeadKind minority, int capacity) {
  std::vector<oracle::Pt> anchors, majors;
  for (const auto& h : heads)
    (h.kind == minority ? anchors : majors).push_back({h.location.row, h.location.col});
  const int hall = oracle::min_max_dist_hall(anchors, majors, capacity - 1);
  double space = 1;
  for (std::size_t i = 0; i < majors.size(); ++i) space *= static_cast<double>(anchors.size());
  if (space <= 2e5) CHECK(oracle::min_max_dist_exhaustive(anchors, majors, capacity - 1) == hall);
  return hall;
}

}  // namespace

TEST_SUITE("mapping") {
  TEST_CASE("decomposition examples") {
    using S = std::vector<std::vector<int>>;
    CHECK(stages_of(decompose_heads(16, 16)) == S{{16}});
    CHECK(stages_of(decompose_heads(10, 16)) == S{{8, 2}});
    CHECK(stages_of(decompose_heads(40, 16)) == S{{16}, {16}, {8}});
    CHECK(stages_of(decompose_heads(32, 16)) == S{{16}, {16}});
    CHECK(stages_of(decompose_heads(8, 16)) == S{{8}});
    CHECK(stages_of(decompose_heads(1, 1)) == S{{1}});
    CHECK(decompose_heads(10, 16)[0].banks_per_head(0) == 2);
    CHECK(decompose_heads(10, 16)[0].banks_per_head(1) == 8);
    const auto p = decompose_heads(40, 16);
    CHECK(stage_count(p) == 3);
    CHECK_THROWS_AS(decompose_heads(0, 16), ConfigError);
    CHECK_THROWS_AS(decompose_heads(4, 0), ConfigError);
  }

  TEST_CASE("greedy stage count equals the coin-change minimum") {
    for (int n_b : {4, 8, 12, 16, 24})
      for (int n_h = 1; n_h <= n_b; ++n_h) {
        const auto plan = decompose_heads(n_h, n_b);
        REQUIRE(plan.size() == 1);
        CHECK(stage_count(plan) == oracle::min_divisor_parts(n_h, n_b));
      }
  }

  TEST_CASE("property: stage sums and divisibility") {
    for (int n_b = 1; n_b <= 64; ++n_b)
      for (int n_h = 1; n_h <= 64; ++n_h) {
        const auto plan = decompose_heads(n_h, n_b);
        int total = 0;
        for (const auto& seg : plan) {
          CHECK(seg.n_banks == n_b);
          CHECK(seg.head_count() <= n_b);
          for (int s : seg.stages) {
            CHECK(n_b % s == 0);
            total += s;
          }
        }
        CHECK(total == n_h);
        CHECK(static_cast<int>(plan.size()) == (n_h + n_b - 1) / n_b);
      }
  }

  TEST_CASE("strict distinct decomposition") {
    CHECK(stages_of(decompose_heads(10, 16, DecompositionMode::StrictDistinct)) ==
          std::vector<std::vector<int>>{{8, 2}});
    CHECK(stages_of(decompose_heads(7, 12, DecompositionMode::StrictDistinct)) ==
          std::vector<std::vector<int>>{{6, 1}});
    // 3 = 1 + 1 + 1 is the only split over divisors {1, 5} of 5.
    CHECK_THROWS_AS(decompose_heads(3, 5, DecompositionMode::StrictDistinct), ConfigError);
    CHECK(stages_of(decompose_heads(3, 5)) == std::vector<std::vector<int>>{{1, 1, 1}});
    for (int n_b = 1; n_b <= 48; ++n_b)
      for (int n_h = 1; n_h <= n_b; ++n_h) {
        std::vector<StagePlan> plan;
        try {
          plan = decompose_heads(n_h, n_b, DecompositionMode::StrictDistinct);
        } catch (const ConfigError&) {
          continue;
        }
        const auto& st = plan.front().stages;
        CHECK(std::set<int>(st.begin(), st.end()).size() == st.size());
        CHECK(std::accumulate(st.begin(), st.end(), 0) == n_h);
      }
  }

  TEST_CASE("max-flow on a small network") {
    MaxFlow f(4);
    f.add_edge(0, 1, 3);
    f.add_edge(0, 2, 2);
    f.add_edge(1, 2, 1);
    f.add_edge(1, 3, 2);
    f.add_edge(2, 3, 3);
    CHECK(f.solve(0, 3) == 5);
    CHECK(f.flow_on(0) + f.flow_on(1) == 5);
    f.set_capacity(1, 3);
    CHECK(f.solve(0, 3) == 0);
    CHECK_THROWS_AS(f.set_capacity(0, 0), std::invalid_argument);
  }

  TEST_CASE("tiling input validation") {
    std::vector<PlacedHead> only_r{{0, HeadKind::Retrieval, {0, 0}}, {1, HeadKind::Retrieval, {0, 1}}};
    CHECK_THROWS_AS(assign_tiles(only_r, 2, 2), ConfigError);
    std::vector<PlacedHead> outside{{0, HeadKind::Retrieval, {0, 0}}, {1, HeadKind::Streaming, {2, 0}}};
    CHECK_THROWS_AS(assign_tiles(outside, 2, 2), ConfigError);
    std::vector<PlacedHead> crowded{{0, HeadKind::Retrieval, {0, 0}}, {1, HeadKind::Streaming, {0, 0}},
                                    {2, HeadKind::Streaming, {0, 0}}};
    CHECK_THROWS_AS(assign_tiles(crowded, 1, 2), ConfigError);
  }

  TEST_CASE("tiling: four retrieval heads in the corners of a 4x4 mesh") {
    std::vector<PlacedHead> heads;
    const std::set<int> corners{0, 3, 12, 15};
    for (int b = 0; b < 16; ++b)
      heads.push_back({b, corners.count(b) ? HeadKind::Retrieval : HeadKind::Streaming, at(b, 4)});
    const auto plan = assign_tiles(heads, 4, 4);
    check_tiling(heads, plan);
    CHECK(plan.t == 4);
    CHECK(plan.capacity == 4);
    CHECK(plan.max_dist == 2);
    CHECK(plan.max_dist == brute_force_max_dist(heads, plan.minority, plan.capacity));
    for (const auto& tile : plan.tiles) CHECK(tile.members.size() == 4);
  }

  TEST_CASE("tiling: streaming minority and ties") {
    std::vector<PlacedHead> heads{{0, HeadKind::Retrieval, {0, 0}},
                                  {1, HeadKind::Retrieval, {0, 1}},
                                  {2, HeadKind::Streaming, {0, 2}}};
    const auto plan = assign_tiles(heads, 1, 3);
    CHECK(plan.minority == HeadKind::Streaming);
    CHECK(plan.tiles.size() == 1);
    CHECK(plan.max_dist == 2);
    std::vector<PlacedHead> even{{0, HeadKind::Streaming, {0, 0}}, {1, HeadKind::Retrieval, {0, 1}}};
    CHECK(assign_tiles(even, 1, 2).minority == HeadKind::Retrieval);
  }

  TEST_CASE("tiling optimality against brute force") {
    std::mt19937_64 rng(21);
    for (int inst = 0; inst < 120; ++inst) {
      const int n = std::uniform_int_distribution<int>(2, 16)(rng);
      const int n_r = std::uniform_int_distribution<int>(1, n - 1)(rng);
      const auto heads = random_placement(rng, n_r, n - n_r, 4, 4);
      const auto plan = assign_tiles(heads, 4, 4);
      check_tiling(heads, plan);
      CHECK(plan.max_dist == brute_force_max_dist(heads, plan.minority, plan.capacity));
    }
  }

  TEST_CASE("tiling is deterministic") {
    std::mt19937_64 rng(22);
    const auto heads = random_placement(rng, 5, 9, 4, 4);
    CHECK(assign_tiles(heads, 4, 4) == assign_tiles(heads, 4, 4));
  }

  TEST_CASE("interleaving examples") {
    CHECK(interleave_counts(33, 4) == std::vector<std::int64_t>{9, 8, 8, 8});
    CHECK(interleave_counts(33, 4, 2) == std::vector<std::int64_t>{8, 8, 9, 8});
    CHECK(interleave_counts(0, 3) == std::vector<std::int64_t>{0, 0, 0});
    CHECK_THROWS_AS(interleave_counts(4, 0), std::invalid_argument);

    const std::vector<BankCoord> banks{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    const auto s = interleave_page(6, banks, 3);
    CHECK(s.per_bank == std::vector<std::vector<int>>{{1, 5}, {2}, {3}, {0, 4}});
    CHECK_THROWS_AS(interleave_page(4, {}), std::invalid_argument);
  }

  TEST_CASE("co-placement is a bijection onto stored tokens") {
    InterleaveMap imap;
    imap.banks = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    for (PageId p = 0; p < 20; ++p) imap.add_page(p, 32, static_cast<int>(p % 4));
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<PageId> sel;
      for (PageId p = 0; p < 20; ++p)
        if (rng() % 3 == 0) sel.push_back(p);
      const auto work = co_place(sel, imap);
      std::set<std::pair<PageId, int>> all;
      for (std::size_t b = 0; b < work.size(); ++b)
        for (const auto& ref : work[b]) {
          const auto& stored = imap.pages.at(ref.page).per_bank[b];
          CHECK(std::find(stored.begin(), stored.end(), ref.offset) != stored.end());
          CHECK(all.insert({ref.page, ref.offset}).second);
        }
      CHECK(all.size() == sel.size() * 32);
    }
    const std::vector<PageId> missing{99};
    CHECK_THROWS_AS(co_place(missing, imap), std::out_of_range);
  }

  TEST_CASE("property: interleaved counts match the counting oracle and stay balanced") {
    std::mt19937_64 rng(24);
    for (int trial = 0; trial < 1000; ++trial) {
      const int n_banks = std::uniform_int_distribution<int>(1, 8)(rng);
      std::vector<int> sizes(static_cast<std::size_t>(std::uniform_int_distribution<int>(1, 20)(rng)));
      for (auto& s : sizes) s = std::uniform_int_distribution<int>(1, 40)(rng);
      InterleaveMap imap;
      for (int b = 0; b < n_banks; ++b) imap.banks.push_back(at(b, 8));
      std::vector<PageId> sel;
      for (std::size_t p = 0; p < sizes.size(); ++p) {
        imap.add_page(static_cast<PageId>(p), sizes[p]);
        sel.push_back(static_cast<PageId>(p));
      }
      const auto work = co_place(sel, imap);
      const auto want = oracle::striped_counts(sizes, n_banks);
      std::int64_t lo = INT64_MAX, hi = 0;
      for (int b = 0; b < n_banks; ++b) {
        const auto got = static_cast<std::int64_t>(work[static_cast<std::size_t>(b)].size());
        CHECK(got == want[static_cast<std::size_t>(b)]);
        lo = std::min(lo, got);
        hi = std::max(hi, got);
      }
      CHECK(hi - lo <= static_cast<std::int64_t>(sel.size()));
    }
  }

  TEST_CASE("paged baseline concentrates an adversarial selection") {
    const std::vector<PageId> sel{0, 4, 8, 12};
    CHECK(paged_per_bank_counts(sel, 32, 4) == std::vector<std::int64_t>{128, 0, 0, 0});
    InterleaveMap imap;
    imap.banks = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    for (PageId p : sel) imap.add_page(p, 32);
    for (const auto& w : co_place(sel, imap)) CHECK(w.size() == 32);
  }

  TEST_CASE("build_mapping") {
    HardwareSpec hw;
    const auto model = builtin_model("llama3-8b");
    auto alphas = gen_alpha_profile(model, 0.5, 3);
    const auto profiles = classify_heads(alphas, 0.5);
    const auto plan = build_mapping(model.n_layers, model.n_kv_heads, profiles, hw);
    CHECK(plan.mesh_rows == 4);
    REQUIRE(plan.layers.size() == 32);
    for (const auto& layer : plan.layers) {
      REQUIRE(layer.stages.size() == 1);
      const auto& st = layer.stages.front();
      CHECK(st.banks_per_head == 2);
      REQUIRE(st.heads.size() == 8);
      std::set<int> banks;
      for (const auto& g : st.heads) {
        CHECK(g.layer == layer.layer);
        CHECK(g.kind == profiles[static_cast<std::size_t>(layer.layer * 8 + g.head)].kind);
        for (int b : g.banks) CHECK(banks.insert(b).second);
      }
      CHECK(banks.size() == 16);
      CHECK(st.tiling.t == 4);
    }

    const auto vicuna = builtin_model("vicuna-13b");
    const auto vp = classify_heads(gen_alpha_profile(vicuna, 0.5, 3), 0.5);
    const auto vplan = build_mapping(vicuna.n_layers, vicuna.n_kv_heads, vp, hw);
    CHECK(vplan.layers.front().stages.size() == 3);

    std::vector<HeadProfile> uniform(8);
    for (int h = 0; h < 8; ++h) uniform[static_cast<std::size_t>(h)] = {0, h, HeadKind::Retrieval, 1.0};
    const auto up = build_mapping(1, 8, uniform, hw);
    CHECK(up.layers[0].stages[0].tiling.tiles.size() == 8);

    CHECK_THROWS_AS(build_mapping(1, 8, std::span<const HeadProfile>(uniform).first(7), hw), ConfigError);
    auto dup = uniform;
    dup[1].head = 0;
    CHECK_THROWS_AS(build_mapping(1, 8, dup, hw), ConfigError);
  }
}
