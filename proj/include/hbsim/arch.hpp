// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <string>

namespace hbsim {

using Cycles = std::uint64_t;

struct BankCoord {
  int row = 0;
  int col = 0;

  friend auto operator<=>(const BankCoord&, const BankCoord&) = default;
};

inline int manhattan(BankCoord a, BankCoord b) {
  const int dr = a.row > b.row ? a.row - b.row : b.row - a.row;
  const int dc = a.col > b.col ? a.col - b.col : b.col - a.col;
  return dr + dc;
}

// Hardware description of the hybrid-bonded accelerator. Defaults describe a
// 4x4 bank array: 16 DCIM macros of 900 GOPS per bank at int8, a 256-bit
// memory port per bank, 0.88 pJ/bit stacked-DRAM access and 24 TOPS/W compute.
//
// All cycle counts produced from this spec are in the memory-die clock domain.
struct HardwareSpec {
  int mesh_rows = 4;
  int mesh_cols = 4;

  std::uint64_t noc_link_bits = 256;
  // 900 GOPS x 16 macros = 14.4 TOPS per bank, i.e. 36000 ops per 400 MHz cycle.
  std::uint64_t bank_compute_ops_per_cycle = 36000;
  std::uint64_t mem_bits_per_cycle_per_bank = 256;

  double mem_access_energy_pj_per_bit = 0.88;
  double compute_energy_pj_per_op = 1.0 / 24.0;
  double noc_energy_pj_per_bit_hop = 0.1;

  double logic_frequency_hz = 400e6;
  double mem_frequency_hz = 400e6;

  // 32 MB/macro x 16 macros/bank x 4 stacked layers.
  std::uint64_t bank_mem_capacity_bits = 32ull * 1024 * 1024 * 16 * 4 * 8;
  // 8 x 128 KB SRAM per logic bank.
  std::uint64_t logic_sram_bits_per_bank = 8ull * 128 * 1024 * 8;

  // Informational only; never feeds the timing model.
  std::map<std::string, std::string> refresh_period_metadata = {
      {"<85C", "32ms"}, {"<95C", "16ms"}, {"<105C", "8ms"}, {"<115C", "4ms"}};
  std::string logic_technology = "22nm";
  double logic_vdd = 0.7;
  double mem_vdd = 1.2;

  int bank_count() const { return mesh_rows * mesh_cols; }
  bool contains(BankCoord c) const {
    return c.row >= 0 && c.col >= 0 && c.row < mesh_rows && c.col < mesh_cols;
  }
  BankCoord coord_of(int bank) const { return {bank / mesh_cols, bank % mesh_cols}; }
  int bank_of(BankCoord c) const { return c.row * mesh_cols + c.col; }

  // Throws ConfigError when any capacity, bandwidth, rate or energy is not
  // strictly positive.
  void validate() const;

  friend bool operator==(const HardwareSpec&, const HardwareSpec&) = default;
};

// ops/cycle for a bank delivering `gops_per_bank` GOPS at `frequency_hz`.
std::uint64_t ops_per_cycle_from_throughput(double gops_per_bank, double frequency_hz);

std::uint64_t ceil_div(std::uint64_t num, std::uint64_t den);

// One MAC counts as two ops.
Cycles compute_cycles(std::uint64_t mac_count, const HardwareSpec& spec);
Cycles compute_cycles_for_ops(std::uint64_t ops, const HardwareSpec& spec);
Cycles memory_cycles(std::uint64_t bits, const HardwareSpec& spec);

// Store-and-forward, contention-free: hops x flits. Throws std::out_of_range
// for coordinates outside the mesh.
Cycles noc_cycles(std::uint64_t bits, BankCoord src, BankCoord dst, const HardwareSpec& spec);

double energy_pj(std::uint64_t mem_bits, std::uint64_t mac_count, std::uint64_t noc_bit_hops,
                 const HardwareSpec& spec);

}  // namespace hbsim
