// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "hbsim/arch.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "hbsim/error.hpp"

namespace hbsim {

void HardwareSpec::validate() const {
  auto require = [](bool ok, const char* field) {
    if (!ok) throw ConfigError(std::string("hardware spec: ") + field + " must be positive");
  };
  require(mesh_rows > 0, "mesh_rows");
  require(mesh_cols > 0, "mesh_cols");
  require(noc_link_bits > 0, "noc_link_bits");
  require(bank_compute_ops_per_cycle > 0, "bank_compute_ops_per_cycle");
  require(mem_bits_per_cycle_per_bank > 0, "mem_bits_per_cycle_per_bank");
  require(mem_access_energy_pj_per_bit > 0, "mem_access_energy_pj_per_bit");
  require(compute_energy_pj_per_op > 0, "compute_energy_pj_per_op");
  require(noc_energy_pj_per_bit_hop > 0, "noc_energy_pj_per_bit_hop");
  require(logic_frequency_hz > 0, "logic_frequency_hz");
  require(mem_frequency_hz > 0, "mem_frequency_hz");
  require(bank_mem_capacity_bits > 0, "bank_mem_capacity_bits");
  require(logic_sram_bits_per_bank > 0, "logic_sram_bits_per_bank");
}

std::uint64_t ops_per_cycle_from_throughput(double gops_per_bank, double frequency_hz) {
  if (!(gops_per_bank > 0) || !(frequency_hz > 0))
    throw ConfigError("throughput and frequency must be positive");
  return static_cast<std::uint64_t>(std::llround(gops_per_bank * 1e9 / frequency_hz));
}

std::uint64_t ceil_div(std::uint64_t num, std::uint64_t den) {
  return num / den + (num % den != 0 ? 1 : 0);
}

Cycles compute_cycles(std::uint64_t mac_count, const HardwareSpec& spec) {
  if (mac_count > std::numeric_limits<std::uint64_t>::max() / 2)
    throw std::overflow_error("compute_cycles: MAC count overflows op counter");
  return ceil_div(2 * mac_count, spec.bank_compute_ops_per_cycle);
}

Cycles compute_cycles_for_ops(std::uint64_t ops, const HardwareSpec& spec) {
  return ceil_div(ops, spec.bank_compute_ops_per_cycle);
}

Cycles memory_cycles(std::uint64_t bits, const HardwareSpec& spec) {
  return ceil_div(bits, spec.mem_bits_per_cycle_per_bank);
}

Cycles noc_cycles(std::uint64_t bits, BankCoord src, BankCoord dst, const HardwareSpec& spec) {
  if (!spec.contains(src) || !spec.contains(dst))
    throw std::out_of_range("noc_cycles: bank coordinate outside the mesh");
  const auto hops = static_cast<std::uint64_t>(manhattan(src, dst));
  return hops * ceil_div(bits, spec.noc_link_bits);
}

double energy_pj(std::uint64_t mem_bits, std::uint64_t mac_count, std::uint64_t noc_bit_hops,
                 const HardwareSpec& spec) {
  return static_cast<double>(mem_bits) * spec.mem_access_energy_pj_per_bit +
         2.0 * static_cast<double>(mac_count) * spec.compute_energy_pj_per_op +
         static_cast<double>(noc_bit_hops) * spec.noc_energy_pj_per_bit_hop;
}

}  // namespace hbsim
