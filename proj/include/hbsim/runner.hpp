// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment pipeline shared by the command-line tool and the tests:
// workload -> mapper -> simulator, plus the optional kernel self-check.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hbsim/sim.hpp"
#include "hbsim/verify.hpp"

namespace hbsim {

struct RunConfig {
  // Built-in model name or path to a model JSON file.
  std::string model = "llama2-7b";
  // Optional JSON files; empty means built-in defaults.
  std::string hw_path;
  std::string sparsity_path;
  std::string alpha_path;
  std::vector<Mode> modes;
  std::vector<std::int64_t> seq_lens;
  std::filesystem::path out_dir = "hbsim-out";
  bool verify = false;
  std::uint64_t seed = 0;
  bool dump_plan = false;
  // Used when no alpha file is given.
  double static_sparsity = 0.5;
  // Classification threshold; unset means the profile median.
  std::optional<double> threshold;
  SimOptions options;
  // 0 picks std::thread::hardware_concurrency().
  int workers = 0;

  // Throws ConfigError when no mode or no sequence length is given.
  void validate() const;
};

struct SummaryRow {
  Mode mode = Mode::Full;
  std::int64_t seq_len = 0;
  Cycles cycles = 0;
  double energy_pj = 0.0;
  // Full / this mode.
  double speedup = 0.0;
  double energy_gain = 0.0;
};

struct RunResult {
  MappingPlan plan;
  std::vector<SimReport> reports;
  std::vector<SummaryRow> summary;
  std::vector<CheckResult> checks;
  bool verify_passed = true;
};

// Parses "4096", "12k", "256k" or "1m" (binary multiples).
std::int64_t parse_seq_len(const std::string& text);

// Everything `run` computes, without touching the filesystem.
RunResult execute(const RunConfig& config);

// execute() plus output files in config.out_dir:
//   report_<mode>_<seq_len>.json, timelines.csv, summary.txt,
//   plan.json (--dump-plan) and verify.json (--verify).
RunResult run(const RunConfig& config, std::ostream& log);

std::string format_summary(const std::vector<SummaryRow>& rows, const std::string& model);

}  // namespace hbsim
