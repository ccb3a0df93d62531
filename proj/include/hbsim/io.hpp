// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

// JSON and CSV (de)serialization. Readers reject unknown keys so typos in
// configuration files surface as ConfigError instead of silent defaults.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hbsim/arch.hpp"
#include "hbsim/heads.hpp"
#include "hbsim/mapping.hpp"
#include "hbsim/sim.hpp"
#include "hbsim/sparsity.hpp"
#include "hbsim/workload.hpp"

namespace hbsim {

using Json = nlohmann::ordered_json;

// Every HardwareSpec field may be overridden; "bank_throughput_gops" is an
// alternative to "bank_compute_ops_per_cycle" converted at mem_frequency_hz.
HardwareSpec hardware_from_json(const Json& j);
Json to_json(const HardwareSpec& spec);

// "budget_pages" also accepts null or "unlimited".
SparsityConfig sparsity_from_json(const Json& j);
Json to_json(const SparsityConfig& cfg);

// A "base" key names a built-in model whose shape the other keys override.
ModelSpec model_from_json(const Json& j);
Json to_json(const ModelSpec& model);

TraceConfig trace_from_json(const Json& j);
Json to_json(const TraceConfig& cfg);

std::vector<AlphaEntry> alphas_from_json(const Json& j);
Json to_json(std::span<const AlphaEntry> alphas);

MappingPlan mapping_from_json(const Json& j);
Json to_json(const MappingPlan& plan);

SimReport report_from_json(const Json& j);
Json to_json(const SimReport& report);

Json read_json_file(const std::filesystem::path& path);
// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// Built-in model name, or a path to a model JSON file.
ModelSpec load_model(const std::string& name_or_path);

// Rows: model,mode,scope,seq_len,bank,row,col,compute,memory,noc,idle.
void write_timeline_csv(std::ostream& os, std::span<const SimReport> reports);

struct Comparison {
  std::string model;
  std::int64_t seq_len = 0;
  std::string mode_a;
  std::string mode_b;
  // a / b: values above 1 mean b is faster or cheaper.
  double cycle_ratio = 0.0;
  double energy_ratio = 0.0;
  double memory_bits_ratio = 0.0;
};

// Throws ConfigError unless both reports share model, seq_len, scope and mesh.
Comparison compare(const SimReport& a, const SimReport& b);
// Four significant digits, e.g. "1.000".
std::string format_ratio(double value);
std::string format_comparison(const Comparison& c);

}  // namespace hbsim
