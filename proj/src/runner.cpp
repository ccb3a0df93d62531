// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "hbsim/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <exception>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "hbsim/error.hpp"
#include "hbsim/io.hpp"

namespace hbsim {

void RunConfig::validate() const {
  if (modes.empty()) throw ConfigError("at least one --mode is required");
  if (seq_lens.empty()) throw ConfigError("at least one --seqlen is required");
  for (auto L : seq_lens)
    if (L < 0) throw ConfigError("sequence lengths must be non-negative");
  if (!(static_sparsity >= 0.0 && static_sparsity <= 1.0))
    throw ConfigError("static sparsity must lie in [0, 1]");
  if (workers < 0) throw ConfigError("worker count must be non-negative");
}

std::int64_t parse_seq_len(const std::string& text) {
  std::size_t digits = 0;
  while (digits < text.size() && std::isdigit(static_cast<unsigned char>(text[digits])) != 0) ++digits;
  if (digits == 0 || digits > 15) throw ConfigError("bad sequence length '" + text + "'");
  std::int64_t value = std::stoll(text.substr(0, digits));
  const std::string suffix = text.substr(digits);
  if (suffix == "k" || suffix == "K") value *= 1024;
  else if (suffix == "m" || suffix == "M") value *= 1024 * 1024;
  else if (!suffix.empty()) throw ConfigError("bad sequence length '" + text + "'");
  return value;
}

namespace {

struct Cell {
  Mode mode;
  std::int64_t seq_len;
};

std::vector<SimReport> simulate_cells(const std::vector<Cell>& cells, const ModelSpec& model,
                                      const MappingPlan& plan, const SparsityConfig& cfg,
                                      const HardwareSpec& hw, const SimOptions& options, int workers) {
  std::vector<SimReport> out(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        out[i] = simulate_decode_step(model, plan, cfg, hw, cells[i].mode, cells[i].seq_len, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  unsigned n = workers > 0 ? static_cast<unsigned>(workers) : std::max(1u, std::thread::hardware_concurrency());
  n = std::min<unsigned>(n, static_cast<unsigned>(cells.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace

RunResult execute(const RunConfig& config) {
  config.validate();
  const ModelSpec model = load_model(config.model);
  const HardwareSpec hw =
      config.hw_path.empty() ? HardwareSpec{} : hardware_from_json(read_json_file(config.hw_path));
  const SparsityConfig cfg =
      config.sparsity_path.empty() ? SparsityConfig{} : sparsity_from_json(read_json_file(config.sparsity_path));
  cfg.validate();

  const std::vector<AlphaEntry> alphas = config.alpha_path.empty()
                                             ? gen_alpha_profile(model, config.static_sparsity, config.seed)
                                             : alphas_from_json(read_json_file(config.alpha_path));
  const double threshold = config.threshold ? *config.threshold : median_threshold(alphas);
  std::vector<HeadProfile> profiles;
  try {
    profiles = classify_heads(alphas, threshold);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  RunResult result;
  result.plan = build_mapping(model.n_layers, model.n_kv_heads, profiles, hw);

  // Requested cells first; Full baselines for normalization are appended.
  std::vector<Cell> cells;
  for (Mode m : config.modes)
    for (auto L : config.seq_lens) cells.push_back({m, L});
  const std::size_t requested = cells.size();
  std::map<std::int64_t, std::size_t> full_of;
  for (std::size_t i = 0; i < requested; ++i)
    if (cells[i].mode == Mode::Full) full_of.emplace(cells[i].seq_len, i);
  for (auto L : config.seq_lens)
    if (full_of.count(L) == 0) {
      full_of.emplace(L, cells.size());
      cells.push_back({Mode::Full, L});
    }

  auto reports = simulate_cells(cells, model, result.plan, cfg, hw, config.options, config.workers);
  for (std::size_t i = 0; i < requested; ++i) {
    const auto& r = reports[i];
    const auto& full = reports[full_of.at(r.seq_len)];
    SummaryRow row;
    row.mode = r.mode;
    row.seq_len = r.seq_len;
    row.cycles = r.end_to_end_cycles;
    row.energy_pj = r.energy.total_pj;
    row.speedup = compare(full, r).cycle_ratio;
    row.energy_gain = compare(full, r).energy_ratio;
    result.summary.push_back(row);
  }
  reports.resize(requested);
  result.reports = std::move(reports);

  if (config.verify) {
    VerifyConfig vc;
    vc.seed = config.seed;
    result.checks = verify_kernel(vc);
    result.verify_passed = all_passed(result.checks);
  }
  return result;
}

std::string format_summary(const std::vector<SummaryRow>& rows, const std::string& model) {
  std::ostringstream os;
  os << "model: " << model << "\n";
  os << "mode               seq_len      cycles        energy_pj  speedup_vs_full  energy_gain_vs_full\n";
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%-18s %-12lld %-13llu %-10.4e %-16s %s\n",
                  std::string(to_string(r.mode)).c_str(), static_cast<long long>(r.seq_len),
                  static_cast<unsigned long long>(r.cycles), r.energy_pj, format_ratio(r.speedup).c_str(),
                  format_ratio(r.energy_gain).c_str());
    os << line;
  }
  return os.str();
}

RunResult run(const RunConfig& config, std::ostream& log) {
  RunResult result = execute(config);
  std::error_code ec;
  std::filesystem::create_directories(config.out_dir, ec);
  if (ec) throw ConfigError("cannot create '" + config.out_dir.string() + "': " + ec.message());

  for (const auto& r : result.reports) {
    const auto name = "report_" + std::string(to_string(r.mode)) + "_" + std::to_string(r.seq_len) + ".json";
    write_file_atomic(config.out_dir / name, to_json(r).dump(2) + "\n");
  }
  std::ostringstream csv;
  write_timeline_csv(csv, result.reports);
  write_file_atomic(config.out_dir / "timelines.csv", csv.str());

  const std::string model_name = result.reports.empty() ? config.model : result.reports.front().model;
  const std::string summary = format_summary(result.summary, model_name);
  write_file_atomic(config.out_dir / "summary.txt", summary);
  log << summary;

  if (config.dump_plan) write_file_atomic(config.out_dir / "plan.json", to_json(result.plan).dump(2) + "\n");

  if (config.verify) {
    Json checks = Json::array();
    for (const auto& c : result.checks) {
      checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
      log << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
    }
    write_file_atomic(config.out_dir / "verify.json", checks.dump(2) + "\n");
  }
  return result;
}

}  // namespace hbsim
