// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

// hbsim: run decode-step simulations for a model on the bank mesh.
//
// Exit codes: 0 success, 1 kernel self-check failed, 2 configuration error,
// 3 internal invariant violation.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hbsim/error.hpp"
#include "hbsim/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Hybrid-bonded accelerator decode simulator"};
  app.set_version_flag("--version", "hbsim 1.0.0");

  hbsim::RunConfig cfg;
  std::vector<std::string> modes;
  std::vector<std::string> seq_lens;
  std::string scope = "attention";
  std::string out = cfg.out_dir.string();
  double threshold = -1.0;

  app.add_option("--model", cfg.model, "Built-in model name or model JSON path")->capture_default_str();
  app.add_option("--hw", cfg.hw_path, "Hardware spec JSON");
  app.add_option("--sparsity", cfg.sparsity_path, "Sparsity config JSON");
  app.add_option("--alpha", cfg.alpha_path, "Per-head gating profile JSON");
  app.add_option("--mode", modes, "full | sparse-unbalanced | sparse-balanced (repeatable)")
      ->delimiter(',')
      ->required();
  app.add_option("--seqlen", seq_lens, "Sequence length, e.g. 4096 or 256k (repeatable)")
      ->delimiter(',')
      ->required();
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_flag("--verify", cfg.verify, "Run the attention kernel self-check");
  app.add_option("--seed", cfg.seed, "Workload seed")->capture_default_str();
  app.add_flag("--dump-plan", cfg.dump_plan, "Write the mapping plan to plan.json");
  app.add_option("--scope", scope, "attention | end-to-end")->capture_default_str();
  app.add_flag("--overlap", cfg.options.overlap_compute_memory, "Overlap compute and memory within a bank");
  app.add_option("--static-sparsity", cfg.static_sparsity, "Streaming-head fraction of generated profiles")
      ->capture_default_str();
  app.add_option("--threshold", threshold, "Alpha classification threshold (default: profile median)");
  app.add_option("--workers", cfg.workers, "Worker threads (0 = all cores)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    for (const auto& m : modes) cfg.modes.push_back(hbsim::parse_mode(m));
    for (const auto& s : seq_lens) cfg.seq_lens.push_back(hbsim::parse_seq_len(s));
    cfg.options.scope = hbsim::parse_scope(scope);
    cfg.out_dir = out;
    if (app.count("--threshold") > 0) cfg.threshold = threshold;
    const auto result = hbsim::run(cfg, std::cout);
    return result.verify_passed ? 0 : 1;
  } catch (const hbsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hbsim::InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 3;
  }
}
