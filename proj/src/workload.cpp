// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "hbsim/workload.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "hbsim/error.hpp"

namespace hbsim {

std::uint64_t ModelSpec::token_kv_bits() const {
  return 2ull * static_cast<std::uint64_t>(head_dim) * static_cast<std::uint64_t>(precision.kv_bits);
}

void ModelSpec::validate() const {
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model '" + name + "': " + what);
  };
  require(n_layers > 0, "n_layers must be positive");
  require(n_kv_heads > 0, "n_kv_heads must be positive");
  require(n_q_heads > 0, "n_q_heads must be positive");
  require(head_dim > 0, "head_dim must be positive");
  require(hidden_dim > 0, "hidden_dim must be positive");
  require(ffn_dim > 0, "ffn_dim must be positive");
  require(precision.weight_bits > 0 && precision.activation_bits > 0 && precision.kv_bits > 0,
          "precision bits must be positive");
  require(n_q_heads % n_kv_heads == 0, "n_q_heads must be a multiple of n_kv_heads");
}

namespace {

ModelSpec make(std::string name, int layers, int kv, int q, int hidden, int ffn) {
  ModelSpec m;
  m.name = std::move(name);
  m.n_layers = layers;
  m.n_kv_heads = kv;
  m.n_q_heads = q;
  m.head_dim = 128;
  m.hidden_dim = hidden;
  m.ffn_dim = ffn;
  return m;
}

}  // namespace

ModelSpec builtin_model(std::string_view name) {
  if (name == "llama2-7b") return make("llama2-7b", 32, 32, 32, 4096, 11008);
  if (name == "llama3-8b") return make("llama3-8b", 32, 8, 32, 4096, 14336);
  if (name == "mistral-7b") return make("mistral-7b", 32, 8, 32, 4096, 14336);
  if (name == "vicuna-13b") return make("vicuna-13b", 40, 40, 40, 5120, 13824);
  if (name == "custom") throw ConfigError("model 'custom' must be described by a JSON file");
  throw ConfigError("unknown model '" + std::string(name) + "'");
}

std::vector<std::string> builtin_model_names() {
  return {"llama2-7b", "llama3-8b", "mistral-7b", "vicuna-13b"};
}

void TraceConfig::validate() const {
  if (seq_len < 0) throw ConfigError("trace: seq_len must be non-negative");
  if (value_min < -128 || value_max > 127 || value_min > value_max)
    throw ConfigError("trace: value range must be a non-empty subrange of int8");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t substream_seed(std::uint64_t seed, std::uint32_t layer, std::uint32_t head) {
  const std::uint64_t tag = (static_cast<std::uint64_t>(layer) << 32) | (static_cast<std::uint64_t>(head) + 1);
  return splitmix64(seed ^ (tag * 0x9E3779B97F4A7C15ull));
}

std::int64_t bounded_draw(std::uint64_t x, std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<std::int64_t>(((x >> 32) * span) >> 32);
}

double unit_draw(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

KvStream gen_head_trace(const TraceConfig& cfg, int head_dim, int layer, int head) {
  cfg.validate();
  if (head_dim <= 0) throw ConfigError("trace: head_dim must be positive");
  std::mt19937_64 rng(substream_seed(cfg.seed, static_cast<std::uint32_t>(layer),
                                     static_cast<std::uint32_t>(head)));
  KvStream s{layer, head, Int8Matrix(cfg.seq_len, head_dim), Int8Matrix(cfg.seq_len, head_dim)};
  for (std::int64_t t = 0; t < cfg.seq_len; ++t) {
    for (int d = 0; d < head_dim; ++d)
      s.keys(t, d) = static_cast<std::int8_t>(bounded_draw(rng(), cfg.value_min, cfg.value_max));
    for (int d = 0; d < head_dim; ++d)
      s.values(t, d) = static_cast<std::int8_t>(bounded_draw(rng(), cfg.value_min, cfg.value_max));
  }
  return s;
}

std::vector<KvStream> gen_kv_trace(const TraceConfig& cfg, const ModelSpec& model) {
  model.validate();
  std::vector<KvStream> out;
  out.reserve(static_cast<std::size_t>(model.n_layers) * static_cast<std::size_t>(model.n_kv_heads));
  for (int l = 0; l < model.n_layers; ++l)
    for (int h = 0; h < model.n_kv_heads; ++h) out.push_back(gen_head_trace(cfg, model.head_dim, l, h));
  return out;
}

std::vector<AlphaEntry> gen_alpha_profile(const ModelSpec& model, double target_static_sparsity,
                                          std::uint64_t seed) {
  model.validate();
  if (!(target_static_sparsity >= 0.0 && target_static_sparsity <= 1.0))
    throw ConfigError("alpha profile: static sparsity must lie in [0, 1]");
  const int n = model.n_kv_heads;
  const int streaming = static_cast<int>(std::floor(target_static_sparsity * n + 1e-9));

  std::vector<AlphaEntry> out;
  out.reserve(static_cast<std::size_t>(model.n_layers) * static_cast<std::size_t>(n));
  for (int l = 0; l < model.n_layers; ++l) {
    // The shuffle uses the substream just past the last head.
    std::mt19937_64 order_rng(substream_seed(seed, static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(n)));
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      const auto j = bounded_draw(order_rng(), 0, i);
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    std::vector<bool> is_streaming(static_cast<std::size_t>(n), false);
    for (int i = 0; i < streaming; ++i) is_streaming[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = true;

    for (int h = 0; h < n; ++h) {
      std::mt19937_64 rng(substream_seed(seed, static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(h)));
      const double u = unit_draw(rng());
      const double alpha = is_streaming[static_cast<std::size_t>(h)] ? 0.5 * u : 0.5 + 0.5 * u;
      out.push_back({l, h, alpha});
    }
  }
  return out;
}

}  // namespace hbsim
