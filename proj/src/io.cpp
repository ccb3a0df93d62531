// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "hbsim/io.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <system_error>

#include "hbsim/error.hpp"

namespace hbsim {

namespace {

// Reads optional keys from one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j_.is_object()) throw ConfigError(what_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(what_ + ": bad value for '" + key + "': " + e.what());
    }
  }

  template <typename T>
  T require(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(what_ + ": missing '" + key + "'");
    T out{};
    get(key, out);
    return out;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (seen_.count(item.key()) == 0)
        throw ConfigError(what_ + ": unknown key '" + item.key() + "'");
  }

 private:
  const Json& j_;
  std::string what_;
  std::set<std::string> seen_;
};

HeadKind parse_kind(const std::string& s) {
  if (s == "retrieval") return HeadKind::Retrieval;
  if (s == "streaming") return HeadKind::Streaming;
  throw ConfigError("unknown head kind '" + s + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// HardwareSpec
// ---------------------------------------------------------------------------

HardwareSpec hardware_from_json(const Json& j) {
  HardwareSpec s;
  ObjectReader r(j, "hardware spec");
  r.get("mesh_rows", s.mesh_rows);
  r.get("mesh_cols", s.mesh_cols);
  r.get("noc_link_bits", s.noc_link_bits);
  r.get("bank_compute_ops_per_cycle", s.bank_compute_ops_per_cycle);
  r.get("mem_bits_per_cycle_per_bank", s.mem_bits_per_cycle_per_bank);
  r.get("mem_access_energy_pj_per_bit", s.mem_access_energy_pj_per_bit);
  r.get("compute_energy_pj_per_op", s.compute_energy_pj_per_op);
  r.get("noc_energy_pj_per_bit_hop", s.noc_energy_pj_per_bit_hop);
  r.get("logic_frequency_hz", s.logic_frequency_hz);
  r.get("mem_frequency_hz", s.mem_frequency_hz);
  r.get("bank_mem_capacity_bits", s.bank_mem_capacity_bits);
  r.get("logic_sram_bits_per_bank", s.logic_sram_bits_per_bank);
  r.get("refresh_period_metadata", s.refresh_period_metadata);
  r.get("logic_technology", s.logic_technology);
  r.get("logic_vdd", s.logic_vdd);
  r.get("mem_vdd", s.mem_vdd);
  if (r.has("bank_throughput_gops")) {
    if (r.has("bank_compute_ops_per_cycle"))
      throw ConfigError("hardware spec: give bank_throughput_gops or bank_compute_ops_per_cycle, not both");
    double gops = 0;
    r.get("bank_throughput_gops", gops);
    s.bank_compute_ops_per_cycle = ops_per_cycle_from_throughput(gops, s.mem_frequency_hz);
  }
  r.finish();
  s.validate();
  return s;
}

Json to_json(const HardwareSpec& s) {
  return Json{{"mesh_rows", s.mesh_rows},
              {"mesh_cols", s.mesh_cols},
              {"noc_link_bits", s.noc_link_bits},
              {"bank_compute_ops_per_cycle", s.bank_compute_ops_per_cycle},
              {"mem_bits_per_cycle_per_bank", s.mem_bits_per_cycle_per_bank},
              {"mem_access_energy_pj_per_bit", s.mem_access_energy_pj_per_bit},
              {"compute_energy_pj_per_op", s.compute_energy_pj_per_op},
              {"noc_energy_pj_per_bit_hop", s.noc_energy_pj_per_bit_hop},
              {"logic_frequency_hz", s.logic_frequency_hz},
              {"mem_frequency_hz", s.mem_frequency_hz},
              {"bank_mem_capacity_bits", s.bank_mem_capacity_bits},
              {"logic_sram_bits_per_bank", s.logic_sram_bits_per_bank},
              {"refresh_period_metadata", s.refresh_period_metadata},
              {"logic_technology", s.logic_technology},
              {"logic_vdd", s.logic_vdd},
              {"mem_vdd", s.mem_vdd}};
}

// ---------------------------------------------------------------------------
// SparsityConfig
// ---------------------------------------------------------------------------

SparsityConfig sparsity_from_json(const Json& j) {
  SparsityConfig c;
  ObjectReader r(j, "sparsity config");
  r.get("page_size", c.page_size);
  r.get("n_sink", c.n_sink);
  r.get("n_local", c.n_local);
  r.get("top_k", c.top_k);
  r.get("share_stride", c.share_stride);
  r.get("logic_resident_local", c.logic_resident_local);
  if (r.has("budget_pages")) {
    const Json& b = r.raw("budget_pages");
    if (b.is_null() || (b.is_string() && b.get<std::string>() == "unlimited"))
      c.budget_pages = SparsityConfig::kUnlimitedPages;
    else if (b.is_number_integer())
      c.budget_pages = b.get<std::int64_t>();
    else
      throw ConfigError("sparsity config: budget_pages must be an integer, null or \"unlimited\"");
  }
  if (r.has("relevance")) {
    const auto v = r.require<std::string>("relevance");
    if (v == "elementwise") c.relevance = RelevanceMode::Elementwise;
    else if (v == "scalar") c.relevance = RelevanceMode::Scalar;
    else throw ConfigError("sparsity config: relevance must be \"elementwise\" or \"scalar\"");
  }
  if (r.has("importance")) {
    const auto v = r.require<std::string>("importance");
    if (v == "attention-mass") c.importance = ImportanceMode::AttentionMass;
    else if (v == "relevance") c.importance = ImportanceMode::Relevance;
    else throw ConfigError("sparsity config: importance must be \"attention-mass\" or \"relevance\"");
  }
  r.finish();
  c.validate();
  return c;
}

Json to_json(const SparsityConfig& c) {
  Json budget = c.budget_pages == SparsityConfig::kUnlimitedPages ? Json("unlimited") : Json(c.budget_pages);
  return Json{{"page_size", c.page_size},
              {"n_sink", c.n_sink},
              {"n_local", c.n_local},
              {"budget_pages", budget},
              {"top_k", c.top_k},
              {"share_stride", c.share_stride},
              {"logic_resident_local", c.logic_resident_local},
              {"relevance", c.relevance == RelevanceMode::Elementwise ? "elementwise" : "scalar"},
              {"importance", c.importance == ImportanceMode::AttentionMass ? "attention-mass" : "relevance"}};
}

// ---------------------------------------------------------------------------
// ModelSpec / TraceConfig / alphas
// ---------------------------------------------------------------------------

ModelSpec model_from_json(const Json& j) {
  ObjectReader r(j, "model");
  ModelSpec m;
  if (r.has("base")) m = builtin_model(r.require<std::string>("base"));
  r.get("name", m.name);
  r.get("n_layers", m.n_layers);
  r.get("n_kv_heads", m.n_kv_heads);
  r.get("n_q_heads", m.n_q_heads);
  r.get("head_dim", m.head_dim);
  r.get("hidden_dim", m.hidden_dim);
  r.get("ffn_dim", m.ffn_dim);
  if (r.has("precision")) {
    ObjectReader p(r.raw("precision"), "model precision");
    p.get("weight_bits", m.precision.weight_bits);
    p.get("activation_bits", m.precision.activation_bits);
    p.get("kv_bits", m.precision.kv_bits);
    p.finish();
  }
  r.finish();
  m.validate();
  return m;
}

Json to_json(const ModelSpec& m) {
  return Json{{"name", m.name},
              {"n_layers", m.n_layers},
              {"n_kv_heads", m.n_kv_heads},
              {"n_q_heads", m.n_q_heads},
              {"head_dim", m.head_dim},
              {"hidden_dim", m.hidden_dim},
              {"ffn_dim", m.ffn_dim},
              {"precision",
               {{"weight_bits", m.precision.weight_bits},
                {"activation_bits", m.precision.activation_bits},
                {"kv_bits", m.precision.kv_bits}}}};
}

TraceConfig trace_from_json(const Json& j) {
  TraceConfig c;
  ObjectReader r(j, "trace config");
  r.get("seed", c.seed);
  r.get("seq_len", c.seq_len);
  r.get("value_min", c.value_min);
  r.get("value_max", c.value_max);
  r.finish();
  c.validate();
  return c;
}

Json to_json(const TraceConfig& c) {
  return Json{{"seed", c.seed}, {"seq_len", c.seq_len}, {"value_min", c.value_min}, {"value_max", c.value_max}};
}

std::vector<AlphaEntry> alphas_from_json(const Json& j) {
  if (!j.is_array()) throw ConfigError("alpha profile: expected a JSON array");
  std::vector<AlphaEntry> out;
  for (const auto& e : j) {
    ObjectReader r(e, "alpha entry");
    AlphaEntry a;
    a.layer = r.require<int>("layer");
    a.head = r.require<int>("head");
    a.alpha = r.require<double>("alpha");
    r.finish();
    if (!(a.alpha >= 0.0 && a.alpha <= 1.0)) throw ConfigError("alpha profile: alpha outside [0, 1]");
    out.push_back(a);
  }
  return out;
}

Json to_json(std::span<const AlphaEntry> alphas) {
  Json out = Json::array();
  for (const auto& a : alphas) out.push_back({{"layer", a.layer}, {"head", a.head}, {"alpha", a.alpha}});
  return out;
}

// ---------------------------------------------------------------------------
// MappingPlan
// ---------------------------------------------------------------------------

Json to_json(const MappingPlan& plan) {
  Json layers = Json::array();
  for (const auto& l : plan.layers) {
    Json segments = Json::array();
    for (const auto& s : l.segments) segments.push_back({{"stages", s.stages}, {"n_banks", s.n_banks}});
    Json stages = Json::array();
    for (const auto& st : l.stages) {
      Json heads = Json::array();
      for (const auto& h : st.heads)
        heads.push_back({{"layer", h.layer}, {"head", h.head}, {"kind", to_string(h.kind)}, {"banks", h.banks}});
      Json tiles = Json::array();
      for (const auto& t : st.tiling.tiles) tiles.push_back({{"anchor", t.anchor}, {"members", t.members}});
      stages.push_back({{"banks_per_head", st.banks_per_head},
                        {"heads", heads},
                        {"tiling",
                         {{"t", st.tiling.t},
                          {"capacity", st.tiling.capacity},
                          {"max_dist", st.tiling.max_dist},
                          {"minority", to_string(st.tiling.minority)},
                          {"tiles", tiles}}}});
    }
    layers.push_back({{"layer", l.layer}, {"segments", segments}, {"stages", stages}});
  }
  return Json{{"mesh_rows", plan.mesh_rows}, {"mesh_cols", plan.mesh_cols}, {"layers", layers}};
}

MappingPlan mapping_from_json(const Json& j) {
  try {
    MappingPlan plan;
    plan.mesh_rows = j.at("mesh_rows").get<int>();
    plan.mesh_cols = j.at("mesh_cols").get<int>();
    for (const auto& jl : j.at("layers")) {
      LayerMapping l;
      l.layer = jl.at("layer").get<int>();
      for (const auto& js : jl.at("segments"))
        l.segments.push_back({js.at("stages").get<std::vector<int>>(), js.at("n_banks").get<int>()});
      for (const auto& jst : jl.at("stages")) {
        StageMapping st;
        st.banks_per_head = jst.at("banks_per_head").get<int>();
        for (const auto& jh : jst.at("heads"))
          st.heads.push_back({jh.at("layer").get<int>(), jh.at("head").get<int>(),
                              parse_kind(jh.at("kind").get<std::string>()),
                              jh.at("banks").get<std::vector<int>>()});
        const auto& jt = jst.at("tiling");
        st.tiling.t = jt.at("t").get<int>();
        st.tiling.capacity = jt.at("capacity").get<int>();
        st.tiling.max_dist = jt.at("max_dist").get<int>();
        st.tiling.minority = parse_kind(jt.at("minority").get<std::string>());
        for (const auto& tile : jt.at("tiles"))
          st.tiling.tiles.push_back({tile.at("anchor").get<int>(), tile.at("members").get<std::vector<int>>()});
        l.stages.push_back(std::move(st));
      }
      plan.layers.push_back(std::move(l));
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("mapping plan: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// SimReport
// ---------------------------------------------------------------------------

Json to_json(const SimReport& r) {
  Json banks = Json::array();
  for (std::size_t i = 0; i < r.banks.size(); ++i) {
    const auto& b = r.banks[i];
    banks.push_back({{"bank", i},
                     {"compute_cycles", b.compute_cycles},
                     {"memory_cycles", b.memory_cycles},
                     {"noc_cycles", b.noc_cycles},
                     {"idle_cycles", b.idle_cycles}});
  }
  return Json{{"model", r.model},
              {"mode", to_string(r.mode)},
              {"scope", to_string(r.scope)},
              {"seq_len", r.seq_len},
              {"mesh_rows", r.mesh_rows},
              {"mesh_cols", r.mesh_cols},
              {"attention_cycles", r.attention_cycles},
              {"end_to_end_cycles", r.end_to_end_cycles},
              {"energy_pj",
               {{"memory", r.energy.memory_pj},
                {"compute", r.energy.compute_pj},
                {"noc", r.energy.noc_pj},
                {"total", r.energy.total_pj}}},
              {"tokens_processed", r.tokens_processed},
              {"kv_bits_fetched", r.kv_bits_fetched},
              {"mem_bits", r.mem_bits},
              {"compute_ops", r.compute_ops},
              {"noc_bit_hops", r.noc_bit_hops},
              {"selection_step", r.selection_step},
              {"tiles_balanced", r.tiles_balanced},
              {"banks", banks}};
}

SimReport report_from_json(const Json& j) {
  try {
    SimReport r;
    r.model = j.at("model").get<std::string>();
    r.mode = parse_mode(j.at("mode").get<std::string>());
    r.scope = parse_scope(j.at("scope").get<std::string>());
    r.seq_len = j.at("seq_len").get<std::int64_t>();
    r.mesh_rows = j.at("mesh_rows").get<int>();
    r.mesh_cols = j.at("mesh_cols").get<int>();
    r.attention_cycles = j.at("attention_cycles").get<Cycles>();
    r.end_to_end_cycles = j.at("end_to_end_cycles").get<Cycles>();
    const auto& e = j.at("energy_pj");
    r.energy = {e.at("memory").get<double>(), e.at("compute").get<double>(), e.at("noc").get<double>(),
                e.at("total").get<double>()};
    r.tokens_processed = j.at("tokens_processed").get<std::uint64_t>();
    r.kv_bits_fetched = j.at("kv_bits_fetched").get<std::uint64_t>();
    r.mem_bits = j.at("mem_bits").get<std::uint64_t>();
    r.compute_ops = j.at("compute_ops").get<std::uint64_t>();
    r.noc_bit_hops = j.at("noc_bit_hops").get<std::uint64_t>();
    r.selection_step = j.at("selection_step").get<bool>();
    r.tiles_balanced = j.at("tiles_balanced").get<int>();
    for (const auto& b : j.at("banks"))
      r.banks.push_back({b.at("compute_cycles").get<Cycles>(), b.at("memory_cycles").get<Cycles>(),
                         b.at("noc_cycles").get<Cycles>(), b.at("idle_cycles").get<Cycles>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw ConfigError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ConfigError("cannot rename '" + tmp.string() + "': " + ec.message());
}

ModelSpec load_model(const std::string& name_or_path) {
  const std::filesystem::path p(name_or_path);
  if (std::filesystem::is_regular_file(p)) return model_from_json(read_json_file(p));
  return builtin_model(name_or_path);
}

void write_timeline_csv(std::ostream& os, std::span<const SimReport> reports) {
  os << "model,mode,scope,seq_len,bank,row,col,compute,memory,noc,idle\n";
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.banks.size(); ++i) {
      const auto& b = r.banks[i];
      const int cols = r.mesh_cols > 0 ? r.mesh_cols : 1;
      os << r.model << ',' << to_string(r.mode) << ',' << to_string(r.scope) << ',' << r.seq_len << ','
         << i << ',' << static_cast<int>(i) / cols << ',' << static_cast<int>(i) % cols << ','
         << b.compute_cycles << ',' << b.memory_cycles << ',' << b.noc_cycles << ',' << b.idle_cycles
         << '\n';
    }
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

namespace {

double ratio(double a, double b) {
  if (b == 0.0) return a == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return a / b;
}

}  // namespace

Comparison compare(const SimReport& a, const SimReport& b) {
  if (a.model != b.model || a.seq_len != b.seq_len || a.scope != b.scope ||
      a.mesh_rows != b.mesh_rows || a.mesh_cols != b.mesh_cols)
    throw ConfigError("compare: reports differ in model, seq_len, scope or mesh");
  Comparison c;
  c.model = a.model;
  c.seq_len = a.seq_len;
  c.mode_a = std::string(to_string(a.mode));
  c.mode_b = std::string(to_string(b.mode));
  c.cycle_ratio = ratio(static_cast<double>(a.end_to_end_cycles), static_cast<double>(b.end_to_end_cycles));
  c.energy_ratio = ratio(a.energy.total_pj, b.energy.total_pj);
  c.memory_bits_ratio = ratio(static_cast<double>(a.mem_bits), static_cast<double>(b.mem_bits));
  return c;
}

std::string format_ratio(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%#.4g", value);
  std::string s(buf);
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

std::string format_comparison(const Comparison& c) {
  std::ostringstream os;
  os << c.model << " seq=" << c.seq_len << " " << c.mode_a << "/" << c.mode_b
     << " cycles=" << format_ratio(c.cycle_ratio) << " energy=" << format_ratio(c.energy_ratio)
     << " mem_bits=" << format_ratio(c.memory_bits_ratio);
  return os.str();
}

}  // namespace hbsim
