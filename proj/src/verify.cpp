// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "hbsim/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "hbsim/attention.hpp"
#include "hbsim/workload.hpp"

namespace hbsim {

namespace {

using Vec = attn::Vector<double>;
using Mat = attn::Matrix<double>;

// Integer-valued entries in [-10, 10]: products and sums stay exact in double.
Mat random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<double>(bounded_draw(rng(), -10, 10));
  return m;
}

Vec random_vector(std::mt19937_64& rng, Eigen::Index n) { return random_matrix(rng, n, 1).col(0); }

// Reference softmax(q K^T * scale) V computed row by row.
Vec dense_reference(const Vec& q, const Mat& k, const Mat& v) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
  std::vector<double> s(static_cast<std::size_t>(k.rows()));
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    double dot = 0;
    for (Eigen::Index d = 0; d < q.size(); ++d) dot += q(d) * k(i, d);
    s[static_cast<std::size_t>(i)] = dot * scale;
    m = std::max(m, s[static_cast<std::size_t>(i)]);
  }
  Vec out = Vec::Zero(v.cols());
  double denom = 0;
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    const double w = std::exp(s[static_cast<std::size_t>(i)] - m);
    denom += w;
    for (Eigen::Index d = 0; d < v.cols(); ++d) out(d) += w * v(i, d);
  }
  return out / denom;
}

Mat gather(const Mat& m, const std::vector<attn::TokenIndex>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

std::string fmt(const char* label, double v) {
  std::ostringstream os;
  os << label << '=' << v;
  return os.str();
}

CheckResult check_online_softmax(const VerifyConfig& cfg, std::mt19937_64& rng) {
  double worst = 0;
  for (int t = 0; t < cfg.trials; ++t) {
    const auto n = bounded_draw(rng(), 1, cfg.seq_len);
    const Mat k = random_matrix(rng, n, cfg.head_dim);
    const Mat v = random_matrix(rng, n, cfg.head_dim);
    const Vec q = random_vector(rng, cfg.head_dim);
    const auto pieces = bounded_draw(rng(), 1, 8);
    std::vector<Eigen::Index> cuts{0, n};
    for (int i = 1; i < pieces; ++i) cuts.push_back(bounded_draw(rng(), 0, n));
    std::sort(cuts.begin(), cuts.end());
    std::vector<attn::SoftmaxPartial<double>> parts;
    const double scale = attn::default_scale<double>(cfg.head_dim);
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const auto len = cuts[i + 1] - cuts[i];
      parts.push_back(attn::absorb_tokens(attn::SoftmaxPartial<double>::identity(cfg.head_dim), q,
                                          k.middleRows(cuts[i], len), v.middleRows(cuts[i], len), scale));
    }
    for (std::size_t i = parts.size(); i > 1; --i)
      std::swap(parts[i - 1], parts[static_cast<std::size_t>(bounded_draw(rng(), 0, static_cast<std::int64_t>(i) - 1))]);
    const Vec got = attn::merge_partials<double>(parts).finalize();
    worst = std::max(worst, (got - dense_reference(q, k, v)).cwiseAbs().maxCoeff());
  }
  return {"online-softmax", worst <= cfg.tolerance, fmt("max_abs_err", worst)};
}

CheckResult check_metadata_bound(const VerifyConfig& cfg, std::mt19937_64& rng) {
  int violations = 0;
  const int trials = cfg.trials * 128;
  for (int t = 0; t < trials; ++t) {
    const Mat keys = random_matrix(rng, 32, cfg.head_dim);
    const Vec q = random_vector(rng, cfg.head_dim);
    const auto meta = attn::build_page_metadata(keys, 0, {0, 32});
    const double bound = attn::relevance_score(q, meta);
    if (bound < (keys * q).maxCoeff()) ++violations;
  }
  return {"metadata-bound", violations == 0, "violations=" + std::to_string(violations)};
}

CheckResult check_dense_degeneration(const VerifyConfig& cfg, std::mt19937_64& rng) {
  SparsityConfig sc;
  sc.page_size = 32;
  sc.n_sink = 16;
  sc.n_local = 64;
  sc.top_k = cfg.seq_len;
  sc.budget_pages = SparsityConfig::kUnlimitedPages;
  double worst = 0;
  for (int t = 0; t < cfg.trials; ++t) {
    const auto n = bounded_draw(rng(), 1, cfg.seq_len);
    const Mat k = random_matrix(rng, n, cfg.head_dim);
    const Mat v = random_matrix(rng, n, cfg.head_dim);
    attn::PagedKvCache<double> cache(cfg.head_dim, sc);
    for (Eigen::Index i = 0; i < n; ++i) cache.append(k.row(i).transpose(), v.row(i).transpose());
    const Vec q = random_vector(rng, cfg.head_dim);
    const auto step = attn::sparse_attention_step(q, cache, HeadProfile{0, 0, HeadKind::Retrieval, 1.0}, sc);
    worst = std::max(worst, (step.output - dense_reference(q, k, v)).cwiseAbs().maxCoeff());
  }
  return {"dense-degeneration", worst <= cfg.tolerance, fmt("max_abs_err", worst)};
}

CheckResult check_streaming_mask(const VerifyConfig& cfg, std::mt19937_64& rng) {
  SparsityConfig sc;
  sc.n_sink = 8;
  sc.n_local = 96;
  double worst = 0;
  for (int t = 0; t < cfg.trials; ++t) {
    const auto n = bounded_draw(rng(), 1, cfg.seq_len);
    const Mat k = random_matrix(rng, n, cfg.head_dim);
    const Mat v = random_matrix(rng, n, cfg.head_dim);
    attn::PagedKvCache<double> cache(cfg.head_dim, sc, false);
    for (Eigen::Index i = 0; i < n; ++i) cache.append(k.row(i).transpose(), v.row(i).transpose());
    const Vec q = random_vector(rng, cfg.head_dim);
    const auto step = attn::sparse_attention_step(q, cache, HeadProfile{0, 0, HeadKind::Streaming, 0.0}, sc);
    const auto mask = attn::streaming_mask(n, sc.n_sink, sc.n_local);
    if (step.attended != mask) return {"streaming-mask", false, "attended set differs from the mask"};
    worst = std::max(worst, (step.output - dense_reference(q, gather(k, mask), gather(v, mask))).cwiseAbs().maxCoeff());
  }
  return {"streaming-mask", worst <= cfg.tolerance, fmt("max_abs_err", worst)};
}

CheckResult check_eviction(const VerifyConfig& cfg, std::mt19937_64& rng) {
  SparsityConfig sc;
  sc.page_size = 8;
  sc.n_sink = 4;
  sc.n_local = 16;
  sc.top_k = 3;
  sc.budget_pages = 6;
  sc.share_stride = 1;
  struct OraclePage {
    attn::PageId id;
    int size;
    double importance;
  };
  std::vector<OraclePage> oracle;
  attn::PageId next_id = 0;
  attn::PagedKvCache<double> cache(cfg.head_dim, sc);
  const int steps = std::min(cfg.seq_len, 1000);
  for (int t = 0; t < steps; ++t) {
    const Vec key = random_vector(rng, cfg.head_dim);
    const auto evicted = cache.append(key, random_vector(rng, cfg.head_dim));

    std::optional<attn::PageId> expected;
    if (t >= sc.n_sink + sc.n_local) {
      if (oracle.empty() || oracle.back().size == sc.page_size) oracle.push_back({next_id++, 0, 0.0});
      ++oracle.back().size;
      if (static_cast<std::int64_t>(oracle.size()) > sc.budget_pages) {
        std::size_t best = oracle.size();
        for (std::size_t i = 0; i < oracle.size(); ++i) {
          if (oracle[i].size < sc.page_size) continue;
          if (best == oracle.size() || oracle[i].importance < oracle[best].importance) best = i;
        }
        if (best < oracle.size()) {
          expected = oracle[best].id;
          oracle.erase(oracle.begin() + static_cast<std::ptrdiff_t>(best));
        }
      }
    }
    if (evicted != expected)
      return {"eviction-replay", false, "step " + std::to_string(t) + ": eviction differs from argmin oracle"};
    if (static_cast<std::int64_t>(cache.pages().size()) > sc.budget_pages)
      return {"eviction-replay", false, "page budget exceeded at step " + std::to_string(t)};
    if (cache.pages().size() != oracle.size())
      return {"eviction-replay", false, "page list differs from oracle at step " + std::to_string(t)};
    for (std::size_t i = 0; i < oracle.size(); ++i)
      if (cache.pages()[i].id() != oracle[i].id)
        return {"eviction-replay", false, "page ids differ from oracle at step " + std::to_string(t)};

    const auto step = attn::sparse_attention_step(random_vector(rng, cfg.head_dim), cache,
                                                  HeadProfile{0, 0, HeadKind::Retrieval, 1.0}, sc);
    attn::update_importance(cache, step.page_scores);
    for (std::size_t i = 0; i < cache.pages().size(); ++i) oracle[i].importance += std::max(0.0, step.page_scores[i]);
  }
  return {"eviction-replay", true, "steps=" + std::to_string(steps)};
}

}  // namespace

std::vector<CheckResult> verify_kernel(const VerifyConfig& cfg) {
  std::mt19937_64 rng(substream_seed(cfg.seed, 0xFFFFFFFFu, 0));
  return {check_online_softmax(cfg, rng), check_metadata_bound(cfg, rng), check_dense_degeneration(cfg, rng),
          check_streaming_mask(cfg, rng), check_eviction(cfg, rng)};
}

bool all_passed(const std::vector<CheckResult>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

}  // namespace hbsim
