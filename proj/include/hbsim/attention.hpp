// Copyright 2026 The hbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Functional hybrid sparse attention for one KV head.
//
// Streaming heads attend the sink tokens and a FIFO local window. Retrieval
// heads additionally attend the top-k pages of an evicting paged store,
// ranked by an upper bound built from per-page elementwise key bounds. All
// partial results are combined with the online-softmax recurrence, so the
// same SoftmaxPartial type models both in-bank streaming accumulation and the
// cross-bank merge.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hbsim/heads.hpp"
#include "hbsim/sparsity.hpp"

namespace hbsim::attn {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using PageId = std::int64_t;
using TokenIndex = std::int64_t;

struct TokenRange {
  TokenIndex begin = 0;
  TokenIndex end = 0;
  TokenIndex size() const { return end - begin; }

  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

template <typename Scalar>
Scalar default_scale(Eigen::Index head_dim) {
  return Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
}

// ---------------------------------------------------------------------------
// Page metadata and selection
// ---------------------------------------------------------------------------

template <typename Scalar>
struct PageMetadata {
  PageId page_id = 0;
  TokenRange tokens;
  Vector<Scalar> tau_min;
  Vector<Scalar> tau_max;
};

// Elementwise column bounds over the rows present. Only the newest page of a
// cache may be partial; the bounds then cover the rows written so far.
template <typename Derived>
PageMetadata<typename Derived::Scalar> build_page_metadata(const Eigen::MatrixBase<Derived>& keys,
                                                           PageId page_id, TokenRange tokens) {
  if (keys.rows() == 0) throw std::invalid_argument("build_page_metadata: empty page");
  if (tokens.size() != keys.rows())
    throw std::invalid_argument("build_page_metadata: token range does not match key rows");
  return {page_id, tokens, keys.colwise().minCoeff().transpose(),
          keys.colwise().maxCoeff().transpose()};
}

template <typename DerivedQ, typename Scalar>
Scalar relevance_score(const Eigen::MatrixBase<DerivedQ>& query, const PageMetadata<Scalar>& meta,
                       RelevanceMode mode = RelevanceMode::Elementwise) {
  if (query.size() != meta.tau_min.size() || query.size() != meta.tau_max.size())
    throw std::invalid_argument("relevance_score: query/metadata dimension mismatch");
  const auto q = query.derived().template cast<Scalar>();
  if (mode == RelevanceMode::Scalar) return std::max(q.dot(meta.tau_min), q.dot(meta.tau_max));
  return q.cwiseProduct(meta.tau_min).cwiseMax(q.cwiseProduct(meta.tau_max)).sum();
}

// Highest score first, ties to the lower page id. Returns min(k, n) ids.
template <typename Scalar>
std::vector<PageId> select_topk(std::span<const Scalar> scores, std::span<const PageId> ids,
                                std::size_t k) {
  if (scores.size() != ids.size())
    throw std::invalid_argument("select_topk: scores and ids differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(k, order.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    better);
  std::vector<PageId> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(ids[order[i]]);
  return out;
}

template <typename DerivedQ, typename Scalar>
std::vector<PageId> select_topk_pages(const Eigen::MatrixBase<DerivedQ>& query,
                                      std::span<const PageMetadata<Scalar>> metadata,
                                      std::size_t k,
                                      RelevanceMode mode = RelevanceMode::Elementwise) {
  std::vector<Scalar> scores;
  std::vector<PageId> ids;
  scores.reserve(metadata.size());
  ids.reserve(metadata.size());
  for (const auto& m : metadata) {
    scores.push_back(relevance_score(query, m, mode));
    ids.push_back(m.page_id);
  }
  return select_topk<Scalar>(scores, ids, k);
}

// ---------------------------------------------------------------------------
// Online softmax
// ---------------------------------------------------------------------------

// (max, denominator, weighted value sum) triple of a partially-consumed
// softmax. The identity element has max = -inf and denominator = 0.
template <typename Scalar>
struct SoftmaxPartial {
  Scalar running_max = -std::numeric_limits<Scalar>::infinity();
  Scalar running_denominator = 0;
  Vector<Scalar> weighted_sum;

  static SoftmaxPartial identity(Eigen::Index head_dim) {
    SoftmaxPartial p;
    p.weighted_sum = Vector<Scalar>::Zero(head_dim);
    return p;
  }

  bool empty() const { return running_denominator == Scalar(0); }

  Vector<Scalar> finalize() const {
    if (empty()) throw std::domain_error("SoftmaxPartial::finalize: no tokens absorbed");
    return weighted_sum / running_denominator;
  }
};

template <typename Scalar, typename DerivedQ, typename DerivedK, typename DerivedV>
SoftmaxPartial<Scalar> absorb_tokens(SoftmaxPartial<Scalar> partial,
                                     const Eigen::MatrixBase<DerivedQ>& query,
                                     const Eigen::MatrixBase<DerivedK>& keys,
                                     const Eigen::MatrixBase<DerivedV>& values, Scalar scale) {
  if (partial.weighted_sum.size() == 0) partial.weighted_sum = Vector<Scalar>::Zero(values.cols());
  if (keys.rows() == 0) return partial;
  if (keys.cols() != query.size() || values.rows() != keys.rows() ||
      values.cols() != partial.weighted_sum.size())
    throw std::invalid_argument("absorb_tokens: dimension mismatch");

  const Vector<Scalar> scores =
      (keys.derived().template cast<Scalar>() * query.derived().template cast<Scalar>()) * scale;
  const Scalar new_max = std::max(partial.running_max, scores.maxCoeff());
  const Scalar rescale = std::exp(partial.running_max - new_max);
  const Vector<Scalar> weights = (scores.array() - new_max).exp().matrix();

  partial.running_denominator = partial.running_denominator * rescale + weights.sum();
  partial.weighted_sum =
      partial.weighted_sum * rescale + values.derived().template cast<Scalar>().transpose() * weights;
  partial.running_max = new_max;
  return partial;
}

template <typename Scalar>
SoftmaxPartial<Scalar> merge(const SoftmaxPartial<Scalar>& a, const SoftmaxPartial<Scalar>& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.weighted_sum.size() != b.weighted_sum.size())
    throw std::invalid_argument("merge: partials differ in head_dim");
  const Scalar m = std::max(a.running_max, b.running_max);
  const Scalar sa = std::exp(a.running_max - m);
  const Scalar sb = std::exp(b.running_max - m);
  SoftmaxPartial<Scalar> out;
  out.running_max = m;
  out.running_denominator = a.running_denominator * sa + b.running_denominator * sb;
  out.weighted_sum = a.weighted_sum * sa + b.weighted_sum * sb;
  return out;
}

template <typename Scalar>
SoftmaxPartial<Scalar> merge_partials(std::span<const SoftmaxPartial<Scalar>> parts) {
  if (parts.empty()) throw std::invalid_argument("merge_partials: nothing to merge");
  SoftmaxPartial<Scalar> acc = parts.front();
  for (const auto& p : parts.subspan(1)) acc = merge(acc, p);
  return acc;
}

// ---------------------------------------------------------------------------
// Paged KV cache
// ---------------------------------------------------------------------------

template <typename Scalar>
class PagedKvCache;

template <typename Scalar>
void update_importance(PagedKvCache<Scalar>& cache, std::span<const double> per_page_scores);

template <typename Scalar>
std::optional<PageId> evict_if_over_budget(PagedKvCache<Scalar>& cache);

// Token flow: the first n_sink tokens are pinned; every later token enters the
// local FIFO, and tokens popped from the FIFO are appended to the newest page
// (or dropped when the cache keeps no pages, as for streaming heads).
template <typename Scalar>
class PagedKvCache {
 public:
  struct Page {
    PageMetadata<Scalar> meta;
    Matrix<Scalar> keys;
    Matrix<Scalar> values;
    double importance = 0.0;

    Eigen::Index size() const { return keys.rows(); }
    PageId id() const { return meta.page_id; }
  };

  struct Token {
    TokenIndex index;
    Vector<Scalar> key;
    Vector<Scalar> value;
  };

  PagedKvCache(Eigen::Index head_dim, const SparsityConfig& cfg, bool keep_pages = true)
      : head_dim_(head_dim),
        page_size_(cfg.page_size),
        n_sink_(cfg.n_sink),
        n_local_(cfg.n_local),
        budget_pages_(cfg.budget_pages),
        keep_pages_(keep_pages),
        sink_keys_(0, head_dim),
        sink_values_(0, head_dim) {
    if (head_dim <= 0) throw std::invalid_argument("PagedKvCache: head_dim must be positive");
    cfg.validate();
  }

  // Appends one token; returns the evicted page id, if any.
  template <typename DerivedK, typename DerivedV>
  std::optional<PageId> append(const Eigen::MatrixBase<DerivedK>& key,
                               const Eigen::MatrixBase<DerivedV>& value) {
    if (key.size() != head_dim_ || value.size() != head_dim_)
      throw std::invalid_argument("PagedKvCache::append: dimension mismatch");
    const TokenIndex index = seq_len_++;
    if (sink_keys_.rows() < n_sink_) {
      const auto r = sink_keys_.rows();
      sink_keys_.conservativeResize(r + 1, Eigen::NoChange);
      sink_values_.conservativeResize(r + 1, Eigen::NoChange);
      sink_keys_.row(r) = key.derived().template cast<Scalar>().transpose();
      sink_values_.row(r) = value.derived().template cast<Scalar>().transpose();
      return std::nullopt;
    }
    local_.push_back({index, key.derived().template cast<Scalar>(),
                      value.derived().template cast<Scalar>()});
    if (static_cast<int>(local_.size()) <= n_local_) return std::nullopt;
    Token popped = std::move(local_.front());
    local_.pop_front();
    if (!keep_pages_) return std::nullopt;
    push_paged(popped);
    return evict_if_over_budget(*this);
  }

  Eigen::Index head_dim() const { return head_dim_; }
  int page_size() const { return page_size_; }
  int n_sink() const { return n_sink_; }
  int n_local() const { return n_local_; }
  std::int64_t budget_pages() const { return budget_pages_; }
  TokenIndex seq_len() const { return seq_len_; }

  const Matrix<Scalar>& sink_keys() const { return sink_keys_; }
  const Matrix<Scalar>& sink_values() const { return sink_values_; }
  const std::deque<Token>& local_window() const { return local_; }
  const std::vector<Page>& pages() const { return pages_; }

  bool has_open_page() const { return !pages_.empty() && pages_.back().size() < page_size_; }

  std::vector<double> importance() const {
    std::vector<double> out;
    out.reserve(pages_.size());
    for (const auto& p : pages_) out.push_back(p.importance);
    return out;
  }

  std::vector<PageMetadata<Scalar>> metadata() const {
    std::vector<PageMetadata<Scalar>> out;
    out.reserve(pages_.size());
    for (const auto& p : pages_) out.push_back(p.meta);
    return out;
  }

  const Page* find_page(PageId id) const {
    auto it = std::lower_bound(pages_.begin(), pages_.end(), id,
                               [](const Page& p, PageId v) { return p.id() < v; });
    return it != pages_.end() && it->id() == id ? &*it : nullptr;
  }

  Matrix<Scalar> local_keys() const { return stack_local(&Token::key); }
  Matrix<Scalar> local_values() const { return stack_local(&Token::value); }

  std::vector<TokenIndex> local_indices() const {
    std::vector<TokenIndex> out;
    out.reserve(local_.size());
    for (const auto& t : local_) out.push_back(t.index);
    return out;
  }

 private:
  friend void update_importance<Scalar>(PagedKvCache&, std::span<const double>);
  friend std::optional<PageId> evict_if_over_budget<Scalar>(PagedKvCache&);

  void push_paged(const Token& t) {
    if (pages_.empty() || pages_.back().size() >= page_size_) {
      Page page;
      page.keys.resize(0, head_dim_);
      page.values.resize(0, head_dim_);
      page.meta.page_id = next_page_id_++;
      page.meta.tokens = {t.index, t.index};
      page.meta.tau_min = t.key;
      page.meta.tau_max = t.key;
      pages_.push_back(std::move(page));
    }
    Page& p = pages_.back();
    const auto r = p.keys.rows();
    p.keys.conservativeResize(r + 1, Eigen::NoChange);
    p.values.conservativeResize(r + 1, Eigen::NoChange);
    p.keys.row(r) = t.key.transpose();
    p.values.row(r) = t.value.transpose();
    p.meta.tokens.end = t.index + 1;
    p.meta.tau_min = p.meta.tau_min.cwiseMin(t.key);
    p.meta.tau_max = p.meta.tau_max.cwiseMax(t.key);
  }

  Matrix<Scalar> stack_local(Vector<Scalar> Token::*field) const {
    Matrix<Scalar> m(static_cast<Eigen::Index>(local_.size()), head_dim_);
    Eigen::Index r = 0;
    for (const auto& t : local_) m.row(r++) = (t.*field).transpose();
    return m;
  }

  Eigen::Index head_dim_;
  int page_size_;
  int n_sink_;
  int n_local_;
  std::int64_t budget_pages_;
  bool keep_pages_;

  TokenIndex seq_len_ = 0;
  PageId next_page_id_ = 0;
  Matrix<Scalar> sink_keys_;
  Matrix<Scalar> sink_values_;
  std::deque<Token> local_;
  std::vector<Page> pages_;
};

// importance[p] += max(0, score[p]); the score list must align with pages().
template <typename Scalar>
void update_importance(PagedKvCache<Scalar>& cache, std::span<const double> per_page_scores) {
  if (per_page_scores.size() != cache.pages_.size())
    throw std::invalid_argument("update_importance: scores not aligned with pages");
  for (std::size_t i = 0; i < per_page_scores.size(); ++i)
    cache.pages_[i].importance += std::max(0.0, per_page_scores[i]);
}

// Drops the least important sealed page while the page count exceeds the
// budget. The page currently being filled is never a candidate; ties go to the
// lower (older) page id. Sink and local tokens live outside the paged store.
template <typename Scalar>
std::optional<PageId> evict_if_over_budget(PagedKvCache<Scalar>& cache) {
  auto& pages = cache.pages_;
  if (static_cast<std::int64_t>(pages.size()) <= cache.budget_pages_) return std::nullopt;
  const std::size_t candidates = cache.has_open_page() ? pages.size() - 1 : pages.size();
  if (candidates == 0) return std::nullopt;
  std::size_t victim = 0;
  for (std::size_t i = 1; i < candidates; ++i)
    if (pages[i].importance < pages[victim].importance) victim = i;
  const PageId id = pages[victim].id();
  pages.erase(pages.begin() + static_cast<std::ptrdiff_t>(victim));
  return id;
}

// ---------------------------------------------------------------------------
// Head-level attention
// ---------------------------------------------------------------------------

// Sorted token indices a streaming head attends at sequence length seq_len.
inline std::vector<TokenIndex> streaming_mask(TokenIndex seq_len, TokenIndex n_sink,
                                              TokenIndex n_local) {
  if (n_sink < 0 || n_local < 0) throw std::invalid_argument("streaming_mask: negative window");
  std::vector<TokenIndex> out;
  if (seq_len <= 0) return out;
  const TokenIndex sink_end = std::min(n_sink, seq_len);
  const TokenIndex local_begin = std::max(sink_end, seq_len - n_local);
  for (TokenIndex i = 0; i < sink_end; ++i) out.push_back(i);
  for (TokenIndex i = local_begin; i < seq_len; ++i) out.push_back(i);
  return out;
}

template <typename DerivedF, typename DerivedS>
auto gated_attention(const Eigen::MatrixBase<DerivedF>& full_out,
                     const Eigen::MatrixBase<DerivedS>& streaming_out, double alpha)
    -> Vector<typename DerivedF::Scalar> {
  using Scalar = typename DerivedF::Scalar;
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("gated_attention: alpha outside [0,1]");
  if (full_out.size() != streaming_out.size())
    throw std::invalid_argument("gated_attention: length mismatch");
  if (alpha == 1.0) return full_out;
  if (alpha == 0.0) return streaming_out.template cast<Scalar>();
  const Scalar a(alpha);
  return a * full_out + (Scalar(1) - a) * streaming_out.template cast<Scalar>();
}

// Selection carried between consecutive decode queries of one head.
struct SelectionReuse {
  std::vector<PageId> pages;
  int uses = 0;
};

template <typename Scalar>
struct AttentionStep {
  Vector<Scalar> output;
  std::vector<PageId> selected;
  // Importance contribution per cache page (aligned with cache.pages()).
  std::vector<double> page_scores;
  std::vector<TokenIndex> attended;
  bool reused_selection = false;
};

namespace detail {

template <typename Scalar>
void append_range(std::vector<TokenIndex>& out, TokenIndex begin, TokenIndex end) {
  for (TokenIndex i = begin; i < end; ++i) out.push_back(i);
}

}  // namespace detail

// Attention of one query against a head's cache. Streaming heads see sink and
// local tokens; retrieval heads also see the top-k pages, with the selection
// reused for share_stride consecutive calls when `reuse` is supplied.
template <typename DerivedQ, typename Scalar>
AttentionStep<Scalar> sparse_attention_step(const Eigen::MatrixBase<DerivedQ>& query,
                                            const PagedKvCache<Scalar>& cache,
                                            const HeadProfile& profile, const SparsityConfig& cfg,
                                            SelectionReuse* reuse = nullptr) {
  if (query.size() != cache.head_dim())
    throw std::invalid_argument("sparse_attention_step: query dimension mismatch");
  const Vector<Scalar> q = query.derived().template cast<Scalar>();
  const Scalar scale = default_scale<Scalar>(cache.head_dim());
  const auto& pages = cache.pages();

  AttentionStep<Scalar> step;
  step.page_scores.assign(pages.size(), 0.0);

  if (profile.kind == HeadKind::Retrieval && !pages.empty()) {
    if (reuse != nullptr && reuse->uses > 0 && reuse->uses < cfg.share_stride) {
      for (PageId id : reuse->pages)
        if (cache.find_page(id) != nullptr) step.selected.push_back(id);
      ++reuse->uses;
      step.reused_selection = true;
    } else {
      const auto meta = cache.metadata();
      step.selected = select_topk_pages(q, std::span<const PageMetadata<Scalar>>(meta),
                                        static_cast<std::size_t>(std::max(cfg.top_k, 0)),
                                        cfg.relevance);
      if (reuse != nullptr) *reuse = {step.selected, 1};
    }
  }

  std::vector<SoftmaxPartial<Scalar>> parts;
  parts.push_back(absorb_tokens(SoftmaxPartial<Scalar>::identity(cache.head_dim()), q,
                                cache.sink_keys(), cache.sink_values(), scale));
  parts.push_back(absorb_tokens(SoftmaxPartial<Scalar>::identity(cache.head_dim()), q,
                                cache.local_keys(), cache.local_values(), scale));
  std::vector<std::size_t> page_slots;
  for (PageId id : step.selected) {
    const auto* page = cache.find_page(id);
    parts.push_back(absorb_tokens(SoftmaxPartial<Scalar>::identity(cache.head_dim()), q,
                                  page->keys, page->values, scale));
    page_slots.push_back(static_cast<std::size_t>(page - pages.data()));
  }

  const auto total = merge_partials(std::span<const SoftmaxPartial<Scalar>>(parts));
  if (total.empty()) throw std::invalid_argument("sparse_attention_step: no tokens to attend");
  step.output = total.finalize();

  for (std::size_t i = 0; i < page_slots.size(); ++i) {
    const auto& part = parts[2 + i];
    const auto& page = pages[page_slots[i]];
    if (cfg.importance == ImportanceMode::AttentionMass) {
      step.page_scores[page_slots[i]] = static_cast<double>(
          part.running_denominator * std::exp(part.running_max - total.running_max) /
          total.running_denominator);
    } else {
      step.page_scores[page_slots[i]] =
          static_cast<double>(relevance_score(q, page.meta, cfg.relevance));
    }
  }

  detail::append_range<Scalar>(step.attended, 0, cache.sink_keys().rows());
  for (const auto& t : cache.local_window()) step.attended.push_back(t.index);
  for (std::size_t slot : page_slots)
    detail::append_range<Scalar>(step.attended, pages[slot].meta.tokens.begin,
                                 pages[slot].meta.tokens.end);
  std::sort(step.attended.begin(), step.attended.end());
  return step;
}

// Attention over everything the cache still holds (sink, local window and all
// retained pages); the full branch of the gated formulation.
template <typename DerivedQ, typename Scalar>
Vector<Scalar> attend_all(const Eigen::MatrixBase<DerivedQ>& query,
                          const PagedKvCache<Scalar>& cache) {
  const Vector<Scalar> q = query.derived().template cast<Scalar>();
  const Scalar scale = default_scale<Scalar>(cache.head_dim());
  auto acc = absorb_tokens(SoftmaxPartial<Scalar>::identity(cache.head_dim()), q,
                           cache.sink_keys(), cache.sink_values(), scale);
  acc = absorb_tokens(acc, q, cache.local_keys(), cache.local_values(), scale);
  for (const auto& p : cache.pages()) acc = absorb_tokens(acc, q, p.keys, p.values, scale);
  return acc.finalize();
}

}  // namespace hbsim::attn
