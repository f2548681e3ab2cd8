#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "mist/metrics.hpp"
#include "mist/model.hpp"
#include "mist/tokens.hpp"

namespace mist {

enum class DecodeStrategy { single_pass, mist_iter, mask_predict, ar_greedy };

inline DecodeStrategy decode_strategy_from_string(const std::string& s) {
  if (s == "single_pass") return DecodeStrategy::single_pass;
  if (s == "mist_iter") return DecodeStrategy::mist_iter;
  if (s == "mask_predict") return DecodeStrategy::mask_predict;
  if (s == "ar_greedy") return DecodeStrategy::ar_greedy;
  throw UsageError("unknown strategy '" + s + "' (single_pass | mist_iter | mask_predict | ar_greedy)");
}

inline std::string to_string(DecodeStrategy s) {
  switch (s) {
    case DecodeStrategy::single_pass: return "single_pass";
    case DecodeStrategy::mist_iter: return "mist_iter";
    case DecodeStrategy::mask_predict: return "mask_predict";
    case DecodeStrategy::ar_greedy: return "ar_greedy";
  }
  return "?";
}

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::single_pass;
  int iterations = 1;
  bool use_cache = true;
  int max_target_len = 16;
  int force_target_len = 0;  // > 0: skip the length head (latency protocol)

  void validate() const {
    if (iterations < 1) throw UsageError("decode config: iterations must be >= 1");
    if (strategy == DecodeStrategy::single_pass && iterations != 1)
      throw UsageError("decode config: single_pass requires iterations == 1");
  }
};

// Per-layer source keys/values plus the predicted target length. Valid
// because source rows never attend to the target region, so their K/V are
// independent of whatever occupies it.
template <class S>
struct SourceCache {
  std::vector<Tensor<S>> k, v;  // per layer, [cached_rows x d]
  int source_len = 0;
  int cached_rows = 0;
  int t_hat_raw = 0;  // 1 + argmax of the length head, pre-clamp
};

struct DecodeResult {
  std::vector<TokenSeq> tokens_per_iteration;  // length == cfg.iterations
  TokenSeq final_tokens;                       // specials stripped
  int t_hat = 0;
  int executed_iterations = 0;
  std::int64_t encode_source_ns = 0;
  std::vector<std::int64_t> per_iteration_ns;  // one entry per executed pass
  std::vector<std::string> warnings;
};

namespace detail {

inline std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

inline TokenSeq strip_specials(const TokenSeq& ids) {
  TokenSeq out;
  for (int id : ids)
    if (id >= kNumSpecialTokens) out.push_back(id);
  return out;
}

}  // namespace detail

// Encodes source-only "[CLS] X [SEP]" (optionally with a pseudo-target
// prefix), captures per-layer K/V and the raw length prediction.
template <class S>
SourceCache<S> cache_source(const EncoderModel<S>& model, const TokenSeq& x, const TokenSeq* pseudo = nullptr) {
  NoTapeScope<S> pause;
  PackedInput in = pack_source_only(x, pseudo, model.cfg.max_positions);
  LayerKv<S> kv;
  EncoderOutput<S> out = encode(model, in, &kv);
  SourceCache<S> c;
  c.k = std::move(kv.k);
  c.v = std::move(kv.v);
  c.source_len = in.n();
  c.cached_rows = in.n();
  c.t_hat_raw = predict_length(out);
  return c;
}

// Runs `tgt_tokens` target rows on top of a source cache. Rows attend to all
// cached rows and to each other, exactly the visibility the full packed
// layout gives the target side, so logits match the uncached path
// bit-for-bit. With append_kv the rows join the cache (autoregressive use,
// where causality holds because future rows simply are not there yet).
// Returns MLM logits for the first n_logit_rows target rows.
template <class S>
Tensor<S> encode_target_cached(const EncoderModel<S>& model, SourceCache<S>& cache, const TokenSeq& tgt_tokens,
                               int n_logit_rows, bool append_kv) {
  NoTapeScope<S> pause;
  const auto& cfg = model.cfg;
  const int t = static_cast<int>(tgt_tokens.size());
  const int d = cfg.d_hidden;
  const int hd = d / cfg.n_heads;
  if (cache.cached_rows + t > cfg.max_positions)
    throw ContractError("decode: cached rows + target length " + std::to_string(cache.cached_rows + t) +
                        " exceeds max_positions " + std::to_string(cfg.max_positions));

  std::vector<int> positions(tgt_tokens.size()), segments(tgt_tokens.size(), 1);
  for (int i = 0; i < t; ++i) positions[static_cast<std::size_t>(i)] = cache.cached_rows + i;

  Tensor<S> x = add(add(embedding_lookup(model.tok_emb, tgt_tokens),
                        embedding_lookup(model.pos_emb, positions)),
                    embedding_lookup(model.seg_emb, segments));
  x = layer_norm(x, model.emb_ln_g, model.emb_ln_b);

  const S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(hd));
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const auto& L = model.layers[li];
    Tensor<S> q = linear(x, L.wq, L.bq);
    Tensor<S> k = linear(x, L.wk, L.bk);
    Tensor<S> v = linear(x, L.wv, L.bv);
    Tensor<S> k_all = concat_rows<S>({cache.k[li], k});
    Tensor<S> v_all = concat_rows<S>({cache.v[li], v});
    if (append_kv) {
      cache.k[li] = k_all;
      cache.v[li] = v_all;
    }
    std::vector<Tensor<S>> heads;
    heads.reserve(cfg.n_heads);
    for (int h = 0; h < cfg.n_heads; ++h) {
      Tensor<S> qh = slice_cols(q, h * hd, (h + 1) * hd);
      Tensor<S> kh = slice_cols(k_all, h * hd, (h + 1) * hd);
      Tensor<S> vh = slice_cols(v_all, h * hd, (h + 1) * hd);
      Tensor<S> probs = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_hd));
      heads.push_back(matmul(probs, vh));
    }
    Tensor<S> attn = linear(concat_cols(heads), L.wo, L.bo);
    x = layer_norm(add(x, attn), L.ln1_g, L.ln1_b);
    Tensor<S> ff = linear(gelu(linear(x, L.w1, L.b1)), L.w2, L.b2);
    x = layer_norm(add(x, ff), L.ln2_g, L.ln2_b);
  }
  if (append_kv) cache.cached_rows += t;
  return add_rowvec(matmul_nt(slice_rows(x, 0, n_logit_rows), model.tok_emb), model.mlm_bias);
}

namespace detail {

// Resolves T-hat: forced length under the latency protocol, otherwise the
// length head, clamped to the decode limit and the position budget.
template <class S>
int resolve_target_len(const EncoderModel<S>& model, const DecodeConfig& cfg, int t_hat_raw, int source_rows,
                       int extra_rows, std::vector<std::string>* warnings) {
  int t = cfg.force_target_len > 0 ? cfg.force_target_len : t_hat_raw;
  if (t > cfg.max_target_len) {
    warnings->push_back("predicted length " + std::to_string(t) + " clamped to max_target_len " +
                        std::to_string(cfg.max_target_len));
    t = cfg.max_target_len;
  }
  const int budget = model.cfg.max_positions - source_rows - extra_rows;
  if (t > budget) {
    warnings->push_back("target length " + std::to_string(t) + " clamped to position budget " +
                        std::to_string(budget));
    t = budget;
  }
  if (t < 1) throw ContractError("decode: no room for any target token within max_positions");
  return t;
}

template <class S>
TokenPrediction nar_pass(const EncoderModel<S>& model, const TokenSeq& x, const TokenSeq* pseudo,
                         const TokenSeq& y_region, bool use_cache, SourceCache<S>* cache) {
  if (use_cache) {
    TokenSeq with_sep = y_region;
    with_sep.push_back(kSepId);
    SourceCache<S> working = *cache;  // keep the shared cache pristine
    Tensor<S> logits = encode_target_cached(model, working, with_sep,
                                            static_cast<int>(y_region.size()), false);
    return predict_rows(logits);
  }
  NoTapeScope<S> pause;
  PackedInput in = pack_training_input(x, y_region, std::vector<unsigned char>(y_region.size(), 0), pseudo,
                                       model.cfg.max_positions);
  EncoderOutput<S> out = encode(model, in);
  return predict_tokens(out);
}

}  // namespace detail

template <class S>
DecodeResult decode_single_pass(const EncoderModel<S>& model, const TokenSeq& x, const DecodeConfig& cfg) {
  DecodeResult r;
  const std::int64_t t0 = detail::now_ns();
  SourceCache<S> cache = cache_source(model, x);
  r.encode_source_ns = detail::now_ns() - t0;
  r.t_hat = detail::resolve_target_len(model, cfg, cache.t_hat_raw, cache.source_len, 1, &r.warnings);

  const std::int64_t t1 = detail::now_ns();
  TokenSeq masks(static_cast<std::size_t>(r.t_hat), kMaskId);
  TokenPrediction pred = detail::nar_pass(model, x, nullptr, masks, cfg.use_cache, &cache);
  r.per_iteration_ns.push_back(detail::now_ns() - t1);
  r.tokens_per_iteration.push_back(pred.ids);
  r.final_tokens = detail::strip_specials(pred.ids);
  r.executed_iterations = 1;
  return r;
}

// Iterative decoding by re-mixing: iteration k feeds the previous full
// prediction as a source-side pseudo target and re-predicts every position.
// T-hat is fixed at iteration 1; the loop stops early at a fixed point.
template <class S>
DecodeResult decode_mist(const EncoderModel<S>& model, const TokenSeq& x, const DecodeConfig& cfg) {
  DecodeResult r;
  const std::int64_t t0 = detail::now_ns();
  SourceCache<S> cache = cache_source(model, x);
  r.encode_source_ns = detail::now_ns() - t0;
  r.t_hat = detail::resolve_target_len(model, cfg, cache.t_hat_raw, cache.source_len, 1, &r.warnings);
  if (cfg.iterations > 1) {
    // Later iterations pack [CLS] Y_p [SEP] X [SEP] [MASK]xT [SEP]: the
    // pseudo target occupies another T source-side rows.
    const int budget = (model.cfg.max_positions - cache.source_len - 2) / 2;
    if (budget < 1)
      throw ContractError("decode_mist: combined pseudo-target and source length exceeds max_positions");
    if (r.t_hat > budget) {
      r.warnings.push_back("target length " + std::to_string(r.t_hat) + " clamped to " + std::to_string(budget) +
                           " to fit the mixed layout");
      r.t_hat = budget;
    }
  }

  TokenSeq masks(static_cast<std::size_t>(r.t_hat), kMaskId);
  const std::int64_t t1 = detail::now_ns();
  TokenPrediction pred = detail::nar_pass(model, x, nullptr, masks, cfg.use_cache, &cache);
  r.per_iteration_ns.push_back(detail::now_ns() - t1);
  r.tokens_per_iteration.push_back(pred.ids);
  r.executed_iterations = 1;

  for (int k = 2; k <= cfg.iterations; ++k) {
    const TokenSeq prev = r.tokens_per_iteration.back();
    const std::int64_t tk = detail::now_ns();
    TokenPrediction next;
    if (cfg.use_cache) {
      SourceCache<S> mixed = cache_source(model, x, &prev);
      TokenSeq with_sep = masks;
      with_sep.push_back(kSepId);
      next = predict_rows(encode_target_cached(model, mixed, with_sep, r.t_hat, false));
    } else {
      NoTapeScope<S> pause;
      PackedInput in = pack_inference_input(x, r.t_hat, &prev, model.cfg.max_positions);
      next = predict_tokens(encode(model, in));
    }
    r.per_iteration_ns.push_back(detail::now_ns() - tk);
    r.tokens_per_iteration.push_back(next.ids);
    r.executed_iterations = k;
    if (next.ids == prev) break;  // fixed point; later iterations cannot move
  }
  while (static_cast<int>(r.tokens_per_iteration.size()) < cfg.iterations)
    r.tokens_per_iteration.push_back(r.tokens_per_iteration.back());
  r.final_tokens = detail::strip_specials(r.tokens_per_iteration.back());
  return r;
}

// Mask-Predict with the linear decay schedule: iteration k re-masks the
// n_k = floor(T * (N - k) / N) lowest-confidence positions and re-predicts
// only those; kept tokens retain the confidence of the pass that produced
// them.
template <class S>
DecodeResult decode_mask_predict(const EncoderModel<S>& model, const TokenSeq& x, const DecodeConfig& cfg) {
  DecodeResult r;
  const std::int64_t t0 = detail::now_ns();
  SourceCache<S> cache = cache_source(model, x);
  r.encode_source_ns = detail::now_ns() - t0;
  r.t_hat = detail::resolve_target_len(model, cfg, cache.t_hat_raw, cache.source_len, 1, &r.warnings);

  TokenSeq masks(static_cast<std::size_t>(r.t_hat), kMaskId);
  const std::int64_t t1 = detail::now_ns();
  TokenPrediction cur = detail::nar_pass(model, x, nullptr, masks, cfg.use_cache, &cache);
  r.per_iteration_ns.push_back(detail::now_ns() - t1);
  r.tokens_per_iteration.push_back(cur.ids);
  r.executed_iterations = 1;

  const int n_iters = cfg.iterations;
  for (int k = 1; k < n_iters; ++k) {
    const std::int64_t tk = detail::now_ns();
    const int n_k = static_cast<int>(static_cast<long>(r.t_hat) * (n_iters - k) / n_iters);
    if (n_k > 0) {
      std::vector<int> order(cur.ids.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (cur.confidence[static_cast<std::size_t>(a)] != cur.confidence[static_cast<std::size_t>(b)])
          return cur.confidence[static_cast<std::size_t>(a)] < cur.confidence[static_cast<std::size_t>(b)];
        return a < b;
      });
      TokenSeq y_region = cur.ids;
      std::vector<int> remasked(order.begin(), order.begin() + n_k);
      for (int pos : remasked) y_region[static_cast<std::size_t>(pos)] = kMaskId;
      TokenPrediction pred = detail::nar_pass(model, x, nullptr, y_region, cfg.use_cache, &cache);
      for (int pos : remasked) {
        cur.ids[static_cast<std::size_t>(pos)] = pred.ids[static_cast<std::size_t>(pos)];
        cur.confidence[static_cast<std::size_t>(pos)] = pred.confidence[static_cast<std::size_t>(pos)];
      }
    }
    r.per_iteration_ns.push_back(detail::now_ns() - tk);
    r.tokens_per_iteration.push_back(cur.ids);
    r.executed_iterations = k + 1;
  }
  r.final_tokens = detail::strip_specials(cur.ids);
  return r;
}

// Greedy left-to-right baseline on a causally trained checkpoint: source K/V
// cached once, one target row appended per step, stop on [SEP] or the length
// limit (forced length ignores [SEP] for the latency protocol).
template <class S>
DecodeResult decode_ar_greedy(const EncoderModel<S>& model, const TokenSeq& x, const DecodeConfig& cfg) {
  DecodeResult r;
  const std::int64_t t0 = detail::now_ns();
  SourceCache<S> cache = cache_source(model, x);
  r.encode_source_ns = detail::now_ns() - t0;

  const bool forced = cfg.force_target_len > 0;
  int limit = forced ? cfg.force_target_len : cfg.max_target_len;
  limit = std::min(limit, model.cfg.max_positions - cache.source_len);
  if (limit < 1) throw ContractError("decode: no room for any target token within max_positions");

  TokenSeq emitted;
  int next_input = kMaskId;  // start-of-target slot, as in training
  while (static_cast<int>(emitted.size()) < limit) {
    const std::int64_t ts = detail::now_ns();
    Tensor<S> logits = encode_target_cached(model, cache, {next_input}, 1, true);
    const int id = predict_rows(logits).ids[0];
    r.per_iteration_ns.push_back(detail::now_ns() - ts);
    emitted.push_back(id);
    if (!forced && id == kSepId) break;
    next_input = id;
  }
  r.t_hat = static_cast<int>(emitted.size());
  r.tokens_per_iteration.push_back(emitted);
  r.executed_iterations = 1;
  r.final_tokens = detail::strip_specials(emitted);
  return r;
}

template <class S>
DecodeResult decode(const EncoderModel<S>& model, const TokenSeq& x, const DecodeConfig& cfg) {
  cfg.validate();
  switch (cfg.strategy) {
    case DecodeStrategy::single_pass: return decode_single_pass(model, x, cfg);
    case DecodeStrategy::mist_iter: return decode_mist(model, x, cfg);
    case DecodeStrategy::mask_predict: return decode_mask_predict(model, x, cfg);
    case DecodeStrategy::ar_greedy: return decode_ar_greedy(model, x, cfg);
  }
  throw UsageError("decode: unknown strategy");
}

// ---------------------------------------------------------------------------
// Latency harness. Strictly serial, batch size 1.
// ---------------------------------------------------------------------------

struct LatencyMeasurement {
  std::string name;
  int n_measured = 0;
  LatencyStats stats;
  std::int64_t per_iteration_median_ns = 0;
};

template <class S>
LatencyMeasurement measure_latency(const std::string& name, const EncoderModel<S>& model,
                                   const std::vector<TokenSeq>& inputs, const DecodeConfig& cfg, int warmup) {
  if (static_cast<int>(inputs.size()) <= warmup)
    throw UsageError("benchmark: need more than " + std::to_string(warmup) + " examples, got " +
                     std::to_string(inputs.size()));
  std::vector<std::int64_t> totals, per_iter;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::int64_t t0 = detail::now_ns();
    DecodeResult res = decode(model, inputs[i], cfg);
    const std::int64_t dt = detail::now_ns() - t0;
    if (static_cast<int>(i) < warmup) continue;
    totals.push_back(dt);
    per_iter.push_back(dt / std::max(1, res.executed_iterations));
  }
  LatencyMeasurement m;
  m.name = name;
  m.n_measured = static_cast<int>(totals.size());
  m.stats = latency_stats(totals);
  m.per_iteration_median_ns = latency_stats(per_iter).median_ns;
  return m;
}

struct SpeedupRow {
  LatencyMeasurement measurement;
  double speedup_vs_ar = 0.0;
};

struct SpeedupReport {
  std::vector<SpeedupRow> rows;  // ar_greedy first
  int warmup_excluded = 0;
};

// Median wall-clock per example at batch 1 for the AR baseline, single-pass
// NAR, and iterative mixing; speedup = AR median / strategy median.
template <class S>
SpeedupReport measure_speedup(const EncoderModel<S>& nar_model, const EncoderModel<S>& ar_model,
                              const std::vector<TokenSeq>& inputs, const DecodeConfig& base, int mist_iterations,
                              int warmup = 10) {
  SpeedupReport report;
  report.warmup_excluded = warmup;

  DecodeConfig ar_cfg = base;
  ar_cfg.strategy = DecodeStrategy::ar_greedy;
  ar_cfg.iterations = 1;
  DecodeConfig sp_cfg = base;
  sp_cfg.strategy = DecodeStrategy::single_pass;
  sp_cfg.iterations = 1;
  DecodeConfig mist_cfg = base;
  mist_cfg.strategy = DecodeStrategy::mist_iter;
  mist_cfg.iterations = mist_iterations;

  LatencyMeasurement ar = measure_latency("ar_greedy", ar_model, inputs, ar_cfg, warmup);
  LatencyMeasurement sp = measure_latency("single_pass", nar_model, inputs, sp_cfg, warmup);
  LatencyMeasurement mi = measure_latency("mist_iter[" + std::to_string(mist_iterations) + "]", nar_model,
                                          inputs, mist_cfg, warmup);
  const double ar_med = static_cast<double>(ar.stats.median_ns);
  for (const auto& m : {ar, sp, mi}) {
    SpeedupRow row;
    row.measurement = m;
    row.speedup_vs_ar = ar_med / static_cast<double>(m.stats.median_ns);
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace mist
