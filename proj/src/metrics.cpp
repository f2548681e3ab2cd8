#include "mist/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "mist/errors.hpp"

namespace mist {

namespace {

void check_inputs(const std::vector<TokenText>& hyps, const std::vector<std::vector<TokenText>>& refs) {
  if (hyps.empty()) throw UsageError("metrics: empty hypothesis list");
  if (hyps.size() != refs.size())
    throw UsageError("metrics: " + std::to_string(hyps.size()) + " hypotheses vs " + std::to_string(refs.size()) +
                     " reference sets");
  for (const auto& rs : refs)
    if (rs.empty()) throw UsageError("metrics: empty reference set");
}

std::map<TokenText, int> ngram_counts(const TokenText& toks, int n) {
  std::map<TokenText, int> out;
  if (static_cast<int>(toks.size()) < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++out[TokenText(toks.begin() + static_cast<long>(i), toks.begin() + static_cast<long>(i) + n)];
  return out;
}

int lcs_length(const TokenText& a, const TokenText& b) {
  const std::size_t m = a.size(), n = b.size();
  std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

}  // namespace

double bleu4(const std::vector<TokenText>& hypotheses, const std::vector<std::vector<TokenText>>& reference_sets) {
  check_inputs(hypotheses, reference_sets);
  long matches[4] = {0, 0, 0, 0};
  long totals[4] = {0, 0, 0, 0};
  long hyp_len = 0, ref_len = 0;
  for (std::size_t e = 0; e < hypotheses.size(); ++e) {
    const TokenText& hyp = hypotheses[e];
    const auto& refs = reference_sets[e];
    hyp_len += static_cast<long>(hyp.size());
    // Effective reference length: the shortest reference. This keeps the
    // multi-reference score an upper bound of every single-reference score.
    long best_ref = static_cast<long>(refs[0].size());
    for (const auto& r : refs) best_ref = std::min(best_ref, static_cast<long>(r.size()));
    ref_len += best_ref;
    for (int n = 1; n <= 4; ++n) {
      auto hyp_counts = ngram_counts(hyp, n);
      std::map<TokenText, int> clip;
      for (const auto& r : refs)
        for (const auto& [gram, cnt] : ngram_counts(r, n)) clip[gram] = std::max(clip[gram], cnt);
      for (const auto& [gram, cnt] : hyp_counts) {
        totals[n - 1] += cnt;
        auto it = clip.find(gram);
        if (it != clip.end()) matches[n - 1] += std::min(cnt, it->second);
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_p = 0.0;
  for (int n = 1; n <= 4; ++n) {
    double p;
    if (totals[n - 1] == 0) {
      p = 1.0;  // every hypothesis shorter than n tokens; neutral
    } else if (matches[n - 1] > 0) {
      p = static_cast<double>(matches[n - 1]) / static_cast<double>(totals[n - 1]);
    } else if (n == 1) {
      return 0.0;
    } else {
      p = 1.0 / static_cast<double>(totals[n - 1] + 1);  // add-one smoothing
    }
    log_p += std::log(p);
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
  return bp * std::exp(log_p / 4.0);
}

double rouge_l(const std::vector<TokenText>& hypotheses, const std::vector<std::vector<TokenText>>& reference_sets) {
  check_inputs(hypotheses, reference_sets);
  double sum_f = 0.0;
  for (std::size_t e = 0; e < hypotheses.size(); ++e) {
    const TokenText& hyp = hypotheses[e];
    double best = 0.0;
    for (const auto& ref : reference_sets[e]) {
      const int lcs = lcs_length(hyp, ref);
      if (lcs == 0 || hyp.empty() || ref.empty()) continue;
      const double p = static_cast<double>(lcs) / static_cast<double>(hyp.size());
      const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
      best = std::max(best, 2.0 * p * r / (p + r));
    }
    sum_f += best;
  }
  return sum_f / static_cast<double>(hypotheses.size());
}

double exact_match(const std::vector<TokenText>& hypotheses,
                   const std::vector<std::vector<TokenText>>& reference_sets) {
  check_inputs(hypotheses, reference_sets);
  long hits = 0;
  for (std::size_t e = 0; e < hypotheses.size(); ++e)
    for (const auto& ref : reference_sets[e])
      if (hypotheses[e] == ref) {
        ++hits;
        break;
      }
  return static_cast<double>(hits) / static_cast<double>(hypotheses.size());
}

LatencyStats latency_stats(const std::vector<std::int64_t>& samples_ns) {
  if (samples_ns.empty()) throw UsageError("latency_stats: no samples after warmup exclusion");
  std::vector<std::int64_t> sorted = samples_ns;
  std::sort(sorted.begin(), sorted.end());
  auto nearest_rank = [&](double pct) {
    const std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    return sorted[rank - 1];
  };
  return LatencyStats{nearest_rank(50.0), nearest_rank(90.0)};
}

EvalReport evaluate_corpus(const std::vector<TokenText>& hypotheses,
                           const std::vector<std::vector<TokenText>>& reference_sets) {
  EvalReport r;
  r.bleu4 = bleu4(hypotheses, reference_sets);
  r.rouge_l = rouge_l(hypotheses, reference_sets);
  r.exact_match = exact_match(hypotheses, reference_sets);
  r.n_examples = static_cast<int>(hypotheses.size());
  return r;
}

}  // namespace mist
