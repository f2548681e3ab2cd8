#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mist/errors.hpp"

namespace mist {

using TokenText = std::vector<std::string>;

// Corpus BLEU-4: geometric mean of clipped 1..4-gram precisions times the
// brevity penalty. Multi-reference clipping takes the per-n-gram max count
// across references; the effective reference length is the shortest
// reference. Smoothing: n >= 2 precisions with zero matches use add-one,
// (0+1)/(t+1); unigram precision is unsmoothed so disjoint corpora score
// exactly 0.
double bleu4(const std::vector<TokenText>& hypotheses, const std::vector<std::vector<TokenText>>& reference_sets);

// Mean over examples of the best LCS-based F1 across references.
double rouge_l(const std::vector<TokenText>& hypotheses, const std::vector<std::vector<TokenText>>& reference_sets);

// Fraction of hypotheses equal to any of their references.
double exact_match(const std::vector<TokenText>& hypotheses,
                   const std::vector<std::vector<TokenText>>& reference_sets);

struct LatencyStats {
  std::int64_t median_ns = 0;
  std::int64_t p90_ns = 0;
};

// Nearest-rank percentiles over per-example wall-clock samples.
LatencyStats latency_stats(const std::vector<std::int64_t>& samples_ns);

struct EvalReport {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double exact_match = 0.0;
  int n_examples = 0;
};

EvalReport evaluate_corpus(const std::vector<TokenText>& hypotheses,
                           const std::vector<std::vector<TokenText>>& reference_sets);

}  // namespace mist
