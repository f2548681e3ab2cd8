#pragma once

#include <chrono>
#include <ostream>

#include <json.hpp>

#include "mist/decoding.hpp"
#include "mist/training.hpp"

namespace mist {

inline TokenText ids_to_text(const Vocab& vocab, const TokenSeq& ids) {
  TokenText out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.token(id));
  return out;
}

// Exact match of cached single-pass decoding (greedy decoding for the causal
// objective) against each example's reference set.
template <class S>
double validation_exact_match(const EncoderModel<S>& model, const Dataset& valid, const Vocab& vocab,
                              bool ar_objective) {
  if (valid.examples.empty()) return 0.0;
  DecodeConfig cfg;
  cfg.strategy = ar_objective ? DecodeStrategy::ar_greedy : DecodeStrategy::single_pass;
  cfg.max_target_len = model.cfg.max_target_len;
  std::vector<TokenText> hyps;
  std::vector<std::vector<TokenText>> refs;
  for (const auto& ex : valid.examples) {
    DecodeResult r = decode(model, ex.source, cfg);
    hyps.push_back(ids_to_text(vocab, r.final_tokens));
    std::vector<TokenText> rs;
    for (const auto& ref : ex.reference_set()) rs.push_back(ids_to_text(vocab, ref));
    refs.push_back(std::move(rs));
  }
  return exact_match(hyps, refs);
}

struct TrainLoopResult {
  double best_valid_em = -1.0;
  long best_step = 0;
  long steps_run = 0;
  int skipped_examples = 0;
  bool reached_target = false;
};

// Runs max_steps updates with periodic validation; keeps the best-EM
// parameter snapshot in *best_out and streams line-delimited records to
// metrics_out. Stops early once target_valid_em is reached.
template <class S>
TrainLoopResult run_training(Trainer<S>& trainer, const Dataset& train, const Dataset& valid, const Vocab& vocab,
                             std::ostream* metrics_out, EncoderModel<S>* best_out) {
  const TrainConfig& cfg = trainer.config();
  BatchStream stream(train, cfg.batch_size, cfg.seed, trainer.model().cfg.max_positions,
                     [&cfg](const SequencePair& ex) { return packed_len_bound(ex, cfg); });

  TrainLoopResult result;
  result.skipped_examples = stream.skipped();
  if (best_out) *best_out = trainer.model().deep_clone();

  const auto wall0 = std::chrono::steady_clock::now();
  auto emit = [&](const nlohmann::json& j) {
    if (metrics_out) *metrics_out << j.dump() << "\n";
  };

  auto validate = [&](long step) {
    const double em = validation_exact_match(trainer.model(), valid, vocab, cfg.ar_objective);
    // Ties keep the later snapshot: at equal validation quality the longer-
    // trained parameters are the better artifact.
    const bool best = em >= result.best_valid_em;
    if (best) {
      result.best_valid_em = em;
      result.best_step = step;
      if (best_out) *best_out = trainer.model().deep_clone();
    }
    emit(nlohmann::json{{"type", "valid"}, {"step", step}, {"valid_em", em}, {"best", best}});
    return em;
  };

  for (long step = 1; step <= cfg.max_steps; ++step) {
    std::vector<int> idx = stream.next();
    std::vector<const SequencePair*> batch;
    batch.reserve(idx.size());
    for (int i : idx) batch.push_back(&train.examples[static_cast<std::size_t>(i)]);
    TrainStepOutput out = trainer.train_step(batch);
    result.steps_run = step;

    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1 || step == cfg.max_steps)) {
      const double wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0).count();
      emit(nlohmann::json{{"type", "train"},
                          {"step", step},
                          {"loss_nat", out.loss_nat},
                          {"loss_mist", out.loss_mist},
                          {"loss_length", out.loss_length},
                          {"loss_total", out.loss_total},
                          {"grad_norm", out.grad_norm},
                          {"lr", lr_schedule(step, cfg)},
                          {"wall_ms", wall_ms}});
    }
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && !valid.examples.empty()) {
      const double em = validate(step);
      if (cfg.target_valid_em > 0.0 && em >= cfg.target_valid_em) {
        result.reached_target = true;
        break;
      }
    }
  }
  if (!valid.examples.empty() && result.best_valid_em < 0.0) validate(result.steps_run);
  if (result.best_valid_em < 0.0 && best_out) *best_out = trainer.model().deep_clone();
  // Final-state snapshot wins ties at step 0 (no validation ever ran).
  return result;
}

}  // namespace mist
