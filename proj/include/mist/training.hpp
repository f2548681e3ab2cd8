#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mist/data.hpp"
#include "mist/model.hpp"
#include "mist/rng.hpp"

namespace mist {

enum class MixingMode { none, static_mix, mist };

inline MixingMode mixing_mode_from_string(const std::string& s) {
  if (s == "none") return MixingMode::none;
  if (s == "static") return MixingMode::static_mix;
  if (s == "mist") return MixingMode::mist;
  throw UsageError("unknown mixing mode '" + s + "' (none | static | mist)");
}

inline std::string to_string(MixingMode m) {
  switch (m) {
    case MixingMode::none: return "none";
    case MixingMode::static_mix: return "static";
    case MixingMode::mist: return "mist";
  }
  return "?";
}

struct TrainConfig {
  double f_ratio = 0.5;
  MixingMode mixing = MixingMode::none;
  double lr = 3e-5;
  int warmup_steps = 500;
  int batch_size = 64;
  double length_loss_weight = 0.1;
  int max_steps = 1000;
  std::uint64_t seed = 42;
  double grad_clip = 0.0;     // 0 = off
  bool ar_objective = false;  // causal-target mode for the latency baseline
  int eval_every = 200;
  int log_every = 20;
  double target_valid_em = 0.0;  // > 0: stop once validation exact-match reaches it

  void validate() const {
    if (f_ratio <= 0.0 || f_ratio > 1.0) throw ContractError("train config: f_ratio must be in (0, 1]");
    if (batch_size < 1 || max_steps < 0) throw ContractError("train config: bad batch_size/max_steps");
    if (ar_objective && mixing != MixingMode::none)
      throw UsageError("train config: the causal objective does not combine with mixing modes");
  }
};

// Linear warmup to lr, then constant.
inline double lr_schedule(long step, const TrainConfig& cfg) {
  if (step < 1) throw ContractError("lr_schedule: step must be >= 1");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  return cfg.lr;
}

// Replaces exactly max(1, round(f_ratio * T)) positions with [MASK];
// loss_mask is true exactly at the replaced positions.
inline std::pair<TokenSeq, std::vector<unsigned char>> sample_mask(const TokenSeq& y, double f_ratio,
                                                                   std::mt19937_64& rng) {
  const int t = static_cast<int>(y.size());
  if (t < 1) throw ContractError("sample_mask: empty target");
  int n_mask = static_cast<int>(std::lround(f_ratio * t));
  n_mask = std::max(1, std::min(n_mask, t));
  std::vector<int> idx(static_cast<std::size_t>(t));
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first n_mask slots are a uniform sample.
  for (int i = 0; i < n_mask; ++i) {
    std::uniform_int_distribution<int> pick(i, t - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  TokenSeq masked = y;
  std::vector<unsigned char> loss_mask(static_cast<std::size_t>(t), 0);
  for (int i = 0; i < n_mask; ++i) {
    masked[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = kMaskId;
    loss_mask[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
  }
  return {std::move(masked), std::move(loss_mask)};
}

struct PseudoTarget {
  TokenSeq tokens;  // gold length, no [MASK] ids possible but not forbidden
  long source_model_step = 0;
};

// Argmax prediction for an all-[MASK] target of the gold length; no tape is
// recorded, so parameter gradients are untouched.
template <class S>
PseudoTarget generate_pseudo_target(const EncoderModel<S>& model, const TokenSeq& x, int t_gold,
                                    long model_step = 0) {
  if (t_gold < 1) throw ContractError("generate_pseudo_target: target length must be >= 1");
  NoTapeScope<S> pause;
  PackedInput in = pack_inference_input(x, t_gold, nullptr, model.cfg.max_positions);
  EncoderOutput<S> out = encode(model, in);
  PseudoTarget p;
  p.tokens = predict_tokens(out).ids;
  p.source_model_step = model_step;
  return p;
}

// NAT objective: mask the target, pack [CLS] X [SEP] Y_M [SEP], and score the
// masked positions against gold.
template <class S>
Tensor<S> nat_loss(const EncoderModel<S>& model, const TokenSeq& x, const TokenSeq& y, std::mt19937_64& rng,
                   double f_ratio = 0.5) {
  auto [y_masked, loss_mask] = sample_mask(y, f_ratio, rng);
  PackedInput in = pack_training_input(x, y_masked, loss_mask, nullptr, model.cfg.max_positions);
  EncoderOutput<S> out = encode(model, in);
  return cross_entropy(out.token_logits, y, in.loss_mask);
}

// Mix objective: pack [CLS] Y_p [SEP] X [SEP] Y_M [SEP] with a fresh mask
// draw and score masked positions against gold.
template <class S>
Tensor<S> mist_loss(const EncoderModel<S>& model, const TokenSeq& x, const TokenSeq& y, const TokenSeq& y_pseudo,
                    std::mt19937_64& rng, double f_ratio = 0.5) {
  if (y_pseudo.size() != y.size()) throw ContractError("mist_loss: pseudo target length differs from gold");
  auto [y_masked, loss_mask] = sample_mask(y, f_ratio, rng);
  PackedInput in = pack_training_input(x, y_masked, loss_mask, &y_pseudo, model.cfg.max_positions);
  EncoderOutput<S> out = encode(model, in);
  return cross_entropy(out.token_logits, y, in.loss_mask);
}

// Length classification against class T_gold - 1.
template <class S>
Tensor<S> length_loss(const EncoderModel<S>& model, const TokenSeq& x, int t_gold) {
  if (t_gold < 1 || t_gold > model.cfg.max_target_len)
    throw ContractError("length_loss: gold length " + std::to_string(t_gold) + " outside [1, " +
                        std::to_string(model.cfg.max_target_len) + "]");
  PackedInput in = pack_source_only(x, nullptr, model.cfg.max_positions);
  EncoderOutput<S> out = encode(model, in);
  return cross_entropy(out.length_logits, {t_gold - 1}, {1});
}

template <class S>
struct AdamState {
  std::vector<std::vector<S>> m, v;
  long t = 0;

  template <class Model>
  void init_for(Model& model) {
    m.clear();
    v.clear();
    for (auto& [name, p] : model.named_parameters()) {
      m.emplace_back(p->numel(), S(0));
      v.emplace_back(p->numel(), S(0));
    }
  }
};

struct TrainStepOutput {
  double loss_nat = 0.0;
  double loss_mist = 0.0;
  double loss_length = 0.0;
  double loss_total = 0.0;
  double grad_norm = 0.0;
  int n_examples = 0;
};

// Owns the model and optimizer state for one training run.
template <class S>
class Trainer {
 public:
  Trainer(EncoderModel<S> model, TrainConfig cfg) : model_(std::move(model)), cfg_(cfg) {
    cfg_.validate();
    adam_.init_for(model_);
  }

  EncoderModel<S>& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  long step() const { return step_; }

  // One optimizer update over a batch of examples. Examples are packed and
  // padded to the batch maximum; mixing_mode=mist additionally regenerates a
  // pseudo target per example from the NAT pass predictions and adds the mix
  // loss. Gradients are zeroed after the update.
  TrainStepOutput train_step(const std::vector<const SequencePair*>& batch) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    const long step_no = step_ + 1;
    const int b = static_cast<int>(batch.size());
    const S inv_b = S(1) / static_cast<S>(b);

    // Per-batch padding: every NAT-pass input is padded to the widest packed
    // example; mix-pass inputs are padded to their own batch maximum.
    std::vector<PackedInput> nat_inputs(batch.size());
    std::vector<std::vector<int>> nat_labels(batch.size());
    int nat_max = 0;
    for (int i = 0; i < b; ++i) {
      const SequencePair& ex = *batch[static_cast<std::size_t>(i)];
      auto rng = make_rng(mix_seed(cfg_.seed ^ 0x6e61747061737357ULL, static_cast<std::uint64_t>(step_no),
                                   static_cast<std::uint64_t>(i)));
      if (cfg_.ar_objective) {
        nat_inputs[static_cast<std::size_t>(i)] = pack_ar_training_input(
            ex.source, ex.target, model_.cfg.max_positions, &nat_labels[static_cast<std::size_t>(i)]);
      } else {
        auto [y_masked, loss_mask] = sample_mask(ex.target, cfg_.f_ratio, rng);
        nat_inputs[static_cast<std::size_t>(i)] =
            pack_training_input(ex.source, y_masked, loss_mask, ex.has_pseudo ? &ex.pseudo : nullptr,
                                model_.cfg.max_positions);
        nat_labels[static_cast<std::size_t>(i)] = ex.target;
      }
      nat_max = std::max(nat_max, nat_inputs[static_cast<std::size_t>(i)].n());
    }
    for (auto& in : nat_inputs) pad_packed_input(in, nat_max);

    // Mix-pass batch maximum is known up front: 4 specials + |X| + 2T.
    int mist_max = 0;
    if (cfg_.mixing == MixingMode::mist)
      for (int i = 0; i < b; ++i) {
        const SequencePair& ex = *batch[static_cast<std::size_t>(i)];
        if (!ex.has_pseudo)
          mist_max = std::max(mist_max, 4 + static_cast<int>(ex.source.size()) +
                                            2 * static_cast<int>(ex.target.size()));
      }

    double sum_nat = 0.0, sum_mist = 0.0, sum_len = 0.0;
    for (int i = 0; i < b; ++i) {
      const SequencePair& ex = *batch[static_cast<std::size_t>(i)];
      const PackedInput& in = nat_inputs[static_cast<std::size_t>(i)];
      Graph<S> tape;
      TapeScope<S> scope(tape);

      EncoderOutput<S> out = encode(model_, in);
      Tensor<S> ce_nat = cross_entropy(out.token_logits, nat_labels[static_cast<std::size_t>(i)], in.loss_mask);
      Tensor<S> loss = ce_nat;

      Tensor<S> ce_len;
      bool has_len = false;
      if (!cfg_.ar_objective && static_cast<int>(ex.target.size()) <= model_.cfg.max_target_len) {
        ce_len = cross_entropy(out.length_logits, {static_cast<int>(ex.target.size()) - 1},
                               std::vector<unsigned char>{1});
        has_len = true;
        loss = add(loss, scale(ce_len, static_cast<S>(cfg_.length_loss_weight)));
      }

      Tensor<S> ce_mist;
      bool has_mist = false;
      if (cfg_.mixing == MixingMode::mist && !ex.has_pseudo) {
        // First pass already predicted the whole target; its argmax is the
        // pseudo target (treated as constant input, no gradient path).
        TokenSeq y_p = predict_tokens(out).ids;
        auto rng2 = make_rng(mix_seed(cfg_.seed ^ 0x6d69737470617373ULL, static_cast<std::uint64_t>(step_no),
                                      static_cast<std::uint64_t>(i)));
        auto [y_masked2, loss_mask2] = sample_mask(ex.target, cfg_.f_ratio, rng2);
        PackedInput mix_in =
            pack_training_input(ex.source, y_masked2, loss_mask2, &y_p, model_.cfg.max_positions);
        pad_packed_input(mix_in, mist_max);
        EncoderOutput<S> mix_out = encode(model_, mix_in);
        ce_mist = cross_entropy(mix_out.token_logits, ex.target, mix_in.loss_mask);
        has_mist = true;
        loss = add(loss, ce_mist);
      }

      Tensor<S> scaled = scale(loss, inv_b);
      tape.backward(scaled);

      const double nat_v = static_cast<double>(ce_nat.value());
      const double mist_v = has_mist ? static_cast<double>(ce_mist.value()) : 0.0;
      const double len_v = has_len ? static_cast<double>(ce_len.value()) : 0.0;
      if (!std::isfinite(nat_v) || !std::isfinite(mist_v) || !std::isfinite(len_v))
        throw NumericError("train_step: non-finite loss at step " + std::to_string(step_no) + " (nat=" +
                           std::to_string(nat_v) + ", mist=" + std::to_string(mist_v) + ", length=" +
                           std::to_string(len_v) + ")");
      sum_nat += nat_v;
      sum_mist += mist_v;
      sum_len += len_v;
    }

    TrainStepOutput out;
    out.n_examples = b;
    out.loss_nat = sum_nat / b;
    out.loss_mist = sum_mist / b;
    out.loss_length = sum_len / b;
    out.loss_total = out.loss_nat + out.loss_mist + cfg_.length_loss_weight * out.loss_length;
    out.grad_norm = apply_update_(step_no);
    step_ = step_no;
    return out;
  }

 private:
  // Adam with beta = (0.9, 0.999), eps = 1e-8, no weight decay; linear
  // warmup schedule. Returns the pre-clip global gradient norm.
  double apply_update_(long step_no) {
    const double lr = lr_schedule(step_no, cfg_);
    auto params = model_.named_parameters();
    double sq = 0.0;
    for (auto& [name, p] : params)
      for (S g : *p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    S clip_scale = S(1);
    if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip)
      clip_scale = static_cast<S>(cfg_.grad_clip / norm);

    adam_.t += 1;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam_.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam_.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Tensor<S>* p = params[pi].second;
      auto& m = adam_.m[pi];
      auto& v = adam_.v[pi];
      S* w = p->ptr();
      const S* g = p->grad_ptr();
      for (std::size_t j = 0; j < m.size(); ++j) {
        const double gj = static_cast<double>(g[j] * clip_scale);
        m[j] = static_cast<S>(b1 * m[j] + (1.0 - b1) * gj);
        v[j] = static_cast<S>(b2 * v[j] + (1.0 - b2) * gj * gj);
        const double mh = static_cast<double>(m[j]) / bc1;
        const double vh = static_cast<double>(v[j]) / bc2;
        w[j] = static_cast<S>(w[j] - lr * mh / (std::sqrt(vh) + eps));
      }
    }
    model_.zero_grads();
    if (!model_.all_finite())
      throw NumericError("train_step: non-finite parameter after update at step " + std::to_string(step_no));
    return norm;
  }

  EncoderModel<S> model_;
  TrainConfig cfg_;
  AdamState<S> adam_;
  long step_ = 0;
};

// One-shot dataset augmentation: for every (X, Y) also emit (Y_p | X, Y)
// with the pseudo target frozen at this checkpoint. Output interleaves
// original and mixed examples, 2x the input size.
template <class S>
Dataset static_mix_dataset(const EncoderModel<S>& model, const Dataset& ds, long model_step = 0) {
  Dataset out;
  out.header_comment = ds.header_comment;
  const int n = static_cast<int>(ds.examples.size());
  std::vector<TokenSeq> pseudos(ds.examples.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const auto& ex = ds.examples[static_cast<std::size_t>(i)];
    pseudos[static_cast<std::size_t>(i)] =
        generate_pseudo_target(model, ex.source, static_cast<int>(ex.target.size()), model_step).tokens;
  }
  for (int i = 0; i < n; ++i) {
    const auto& ex = ds.examples[static_cast<std::size_t>(i)];
    out.examples.push_back(ex);
    SequencePair mixed = ex;
    mixed.pseudo = pseudos[static_cast<std::size_t>(i)];
    mixed.has_pseudo = true;
    out.examples.push_back(std::move(mixed));
  }
  return out;
}

// Widest packed length an example can reach under this configuration; used
// by the batch stream to skip oversized examples.
inline int packed_len_bound(const SequencePair& ex, const TrainConfig& cfg) {
  const int x = static_cast<int>(ex.source.size());
  const int t = static_cast<int>(ex.target.size());
  if (cfg.ar_objective) return 2 + x + 1 + t;
  int base = 3 + x + t;
  if (ex.has_pseudo) base += 1 + static_cast<int>(ex.pseudo.size());
  if (cfg.mixing == MixingMode::mist) base = std::max(base, 4 + x + 2 * t);
  return base;
}

}  // namespace mist
