#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mist/rng.hpp"
#include "mist/tensor.hpp"
#include "mist/tokens.hpp"

namespace mist {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 2;
  int d_hidden = 64;
  int d_ffn = 128;
  int vocab_size = 32;
  int max_positions = 64;
  int max_target_len = 16;  // length head classes
  int n_segments = 2;

  void validate() const {
    if (n_layers < 1 || n_heads < 1 || d_hidden < 1 || d_ffn < 1 || vocab_size <= kNumSpecialTokens)
      throw ContractError("model config: non-positive dimension");
    if (d_hidden % n_heads != 0) throw ContractError("model config: d_hidden must be divisible by n_heads");
    if (max_target_len > max_positions) throw ContractError("model config: max_target_len exceeds max_positions");
  }

  bool operator==(const ModelConfig&) const = default;

  static ModelConfig desk() { return ModelConfig{}; }

  static ModelConfig paper_default() {
    ModelConfig c;
    c.n_layers = 12;
    c.n_heads = 12;
    c.d_hidden = 768;
    c.d_ffn = 3072;
    c.vocab_size = 30522;
    c.max_positions = 512;
    c.max_target_len = 48;
    return c;
  }
};

// One packed example. Index layout:
//   [0, target_begin)        source part (always starts with [CLS], ends with [SEP])
//   [target_begin, target_end)   the Y_M region
//   target_end                  trailing [SEP] (target side, excluded from loss)
//   [real_len, n)                [PAD] suffix added by batching
struct PackedInput {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<int> position_ids;
  std::vector<unsigned char> attn_mask;  // n*n, 1 = row may attend to column
  int target_begin = 0;
  int target_end = 0;
  int real_len = 0;
  bool causal_target = false;
  std::vector<unsigned char> loss_mask;  // over [target_begin, target_end)

  int n() const { return static_cast<int>(token_ids.size()); }
  int source_len() const { return target_begin; }
  int target_len() const { return target_end - target_begin; }
  bool allowed(int i, int j) const { return attn_mask[static_cast<std::size_t>(i) * n() + j] != 0; }
};

// Layout assembly. Without pseudo: [CLS] X [SEP] Y_M [SEP]. With pseudo:
// [CLS] Y_p [SEP] X [SEP] Y_M [SEP], where Y_p counts as source (segment 0).
PackedInput pack_training_input(const TokenSeq& x, const TokenSeq& y_masked,
                                const std::vector<unsigned char>& loss_mask, const TokenSeq* pseudo,
                                int max_positions);

// Inference layouts: all-[MASK] target of the given length.
PackedInput pack_inference_input(const TokenSeq& x, int target_len, const TokenSeq* pseudo, int max_positions);

// Source-only layout [CLS] X [SEP] (optionally [CLS] Y_p [SEP] X [SEP]): used
// to predict length and to build the source cache.
PackedInput pack_source_only(const TokenSeq& x, const TokenSeq* pseudo, int max_positions);

// Causal-target layout for the autoregressive latency baseline. Target input
// is [MASK] y_1 .. y_T predicting y_1 .. y_T [SEP]; returns the label list
// aligned with the target span.
PackedInput pack_ar_training_input(const TokenSeq& x, const TokenSeq& y, int max_positions,
                                   std::vector<int>* labels_out);

// Extends with [PAD] rows: excluded from attention in both directions.
void pad_packed_input(PackedInput& p, int padded_len);

template <class S>
struct EncoderLayerParams {
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<S> ln1_g, ln1_b;
  Tensor<S> w1, b1, w2, b2;
  Tensor<S> ln2_g, ln2_b;
};

// All learned parameters. The MLM head is a single projection tied to the
// token embeddings plus a per-vocab bias; the length head reads the [CLS]
// row.
template <class S>
struct EncoderModel {
  ModelConfig cfg;
  Tensor<S> tok_emb, pos_emb, seg_emb;
  Tensor<S> emb_ln_g, emb_ln_b;
  std::vector<EncoderLayerParams<S>> layers;
  Tensor<S> mlm_bias;
  Tensor<S> len_w, len_b;

  static EncoderModel init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    EncoderModel m;
    m.cfg = cfg;
    auto rng = make_rng(mix_seed(seed, 0x6d6f64656cULL));
    const int d = cfg.d_hidden, f = cfg.d_ffn;
    auto mat = [&](int r, int c) {
      Tensor<S> t = Tensor<S>::param({r, c});
      fill_trunc_normal(t, rng);
      return t;
    };
    auto vec_zero = [&](int nn) { return Tensor<S>::param({nn}); };
    auto vec_one = [&](int nn) {
      Tensor<S> t = Tensor<S>::param({nn});
      std::fill(t.data->begin(), t.data->end(), S(1));
      return t;
    };
    m.tok_emb = mat(cfg.vocab_size, d);
    m.pos_emb = mat(cfg.max_positions, d);
    m.seg_emb = mat(cfg.n_segments, d);
    m.emb_ln_g = vec_one(d);
    m.emb_ln_b = vec_zero(d);
    m.layers.resize(cfg.n_layers);
    for (auto& L : m.layers) {
      L.wq = mat(d, d);
      L.bq = vec_zero(d);
      L.wk = mat(d, d);
      L.bk = vec_zero(d);
      L.wv = mat(d, d);
      L.bv = vec_zero(d);
      L.wo = mat(d, d);
      L.bo = vec_zero(d);
      L.ln1_g = vec_one(d);
      L.ln1_b = vec_zero(d);
      L.w1 = mat(d, f);
      L.b1 = vec_zero(f);
      L.w2 = mat(f, d);
      L.b2 = vec_zero(d);
      L.ln2_g = vec_one(d);
      L.ln2_b = vec_zero(d);
    }
    m.mlm_bias = vec_zero(cfg.vocab_size);
    m.len_w = mat(d, cfg.max_target_len);
    m.len_b = vec_zero(cfg.max_target_len);
    return m;
  }

  std::vector<std::pair<std::string, Tensor<S>*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    out.emplace_back("tok_emb", &tok_emb);
    out.emplace_back("pos_emb", &pos_emb);
    out.emplace_back("seg_emb", &seg_emb);
    out.emplace_back("emb_ln_g", &emb_ln_g);
    out.emplace_back("emb_ln_b", &emb_ln_b);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& L = layers[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      out.emplace_back(p + "wq", &L.wq);
      out.emplace_back(p + "bq", &L.bq);
      out.emplace_back(p + "wk", &L.wk);
      out.emplace_back(p + "bk", &L.bk);
      out.emplace_back(p + "wv", &L.wv);
      out.emplace_back(p + "bv", &L.bv);
      out.emplace_back(p + "wo", &L.wo);
      out.emplace_back(p + "bo", &L.bo);
      out.emplace_back(p + "ln1_g", &L.ln1_g);
      out.emplace_back(p + "ln1_b", &L.ln1_b);
      out.emplace_back(p + "w1", &L.w1);
      out.emplace_back(p + "b1", &L.b1);
      out.emplace_back(p + "w2", &L.w2);
      out.emplace_back(p + "b2", &L.b2);
      out.emplace_back(p + "ln2_g", &L.ln2_g);
      out.emplace_back(p + "ln2_b", &L.ln2_b);
    }
    out.emplace_back("mlm_bias", &mlm_bias);
    out.emplace_back("len_w", &len_w);
    out.emplace_back("len_b", &len_b);
    return out;
  }

  std::size_t n_params() {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t->numel();
    return n;
  }

  EncoderModel deep_clone() {
    EncoderModel c = *this;
    for (auto [a, b] : zip_params(c)) {
      b->data = std::make_shared<std::vector<S>>(*a->data);
      b->grad = std::make_shared<std::vector<S>>(a->data->size(), S(0));
    }
    return c;
  }

  void zero_grads() {
    for (auto& [name, t] : named_parameters()) t->zero_grad();
  }

  bool all_finite() {
    for (auto& [name, t] : named_parameters())
      if (!t->values_finite()) return false;
    return true;
  }

 private:
  std::vector<std::pair<Tensor<S>*, Tensor<S>*>> zip_params(EncoderModel& other) {
    auto a = named_parameters();
    auto b = other.named_parameters();
    std::vector<std::pair<Tensor<S>*, Tensor<S>*>> out;
    out.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out.emplace_back(a[i].second, b[i].second);
    return out;
  }
};

template <class To, class From>
EncoderModel<To> model_cast(EncoderModel<From>& src) {
  EncoderModel<To> dst = EncoderModel<To>::init(src.cfg, 0);
  auto a = src.named_parameters();
  auto b = dst.named_parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto& sv = *a[i].second->data;
    auto& dv = *b[i].second->data;
    for (std::size_t j = 0; j < sv.size(); ++j) dv[j] = static_cast<To>(sv[j]);
  }
  return dst;
}

template <class S>
struct EncoderOutput {
  Tensor<S> hidden;         // [n x d]
  Tensor<S> token_logits;   // [target_len x V], rows over the Y_M span only
  Tensor<S> length_logits;  // [1 x T_max], from the [CLS] row
};

// Per-layer source keys/values captured during a forward pass.
template <class S>
struct LayerKv {
  std::vector<Tensor<S>> k;  // one [n x d] per layer
  std::vector<Tensor<S>> v;
};

template <class S>
EncoderOutput<S> encode(const EncoderModel<S>& model, const PackedInput& in, LayerKv<S>* kv_out = nullptr) {
  const auto& cfg = model.cfg;
  const int n = in.n();
  const int d = cfg.d_hidden;
  const int hd = d / cfg.n_heads;
  if (n > cfg.max_positions)
    throw ContractError("encode: packed length " + std::to_string(n) + " exceeds max_positions " +
                        std::to_string(cfg.max_positions));

  Tensor<S> x = add(add(embedding_lookup(model.tok_emb, in.token_ids),
                        embedding_lookup(model.pos_emb, in.position_ids)),
                    embedding_lookup(model.seg_emb, in.segment_ids));
  x = layer_norm(x, model.emb_ln_g, model.emb_ln_b);

  const S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(hd));
  for (const auto& L : model.layers) {
    Tensor<S> q = linear(x, L.wq, L.bq);
    Tensor<S> k = linear(x, L.wk, L.bk);
    Tensor<S> v = linear(x, L.wv, L.bv);
    if (kv_out) {
      kv_out->k.push_back(k);
      kv_out->v.push_back(v);
    }
    std::vector<Tensor<S>> heads;
    heads.reserve(cfg.n_heads);
    for (int h = 0; h < cfg.n_heads; ++h) {
      Tensor<S> qh = slice_cols(q, h * hd, (h + 1) * hd);
      Tensor<S> kh = slice_cols(k, h * hd, (h + 1) * hd);
      Tensor<S> vh = slice_cols(v, h * hd, (h + 1) * hd);
      Tensor<S> probs = masked_softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_hd), in.attn_mask);
      heads.push_back(matmul(probs, vh));
    }
    Tensor<S> attn = linear(concat_cols(heads), L.wo, L.bo);
    x = layer_norm(add(x, attn), L.ln1_g, L.ln1_b);
    Tensor<S> ff = linear(gelu(linear(x, L.w1, L.b1)), L.w2, L.b2);
    x = layer_norm(add(x, ff), L.ln2_g, L.ln2_b);
  }

  EncoderOutput<S> out;
  out.hidden = x;
  Tensor<S> ht = slice_rows(x, in.target_begin, in.target_end);
  out.token_logits = add_rowvec(matmul_nt(ht, model.tok_emb), model.mlm_bias);
  out.length_logits = linear(slice_rows(x, 0, 1), model.len_w, model.len_b);
  return out;
}

// 1 + argmax over the length logits; ties break toward the smaller length.
template <class S>
int predict_length(const EncoderOutput<S>& out) {
  const auto& v = *out.length_logits.data;
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best + 1;
}

struct TokenPrediction {
  std::vector<int> ids;
  std::vector<double> confidence;  // softmax probability of the argmax id
};

// Per-row argmax id and its softmax probability.
template <class S>
TokenPrediction predict_rows(const Tensor<S>& logits) {
  TokenPrediction p;
  const int rows = logits.rows();
  const int v = logits.cols();
  p.ids.resize(rows);
  p.confidence.resize(rows);
  for (int i = 0; i < rows; ++i) {
    const S* row = logits.ptr() + static_cast<long>(i) * v;
    int best = 0;
    for (int j = 1; j < v; ++j)
      if (row[j] > row[best]) best = j;
    double denom = 0.0;
    for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j] - row[best]));
    p.ids[i] = best;
    p.confidence[i] = 1.0 / denom;
  }
  return p;
}

template <class S>
TokenPrediction predict_tokens(const EncoderOutput<S>& out) {
  return predict_rows(out.token_logits);
}

// Checkpoint format (header "MISTCKPT v1"): one JSON metadata line followed
// by named tensors as (name, shape, raw little-endian f32 payload).
struct CheckpointMeta {
  ModelConfig config;
  std::string vocab_hash;
  std::string layout_mode = "nar";  // "nar" or "ar"
  std::string run_config_json = "{}";
};

void save_checkpoint(const std::string& path, EncoderModel<float>& model, const CheckpointMeta& meta);
EncoderModel<float> load_checkpoint(const std::string& path, CheckpointMeta* meta_out);

}  // namespace mist
