#include "mist/model.hpp"

#include <string>

#include "mist/errors.hpp"

namespace mist {

namespace {

// Partition rule: source rows attend only within the source part; target
// rows attend to everything real (or causally within the target for the AR
// mode). [PAD] rows and columns never attend / are never attended.
void build_attn_mask(PackedInput& p) {
  const int n = p.n();
  p.attn_mask.assign(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < p.real_len; ++i) {
    unsigned char* row = p.attn_mask.data() + static_cast<std::size_t>(i) * n;
    if (i < p.target_begin) {
      for (int j = 0; j < p.target_begin; ++j) row[j] = 1;
    } else if (p.causal_target) {
      for (int j = 0; j < p.target_begin; ++j) row[j] = 1;
      for (int j = p.target_begin; j <= i; ++j) row[j] = 1;
    } else {
      for (int j = 0; j < p.real_len; ++j) row[j] = 1;
    }
  }
}

void finish_layout(PackedInput& p, int max_positions, const char* what) {
  const int n = p.n();
  if (n > max_positions)
    throw ContractError(std::string(what) + ": packed length " + std::to_string(n) + " exceeds max_positions " +
                        std::to_string(max_positions) + " (no silent truncation)");
  p.real_len = n;
  p.segment_ids.assign(n, 0);
  for (int i = p.target_begin; i < n; ++i) p.segment_ids[i] = 1;
  p.position_ids.resize(n);
  for (int i = 0; i < n; ++i) p.position_ids[i] = i;
  build_attn_mask(p);
}

}  // namespace

PackedInput pack_training_input(const TokenSeq& x, const TokenSeq& y_masked,
                                const std::vector<unsigned char>& loss_mask, const TokenSeq* pseudo,
                                int max_positions) {
  if (loss_mask.size() != y_masked.size())
    throw ContractError("pack_training_input: loss mask length does not match target length");
  PackedInput p;
  p.token_ids.push_back(kClsId);
  if (pseudo) {
    p.token_ids.insert(p.token_ids.end(), pseudo->begin(), pseudo->end());
    p.token_ids.push_back(kSepId);
  }
  p.token_ids.insert(p.token_ids.end(), x.begin(), x.end());
  p.token_ids.push_back(kSepId);
  p.target_begin = static_cast<int>(p.token_ids.size());
  p.token_ids.insert(p.token_ids.end(), y_masked.begin(), y_masked.end());
  p.target_end = static_cast<int>(p.token_ids.size());
  p.token_ids.push_back(kSepId);
  p.loss_mask = loss_mask;
  finish_layout(p, max_positions, "pack_training_input");
  return p;
}

PackedInput pack_inference_input(const TokenSeq& x, int target_len, const TokenSeq* pseudo, int max_positions) {
  if (target_len < 1) throw ContractError("pack_inference_input: target length must be >= 1");
  TokenSeq masks(static_cast<std::size_t>(target_len), kMaskId);
  return pack_training_input(x, masks, std::vector<unsigned char>(masks.size(), 0), pseudo, max_positions);
}

PackedInput pack_source_only(const TokenSeq& x, const TokenSeq* pseudo, int max_positions) {
  PackedInput p;
  p.token_ids.push_back(kClsId);
  if (pseudo) {
    p.token_ids.insert(p.token_ids.end(), pseudo->begin(), pseudo->end());
    p.token_ids.push_back(kSepId);
  }
  p.token_ids.insert(p.token_ids.end(), x.begin(), x.end());
  p.token_ids.push_back(kSepId);
  p.target_begin = p.target_end = static_cast<int>(p.token_ids.size());
  finish_layout(p, max_positions, "pack_source_only");
  return p;
}

PackedInput pack_ar_training_input(const TokenSeq& x, const TokenSeq& y, int max_positions,
                                   std::vector<int>* labels_out) {
  PackedInput p;
  p.token_ids.push_back(kClsId);
  p.token_ids.insert(p.token_ids.end(), x.begin(), x.end());
  p.token_ids.push_back(kSepId);
  p.target_begin = static_cast<int>(p.token_ids.size());
  p.token_ids.push_back(kMaskId);  // start-of-target slot
  p.token_ids.insert(p.token_ids.end(), y.begin(), y.end());
  p.target_end = static_cast<int>(p.token_ids.size());
  p.causal_target = true;
  p.loss_mask.assign(static_cast<std::size_t>(p.target_len()), 1);
  if (labels_out) {
    labels_out->assign(y.begin(), y.end());
    labels_out->push_back(kSepId);
  }
  finish_layout(p, max_positions, "pack_ar_training_input");
  return p;
}

void pad_packed_input(PackedInput& p, int padded_len) {
  const int n = p.n();
  if (padded_len < n) throw ContractError("pad_packed_input: padded length shorter than input");
  if (padded_len == n) return;
  p.token_ids.resize(padded_len, kPadId);
  p.segment_ids.resize(padded_len, 0);
  p.position_ids.resize(padded_len);
  for (int i = n; i < padded_len; ++i) p.position_ids[i] = i;
  std::vector<unsigned char> mask(static_cast<std::size_t>(padded_len) * padded_len, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      mask[static_cast<std::size_t>(i) * padded_len + j] = p.attn_mask[static_cast<std::size_t>(i) * n + j];
  p.attn_mask = std::move(mask);
}

}  // namespace mist
