#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mist/errors.hpp"
#include "mist/tokens.hpp"

namespace mist {

// id <-> token bijection with the four specials pinned at ids 0..3.
class Vocab {
 public:
  Vocab();

  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(const std::string& tok) const { return token_to_id_.count(tok) != 0; }
  int id(const std::string& tok) const;
  const std::string& token(int id) const;
  void add(const std::string& tok);

  TokenSeq encode(const std::string& text) const;  // whitespace tokenization
  std::string decode(const TokenSeq& ids) const;

  // FNV-1a over the token list; embedded in checkpoints and validated on load.
  std::string hash() const;

  void save(const std::string& path, const std::string& header_comment = "") const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Tokens sorted by descending frequency, ties lexicographic; specials first.
Vocab build_vocab(const std::vector<std::string>& corpus);

struct SequencePair {
  TokenSeq source;
  TokenSeq target;
  std::vector<TokenSeq> alt_refs;  // alternative gold targets
  TokenSeq pseudo;                 // frozen pseudo target (static mixing)
  bool has_pseudo = false;

  // Primary target plus alternatives.
  std::vector<TokenSeq> reference_set() const {
    std::vector<TokenSeq> out{target};
    out.insert(out.end(), alt_refs.begin(), alt_refs.end());
    return out;
  }
};

struct Dataset {
  std::vector<SequencePair> examples;
  std::string header_comment;  // '#' lines preserved for byte-exact round trips

  std::size_t size() const { return examples.size(); }
};

enum class ToyTask { copy, reverse, sort_tokens, templated_paraphrase };

ToyTask toy_task_from_string(const std::string& name);
std::string to_string(ToyTask t);

struct ToyTaskSpec {
  ToyTask task = ToyTask::copy;
  int vocab_size = 20;  // content tokens (specials excluded)
  int len_min = 4;
  int len_max = 12;
  int n_train = 1000;
  int n_valid = 100;
  int n_test = 100;
  std::uint64_t seed = 42;
};

struct ToyData {
  Dataset train, valid, test;
  Vocab vocab;
};

// Generates train/valid/test with sources disjoint across splits. The
// templated_paraphrase task is deliberately multimodal: every source admits
// two full-sequence rewrites (drawn 0.65/0.35), and both go into the
// reference set.
ToyData gen_task(const ToyTaskSpec& spec);

// TSV: source<TAB>target[<TAB>alt_ref...], whitespace-tokenized text, one
// pair per line, '#' lines are comments. A "[SEP]" inside the source column
// splits a frozen pseudo target from the source (static-mixing datasets).
Dataset load_dataset(const std::string& path, const Vocab& vocab);
void save_dataset(const Dataset& ds, const Vocab& vocab, const std::string& path);

// Epoch-shuffled batch stream over example indices. Examples whose packed
// length (per packed_len) exceeds max_packed_len are skipped up front and
// counted.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, int batch_size, std::uint64_t seed, int max_packed_len,
              std::function<int(const SequencePair&)> packed_len);

  // Next batch of example indices; reshuffles at each epoch boundary.
  std::vector<int> next();
  int skipped() const { return skipped_; }
  int epoch() const { return epoch_; }
  std::size_t usable() const { return order_.size(); }

 private:
  const Dataset& ds_;
  int batch_size_;
  std::uint64_t seed_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  int epoch_ = 0;
  int skipped_ = 0;

  void shuffle_();
};

std::vector<std::string> split_whitespace(const std::string& s);
std::string join_tokens(const std::vector<std::string>& toks);

}  // namespace mist
