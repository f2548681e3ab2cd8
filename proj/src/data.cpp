#include "mist/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mist/rng.hpp"

namespace mist {

namespace {

const char* kSpecialNames[kNumSpecialTokens] = {"[PAD]", "[CLS]", "[SEP]", "[MASK]"};

bool is_special_name(const std::string& tok) {
  for (const char* s : kSpecialNames)
    if (tok == s) return true;
  return false;
}

}  // namespace

std::vector<std::string> split_whitespace(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

Vocab::Vocab() {
  for (const char* s : kSpecialNames) add(s);
}

int Vocab::id(const std::string& tok) const {
  auto it = token_to_id_.find(tok);
  if (it == token_to_id_.end()) throw DataError("vocab: unknown token '" + tok + "'");
  return it->second;
}

const std::string& Vocab::token(int i) const {
  if (i < 0 || i >= size()) throw DataError("vocab: id " + std::to_string(i) + " out of range");
  return id_to_token_[static_cast<std::size_t>(i)];
}

void Vocab::add(const std::string& tok) {
  if (token_to_id_.count(tok)) return;
  token_to_id_[tok] = size();
  id_to_token_.push_back(tok);
}

TokenSeq Vocab::encode(const std::string& text) const {
  TokenSeq out;
  for (const auto& tok : split_whitespace(text)) out.push_back(id(tok));
  return out;
}

std::string Vocab::decode(const TokenSeq& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

std::string Vocab::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= '\n';
    h *= 1099511628211ULL;
  };
  for (const auto& t : id_to_token_) mix(t);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void Vocab::save(const std::string& path, const std::string& header_comment) const {
  std::ofstream os(path);
  if (!os) throw DataError("vocab: cannot open for writing: " + path);
  if (!header_comment.empty()) os << header_comment;
  for (const auto& t : id_to_token_) os << t << "\n";
  if (!os) throw DataError("vocab: write failed: " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("vocab: cannot open: " + path);
  Vocab v;
  std::string line;
  int idx = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] == '#') continue;
    if (line.empty()) continue;
    if (idx < kNumSpecialTokens) {
      if (line != kSpecialNames[idx])
        throw DataError("vocab: " + path + ": expected special '" + kSpecialNames[idx] + "' at id " +
                        std::to_string(idx) + ", got '" + line + "'");
    } else {
      if (v.contains(line)) throw DataError("vocab: " + path + ": duplicate token '" + line + "'");
      v.add(line);
    }
    ++idx;
  }
  if (idx < kNumSpecialTokens) throw DataError("vocab: " + path + ": missing special tokens");
  return v;
}

Vocab build_vocab(const std::vector<std::string>& corpus) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, long> freq;
  for (const auto& line : corpus)
    for (const auto& tok : split_whitespace(line))
      if (!is_special_name(tok)) ++freq[tok];
  std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, cnt] : items) v.add(tok);
  return v;
}

ToyTask toy_task_from_string(const std::string& name) {
  if (name == "copy") return ToyTask::copy;
  if (name == "reverse") return ToyTask::reverse;
  if (name == "sort" || name == "sort_tokens") return ToyTask::sort_tokens;
  if (name == "paraphrase" || name == "templated_paraphrase") return ToyTask::templated_paraphrase;
  throw UsageError("unknown task '" + name + "' (copy | reverse | sort_tokens | templated_paraphrase)");
}

std::string to_string(ToyTask t) {
  switch (t) {
    case ToyTask::copy: return "copy";
    case ToyTask::reverse: return "reverse";
    case ToyTask::sort_tokens: return "sort_tokens";
    case ToyTask::templated_paraphrase: return "templated_paraphrase";
  }
  return "?";
}

namespace {

std::string content_token(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%02d", i);
  return buf;
}

// Paraphrase surface forms: meaning i rendered as w<i>a (source) and w<i>b /
// w<i>c (the two target rewrites).
std::string form_token(int meaning, char form) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "w%02d%c", meaning, form);
  return buf;
}

}  // namespace

ToyData gen_task(const ToyTaskSpec& spec) {
  if (spec.len_min < 1 || spec.len_max < spec.len_min)
    throw DataError("gen_task: bad length range");
  if (spec.n_train < 1 || spec.n_valid < 0 || spec.n_test < 0)
    throw DataError("gen_task: bad split sizes");

  const bool paraphrase = spec.task == ToyTask::templated_paraphrase;
  int n_symbols = spec.vocab_size;
  if (paraphrase) {
    n_symbols = spec.vocab_size / 3;  // three surface forms per meaning
    if (n_symbols < 2) throw DataError("gen_task: templated_paraphrase needs vocab_size >= 6");
  } else if (n_symbols < 2) {
    throw DataError("gen_task: vocab_size must be >= 2");
  }

  const long total = static_cast<long>(spec.n_train) + spec.n_valid + spec.n_test;
  // Distinct-source capacity check before we start drawing.
  double capacity = 0;
  for (int len = spec.len_min; len <= spec.len_max; ++len) {
    double c = 1;
    for (int i = 0; i < len && c < 1e12; ++i) c *= n_symbols;
    capacity += c;
    if (capacity > 1e12) break;
  }
  if (capacity < static_cast<double>(total) * 1.25)
    throw DataError("gen_task: split sizes infeasible, need " + std::to_string(total) +
                    " distinct sources but the task space is too small");

  auto rng = make_rng(mix_seed(spec.seed, 0x676e74736bULL));
  std::uniform_int_distribution<int> len_dist(spec.len_min, spec.len_max);
  std::uniform_int_distribution<int> sym_dist(0, n_symbols - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::set<std::vector<int>> seen;
  std::vector<std::vector<int>> sources;
  sources.reserve(static_cast<std::size_t>(total));
  long attempts = 0;
  const long max_attempts = total * 200 + 1000;
  while (static_cast<long>(sources.size()) < total) {
    if (++attempts > max_attempts)
      throw DataError("gen_task: failed to draw enough distinct sources, reduce split sizes");
    const int len = len_dist(rng);
    std::vector<int> s(static_cast<std::size_t>(len));
    for (auto& v : s) v = sym_dist(rng);
    if (seen.insert(s).second) sources.push_back(std::move(s));
  }

  ToyData out;
  std::vector<std::string> corpus;

  // Render every source to token strings first, then build the vocab, then
  // encode. Two passes keep the vocab complete and the ids stable.
  struct RawPair {
    std::vector<std::string> src, tgt;
    std::vector<std::vector<std::string>> alts;
  };
  std::vector<RawPair> raw;
  raw.reserve(sources.size());
  for (const auto& syms : sources) {
    RawPair rp;
    if (paraphrase) {
      for (int m : syms) rp.src.push_back(form_token(m, 'a'));
      // Rewrite modes are intentionally off-balance so the marginal argmax
      // has a consistent winner once learned.
      const char mode = unit(rng) < 0.65 ? 'b' : 'c';
      const char alt = mode == 'b' ? 'c' : 'b';
      std::vector<std::string> alt_tgt;
      for (int m : syms) {
        rp.tgt.push_back(form_token(m, mode));
        alt_tgt.push_back(form_token(m, alt));
      }
      rp.alts.push_back(std::move(alt_tgt));
    } else {
      for (int m : syms) rp.src.push_back(content_token(m));
      rp.tgt = rp.src;
      if (spec.task == ToyTask::reverse) std::reverse(rp.tgt.begin(), rp.tgt.end());
      if (spec.task == ToyTask::sort_tokens) std::stable_sort(rp.tgt.begin(), rp.tgt.end());
    }
    corpus.push_back(join_tokens(rp.src));
    corpus.push_back(join_tokens(rp.tgt));
    for (const auto& a : rp.alts) corpus.push_back(join_tokens(a));
    raw.push_back(std::move(rp));
  }

  out.vocab = build_vocab(corpus);

  auto encode_pair = [&](const RawPair& rp) {
    SequencePair p;
    for (const auto& t : rp.src) p.source.push_back(out.vocab.id(t));
    for (const auto& t : rp.tgt) p.target.push_back(out.vocab.id(t));
    for (const auto& a : rp.alts) {
      TokenSeq ids;
      for (const auto& t : a) ids.push_back(out.vocab.id(t));
      p.alt_refs.push_back(std::move(ids));
    }
    return p;
  };

  for (long i = 0; i < total; ++i) {
    SequencePair p = encode_pair(raw[static_cast<std::size_t>(i)]);
    if (i < spec.n_train)
      out.train.examples.push_back(std::move(p));
    else if (i < spec.n_train + spec.n_valid)
      out.valid.examples.push_back(std::move(p));
    else
      out.test.examples.push_back(std::move(p));
  }
  return out;
}

Dataset load_dataset(const std::string& path, const Vocab& vocab) {
  std::ifstream is(path);
  if (!is) throw DataError("dataset: cannot open: " + path);
  Dataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line[0] == '#') {
      ds.header_comment += line;
      ds.header_comment += '\n';
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected source<TAB>target");
    auto enc = [&](const std::string& text, const char* what) {
      TokenSeq ids;
      try {
        ids = vocab.encode(text);
      } catch (const DataError& e) {
        throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
      if (ids.empty()) throw DataError(path + ":" + std::to_string(line_no) + ": empty " + what + " field");
      return ids;
    };
    SequencePair p;
    TokenSeq src_ids = enc(fields[0], "source");
    // An internal [SEP] separates a frozen pseudo target from the source.
    auto sep_it = std::find(src_ids.begin(), src_ids.end(), kSepId);
    if (sep_it != src_ids.end()) {
      p.pseudo.assign(src_ids.begin(), sep_it);
      p.source.assign(sep_it + 1, src_ids.end());
      p.has_pseudo = true;
      if (p.pseudo.empty() || p.source.empty())
        throw DataError(path + ":" + std::to_string(line_no) + ": malformed pseudo|source split");
    } else {
      p.source = std::move(src_ids);
    }
    p.target = enc(fields[1], "target");
    for (std::size_t i = 2; i < fields.size(); ++i) p.alt_refs.push_back(enc(fields[i], "reference"));
    for (int id : p.source)
      if (id < kNumSpecialTokens)
        throw DataError(path + ":" + std::to_string(line_no) + ": special token inside source body");
    for (int id : p.target)
      if (id < kNumSpecialTokens)
        throw DataError(path + ":" + std::to_string(line_no) + ": special token inside target body");
    ds.examples.push_back(std::move(p));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const Vocab& vocab, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("dataset: cannot open for writing: " + path);
  os << ds.header_comment;
  for (const auto& p : ds.examples) {
    if (p.has_pseudo) os << vocab.decode(p.pseudo) << " [SEP] ";
    os << vocab.decode(p.source) << '\t' << vocab.decode(p.target);
    for (const auto& a : p.alt_refs) os << '\t' << vocab.decode(a);
    os << '\n';
  }
  if (!os) throw DataError("dataset: write failed: " + path);
}

BatchStream::BatchStream(const Dataset& ds, int batch_size, std::uint64_t seed, int max_packed_len,
                         std::function<int(const SequencePair&)> packed_len)
    : ds_(ds), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw ContractError("make_batches: batch_size must be >= 1");
  for (int i = 0; i < static_cast<int>(ds.examples.size()); ++i) {
    if (packed_len && packed_len(ds.examples[static_cast<std::size_t>(i)]) > max_packed_len) {
      ++skipped_;
      continue;
    }
    order_.push_back(i);
  }
  shuffle_();
}

void BatchStream::shuffle_() {
  auto rng = make_rng(mix_seed(seed_, 0x7368756666ULL, static_cast<std::uint64_t>(epoch_)));
  std::shuffle(order_.begin(), order_.end(), rng);
  cursor_ = 0;
}

std::vector<int> BatchStream::next() {
  if (order_.empty()) throw DataError("make_batches: no usable examples");
  if (cursor_ >= order_.size()) {
    ++epoch_;
    shuffle_();
  }
  std::vector<int> batch;
  while (cursor_ < order_.size() && static_cast<int>(batch.size()) < batch_size_)
    batch.push_back(order_[cursor_++]);
  return batch;
}

}  // namespace mist
