// mist: encoder-only non-autoregressive text generation lab.
// Subcommands: gen-data, train, generate, evaluate, benchmark.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mist/data.hpp"
#include "mist/decoding.hpp"
#include "mist/model.hpp"
#include "mist/train_loop.hpp"
#include "mist/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Flat "key = value" echo of every resolved option of a subcommand; embedded
// into artifacts so a run can be reproduced from any of its outputs.
std::string resolved_config(CLI::App* cmd) { return cmd->config_to_str(true, false); }

std::string comment_block(const std::string& tool, const std::string& cfg) {
  std::string out = "# " + tool + " config\n";
  std::istringstream iss(cfg);
  std::string line;
  while (std::getline(iss, line))
    if (!line.empty()) out += "# " + line + "\n";
  return out;
}

struct ModelCliOptions {
  std::string profile = "desk";
  int n_layers = -1, n_heads = -1, d_hidden = -1, d_ffn = -1, max_positions = -1, max_target_len = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--profile", profile, "Model profile: desk | paper-default")->capture_default_str();
    cmd->add_option("--layers", n_layers, "Override: encoder layers");
    cmd->add_option("--heads", n_heads, "Override: attention heads");
    cmd->add_option("--d-hidden", d_hidden, "Override: hidden width");
    cmd->add_option("--d-ffn", d_ffn, "Override: feed-forward width");
    cmd->add_option("--max-positions", max_positions, "Override: maximum packed length");
    cmd->add_option("--max-target-len", max_target_len, "Override: length-head classes");
  }

  mist::ModelConfig resolve(int vocab_size) const {
    mist::ModelConfig cfg;
    if (profile == "desk")
      cfg = mist::ModelConfig::desk();
    else if (profile == "paper-default")
      cfg = mist::ModelConfig::paper_default();
    else
      throw mist::UsageError("unknown profile '" + profile + "' (desk | paper-default)");
    if (n_layers > 0) cfg.n_layers = n_layers;
    if (n_heads > 0) cfg.n_heads = n_heads;
    if (d_hidden > 0) cfg.d_hidden = d_hidden;
    if (d_ffn > 0) cfg.d_ffn = d_ffn;
    if (max_positions > 0) cfg.max_positions = max_positions;
    if (max_target_len > 0) cfg.max_target_len = max_target_len;
    cfg.vocab_size = vocab_size;
    cfg.validate();
    return cfg;
  }
};

std::vector<std::string> read_source_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw mist::DataError("cannot open input file: " + path);
  std::vector<std::string> sources;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    sources.push_back(tab == std::string::npos ? line : line.substr(0, tab));
  }
  if (sources.empty()) throw mist::DataError("no input lines in " + path);
  return sources;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataCli {
  std::string task = "copy";
  mist::ToyTaskSpec spec;
  std::string out_dir = ".";
};

void run_gen_data(GenDataCli& cli, CLI::App* cmd) {
  cli.spec.task = mist::toy_task_from_string(cli.task);
  mist::ToyData data = mist::gen_task(cli.spec);
  fs::create_directories(cli.out_dir);
  const std::string header = comment_block("mist gen-data", resolved_config(cmd));
  data.train.header_comment = header;
  data.valid.header_comment = header;
  data.test.header_comment = header;
  mist::save_dataset(data.train, data.vocab, cli.out_dir + "/train.tsv");
  mist::save_dataset(data.valid, data.vocab, cli.out_dir + "/valid.tsv");
  mist::save_dataset(data.test, data.vocab, cli.out_dir + "/test.tsv");
  data.vocab.save(cli.out_dir + "/vocab.txt", header);
  std::printf("task=%s vocab=%d train=%zu valid=%zu test=%zu -> %s\n", cli.task.c_str(), data.vocab.size(),
              data.train.size(), data.valid.size(), data.test.size(), cli.out_dir.c_str());
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCli {
  std::string train_path, valid_path, vocab_path;
  std::string mixing = "none";
  std::string static_base;
  std::string mixed_out;
  std::string ckpt = "model.ckpt";
  std::string log_path;
  bool f64 = false;
  bool ar = false;
  mist::TrainConfig tc;
  ModelCliOptions model;
};

template <class S>
void run_train_typed(TrainCli& cli, CLI::App* cmd) {
  mist::Vocab vocab = mist::Vocab::load(cli.vocab_path);
  mist::Dataset train = mist::load_dataset(cli.train_path, vocab);
  mist::Dataset valid;
  if (!cli.valid_path.empty()) valid = mist::load_dataset(cli.valid_path, vocab);

  cli.tc.mixing = mist::mixing_mode_from_string(cli.mixing);
  cli.tc.ar_objective = cli.ar;
  const mist::ModelConfig mcfg = cli.model.resolve(vocab.size());
  const std::string run_cfg = resolved_config(cmd);

  if (cli.tc.mixing == mist::MixingMode::static_mix) {
    if (cli.static_base.empty())
      throw mist::UsageError("--mixing static requires --static-base CKPT (the checkpoint that freezes pseudo targets)");
    mist::CheckpointMeta base_meta;
    mist::EncoderModel<float> base = mist::load_checkpoint(cli.static_base, &base_meta);
    if (base_meta.vocab_hash != vocab.hash())
      throw mist::DataError("static base checkpoint was trained with a different vocabulary (hash mismatch)");
    train = mist::static_mix_dataset(base, train);
    const std::string mixed_path = cli.mixed_out.empty() ? cli.ckpt + ".mixed.tsv" : cli.mixed_out;
    mist::Dataset to_save = train;
    to_save.header_comment = comment_block("mist train --mixing static", run_cfg);
    mist::save_dataset(to_save, vocab, mixed_path);
    std::printf("static mixing: %zu examples (2x) -> %s\n", train.size(), mixed_path.c_str());
  }

  mist::Trainer<S> trainer(mist::EncoderModel<S>::init(mcfg, cli.tc.seed), cli.tc);

  std::ofstream log_stream;
  std::ostream* log = nullptr;
  if (!cli.log_path.empty()) {
    log_stream.open(cli.log_path);
    if (!log_stream) throw mist::DataError("cannot open metrics log for writing: " + cli.log_path);
    log_stream << json{{"type", "config"}, {"cli", run_cfg}, {"config_hash", fnv1a_hex(run_cfg)}}.dump() << "\n";
    log = &log_stream;
  }

  mist::CheckpointMeta meta;
  meta.vocab_hash = vocab.hash();
  meta.layout_mode = cli.ar ? "ar" : "nar";
  meta.run_config_json = json{{"cli", run_cfg}, {"config_hash", fnv1a_hex(run_cfg)}}.dump();

  mist::EncoderModel<S> best;
  try {
    mist::TrainLoopResult result = run_training(trainer, train, valid, vocab, log, &best);
    mist::EncoderModel<float> to_save = [&]() {
      if constexpr (std::is_same_v<S, float>)
        return best;
      else
        return mist::model_cast<float>(best);
    }();
    mist::save_checkpoint(cli.ckpt, to_save, meta);
    std::printf("trained %ld steps (skipped %d oversized examples), best valid EM %.4f at step %ld -> %s\n",
                result.steps_run, result.skipped_examples, std::max(0.0, result.best_valid_em), result.best_step,
                cli.ckpt.c_str());
    if (result.reached_target) std::printf("stopped early: reached target EM %.3f\n", cli.tc.target_valid_em);
  } catch (const mist::NumericError&) {
    mist::EncoderModel<S>& m = trainer.model();
    mist::EncoderModel<float> to_save = [&]() {
      if constexpr (std::is_same_v<S, float>)
        return m;
      else
        return mist::model_cast<float>(m);
    }();
    mist::save_checkpoint(cli.ckpt + ".failed", to_save, meta);
    std::fprintf(stderr, "aborted: partial checkpoint preserved at %s.failed\n", cli.ckpt.c_str());
    throw;
  }
}

void run_train(TrainCli& cli, CLI::App* cmd) {
  if (cli.f64)
    run_train_typed<double>(cli, cmd);
  else
    run_train_typed<float>(cli, cmd);
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateCli {
  std::string ckpt, vocab_path, input_path, out_path;
  std::string strategy = "single_pass";
  int iterations = 1;
  bool no_cache = false;
  bool f64 = false;
  int max_target_len = -1;
  int force_target_len = 0;
};

template <class S>
void run_generate_typed(GenerateCli& cli, CLI::App* cmd, mist::EncoderModel<float>& model_f,
                        const mist::Vocab& vocab) {
  mist::DecodeConfig dc;
  dc.strategy = mist::decode_strategy_from_string(cli.strategy);
  dc.iterations = cli.iterations;
  dc.use_cache = !cli.no_cache;
  dc.max_target_len = cli.max_target_len > 0 ? cli.max_target_len : model_f.cfg.max_target_len;
  dc.force_target_len = cli.force_target_len;
  dc.validate();

  mist::EncoderModel<S> model = [&]() {
    if constexpr (std::is_same_v<S, float>)
      return model_f;
    else
      return mist::model_cast<S>(model_f);
  }();

  std::vector<std::string> sources = read_source_lines(cli.input_path);
  std::ofstream os(cli.out_path);
  if (!os) throw mist::DataError("cannot open output for writing: " + cli.out_path);
  const std::string run_cfg = resolved_config(cmd);
  os << json{{"type", "config"}, {"cli", run_cfg}, {"config_hash", fnv1a_hex(run_cfg)}}.dump() << "\n";

  for (const auto& src : sources) {
    mist::TokenSeq x = vocab.encode(src);
    mist::DecodeResult r = mist::decode(model, x, dc);
    json iters = json::array();
    for (const auto& toks : r.tokens_per_iteration) iters.push_back(vocab.decode(toks));
    os << json{{"input", src},
               {"t_hat", r.t_hat},
               {"iterations", iters},
               {"final", vocab.decode(r.final_tokens)},
               {"executed_iterations", r.executed_iterations},
               {"encode_source_ns", r.encode_source_ns},
               {"per_iteration_ns", r.per_iteration_ns},
               {"warnings", r.warnings}}
              .dump()
       << "\n";
  }
  std::printf("decoded %zu inputs with %s -> %s\n", sources.size(), cli.strategy.c_str(), cli.out_path.c_str());
}

void run_generate(GenerateCli& cli, CLI::App* cmd) {
  mist::Vocab vocab = mist::Vocab::load(cli.vocab_path);
  mist::CheckpointMeta meta;
  mist::EncoderModel<float> model = mist::load_checkpoint(cli.ckpt, &meta);
  if (meta.vocab_hash != vocab.hash())
    throw mist::DataError("checkpoint/vocab mismatch: checkpoint has vocab hash " + meta.vocab_hash + ", " +
                          cli.vocab_path + " hashes to " + vocab.hash());
  const bool wants_ar = cli.strategy == "ar_greedy";
  if (wants_ar != (meta.layout_mode == "ar"))
    throw mist::UsageError("strategy '" + cli.strategy + "' needs a checkpoint trained with layout mode '" +
                           (wants_ar ? "ar" : "nar") + "', got '" + meta.layout_mode + "'");
  if (cli.f64)
    run_generate_typed<double>(cli, cmd, model, vocab);
  else
    run_generate_typed<float>(cli, cmd, model, vocab);
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateCli {
  std::string records_path, refs_path, out_path, csv_path;
};

std::vector<std::vector<mist::TokenText>> load_reference_sets(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw mist::DataError("cannot open references: " + path);
  std::vector<std::vector<mist::TokenText>> refs;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2) throw mist::DataError(path + ":" + std::to_string(line_no) + ": expected source<TAB>target");
    std::vector<mist::TokenText> rs;
    for (std::size_t i = 1; i < fields.size(); ++i) rs.push_back(mist::split_whitespace(fields[i]));
    refs.push_back(std::move(rs));
  }
  return refs;
}

void run_evaluate(EvaluateCli& cli, CLI::App* cmd) {
  std::ifstream is(cli.records_path);
  if (!is) throw mist::DataError("cannot open decode records: " + cli.records_path);
  std::vector<mist::TokenText> finals;
  std::vector<std::vector<mist::TokenText>> per_iteration;  // [iter][example]
  std::vector<std::int64_t> wall_ns;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw mist::DataError("bad decode record: " + std::string(e.what()));
    }
    if (j.value("type", "") == "config") continue;
    finals.push_back(mist::split_whitespace(j.at("final").get<std::string>()));
    const auto& iters = j.at("iterations");
    if (per_iteration.size() < iters.size()) per_iteration.resize(iters.size());
    for (std::size_t k = 0; k < iters.size(); ++k)
      per_iteration[k].push_back(mist::split_whitespace(iters[k].get<std::string>()));
    if (j.contains("encode_source_ns") && j.contains("per_iteration_ns")) {
      std::int64_t total = j.at("encode_source_ns").get<std::int64_t>();
      for (const auto& t : j.at("per_iteration_ns")) total += t.get<std::int64_t>();
      wall_ns.push_back(total);
    }
  }
  auto refs = load_reference_sets(cli.refs_path);
  if (finals.size() != refs.size())
    throw mist::UsageError("record/reference count mismatch: " + std::to_string(finals.size()) + " records vs " +
                           std::to_string(refs.size()) + " references");

  mist::EvalReport report = mist::evaluate_corpus(finals, refs);
  const std::string run_cfg = resolved_config(cmd);
  json out{{"bleu4", report.bleu4},
           {"rouge_l", report.rouge_l},
           {"exact_match", report.exact_match},
           {"n_examples", report.n_examples},
           {"bleu_smoothing", "add-one on zero n-gram matches for n >= 2"},
           {"cli", run_cfg},
           {"config_hash", fnv1a_hex(run_cfg)}};
  if (wall_ns.size() == finals.size()) {
    const mist::LatencyStats ls = mist::latency_stats(wall_ns);
    out["latency"] = json{{"median_ns", ls.median_ns}, {"p90_ns", ls.p90_ns}};
  }
  if (!cli.out_path.empty()) {
    std::ofstream os(cli.out_path);
    if (!os) throw mist::DataError("cannot open report for writing: " + cli.out_path);
    os << out.dump(2) << "\n";
  }
  if (!cli.csv_path.empty() && !per_iteration.empty()) {
    std::ofstream cs(cli.csv_path);
    if (!cs) throw mist::DataError("cannot open csv for writing: " + cli.csv_path);
    cs << "iteration,bleu4,rouge_l,exact_match\n";
    for (std::size_t k = 0; k < per_iteration.size(); ++k) {
      if (per_iteration[k].size() != refs.size()) continue;  // ragged iteration counts
      mist::EvalReport r = mist::evaluate_corpus(per_iteration[k], refs);
      char buf[160];
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f\n", k + 1, r.bleu4, r.rouge_l, r.exact_match);
      cs << buf;
    }
  }
  std::printf("n=%d BLEU-4 %.4f ROUGE-L %.4f EM %.4f\n", report.n_examples, report.bleu4, report.rouge_l,
              report.exact_match);
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct BenchmarkCli {
  std::string nar_ckpt, ar_ckpt, vocab_path, input_path, out_path;
  int force_target_len = 32;
  int mist_iterations = 3;
  int warmup = 10;
  int max_target_len = -1;
};

void run_benchmark(BenchmarkCli& cli, CLI::App* cmd) {
  mist::Vocab vocab = mist::Vocab::load(cli.vocab_path);
  mist::CheckpointMeta nar_meta, ar_meta;
  mist::EncoderModel<float> nar = mist::load_checkpoint(cli.nar_ckpt, &nar_meta);
  mist::EncoderModel<float> ar = mist::load_checkpoint(cli.ar_ckpt, &ar_meta);
  if (nar_meta.layout_mode != "nar") throw mist::UsageError("--nar-ckpt must be a nar-mode checkpoint");
  if (ar_meta.layout_mode != "ar") throw mist::UsageError("--ar-ckpt must be an ar-mode checkpoint");
  for (const auto* m : {&nar_meta, &ar_meta})
    if (m->vocab_hash != vocab.hash()) throw mist::DataError("checkpoint/vocab hash mismatch");

  std::vector<mist::TokenSeq> inputs;
  for (const auto& src : read_source_lines(cli.input_path)) inputs.push_back(vocab.encode(src));

  mist::DecodeConfig base;
  base.max_target_len = cli.max_target_len > 0 ? cli.max_target_len : nar.cfg.max_target_len;
  base.force_target_len = cli.force_target_len;

  mist::SpeedupReport report = mist::measure_speedup(nar, ar, inputs, base, cli.mist_iterations, cli.warmup);

  json rows = json::array();
  std::printf("%-14s %10s %10s %14s %9s\n", "strategy", "median_us", "p90_us", "per_iter_us", "speedup");
  for (const auto& row : report.rows) {
    std::printf("%-14s %10.1f %10.1f %14.1f %8.2fx\n", row.measurement.name.c_str(),
                row.measurement.stats.median_ns / 1e3, row.measurement.stats.p90_ns / 1e3,
                row.measurement.per_iteration_median_ns / 1e3, row.speedup_vs_ar);
    rows.push_back(json{{"strategy", row.measurement.name},
                        {"n_measured", row.measurement.n_measured},
                        {"median_ns", row.measurement.stats.median_ns},
                        {"p90_ns", row.measurement.stats.p90_ns},
                        {"per_iteration_median_ns", row.measurement.per_iteration_median_ns},
                        {"speedup_vs_ar", row.speedup_vs_ar}});
  }
  if (!cli.out_path.empty()) {
    const std::string run_cfg = resolved_config(cmd);
    std::ofstream os(cli.out_path);
    if (!os) throw mist::DataError("cannot open report for writing: " + cli.out_path);
    os << json{{"rows", rows},
               {"warmup_excluded", report.warmup_excluded},
               {"cli", run_cfg},
               {"config_hash", fnv1a_hex(run_cfg)}}
              .dump(2)
       << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mist: encoder-only non-autoregressive text generation lab"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Flat key = value config file; flags override file values");

  GenDataCli gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a toy task dataset (train/valid/test TSVs + vocab)");
  gen_cmd->add_option("--task", gen.task, "copy | reverse | sort_tokens | templated_paraphrase")
      ->capture_default_str();
  gen_cmd->add_option("--vocab-size", gen.spec.vocab_size, "Content tokens")->capture_default_str();
  gen_cmd->add_option("--len-min", gen.spec.len_min, "Minimum source length")->capture_default_str();
  gen_cmd->add_option("--len-max", gen.spec.len_max, "Maximum source length")->capture_default_str();
  gen_cmd->add_option("--n-train", gen.spec.n_train, "Training examples")->capture_default_str();
  gen_cmd->add_option("--n-valid", gen.spec.n_valid, "Validation examples")->capture_default_str();
  gen_cmd->add_option("--n-test", gen.spec.n_test, "Test examples")->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.seed, "Generation seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->capture_default_str();
  gen_cmd->callback([&]() { run_gen_data(gen, gen_cmd); });

  TrainCli tr;
  auto* tr_cmd = app.add_subcommand("train", "Train a checkpoint");
  tr_cmd->add_option("--train", tr.train_path, "Training TSV")->required();
  tr_cmd->add_option("--valid", tr.valid_path, "Validation TSV (enables best-checkpoint selection)");
  tr_cmd->add_option("--vocab", tr.vocab_path, "Vocabulary file")->required();
  tr_cmd->add_option("--mixing", tr.mixing, "none | static | mist")->capture_default_str();
  tr_cmd->add_option("--static-base", tr.static_base, "Checkpoint that freezes pseudo targets (static mixing)");
  tr_cmd->add_option("--mixed-out", tr.mixed_out, "Where to write the augmented dataset (static mixing)");
  tr_cmd->add_option("--f-ratio", tr.tc.f_ratio, "Mask ratio")->capture_default_str();
  tr_cmd->add_option("--lr", tr.tc.lr, "Peak learning rate")->capture_default_str();
  tr_cmd->add_option("--warmup-steps", tr.tc.warmup_steps, "Linear warmup steps")->capture_default_str();
  tr_cmd->add_option("--batch-size", tr.tc.batch_size, "Examples per step")->capture_default_str();
  tr_cmd->add_option("--length-loss-weight", tr.tc.length_loss_weight, "Weight of the length loss")
      ->capture_default_str();
  tr_cmd->add_option("--max-steps", tr.tc.max_steps, "Optimizer steps")->capture_default_str();
  tr_cmd->add_option("--eval-every", tr.tc.eval_every, "Validation period in steps")->capture_default_str();
  tr_cmd->add_option("--log-every", tr.tc.log_every, "Metrics record period in steps")->capture_default_str();
  tr_cmd->add_option("--grad-clip", tr.tc.grad_clip, "Global-norm clip (0 = off)")->capture_default_str();
  tr_cmd->add_option("--target-em", tr.tc.target_valid_em, "Stop once validation EM reaches this")
      ->capture_default_str();
  tr_cmd->add_option("--seed", tr.tc.seed, "Training seed")->capture_default_str();
  tr_cmd->add_flag("--ar", tr.ar, "Causal-target objective (latency baseline checkpoint)");
  tr_cmd->add_flag("--f64", tr.f64, "Train in double precision");
  tr_cmd->add_option("--ckpt", tr.ckpt, "Output checkpoint path")->capture_default_str();
  tr_cmd->add_option("--log", tr.log_path, "Metrics stream (JSON lines)");
  tr.model.attach(tr_cmd);
  tr_cmd->callback([&]() { run_train(tr, tr_cmd); });

  GenerateCli ge;
  auto* ge_cmd = app.add_subcommand("generate", "Decode inputs with a trained checkpoint");
  ge_cmd->add_option("--ckpt", ge.ckpt, "Checkpoint")->required();
  ge_cmd->add_option("--vocab", ge.vocab_path, "Vocabulary file")->required();
  ge_cmd->add_option("--input", ge.input_path, "Input TSV or plain text (first column is the source)")->required();
  ge_cmd->add_option("--out", ge.out_path, "Decode records (JSON lines)")->required();
  ge_cmd->add_option("--strategy", ge.strategy, "single_pass | mist_iter | mask_predict | ar_greedy")
      ->capture_default_str();
  ge_cmd->add_option("--iterations", ge.iterations, "Decoding iterations")->capture_default_str();
  ge_cmd->add_flag("--no-cache", ge.no_cache, "Disable the source K/V cache");
  ge_cmd->add_flag("--f64", ge.f64, "Decode in double precision");
  ge_cmd->add_option("--max-target-len", ge.max_target_len, "Clamp for predicted lengths");
  ge_cmd->add_option("--force-target-len", ge.force_target_len, "Fixed target length (latency protocol)");
  ge_cmd->callback([&]() { run_generate(ge, ge_cmd); });

  EvaluateCli ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Score decode records against references");
  ev_cmd->add_option("--records", ev.records_path, "Decode records (JSON lines)")->required();
  ev_cmd->add_option("--refs", ev.refs_path, "Reference TSV (target + alternatives)")->required();
  ev_cmd->add_option("--out", ev.out_path, "Evaluation report (JSON)");
  ev_cmd->add_option("--csv", ev.csv_path, "Per-iteration metric CSV");
  ev_cmd->callback([&]() { run_evaluate(ev, ev_cmd); });

  BenchmarkCli be;
  auto* be_cmd = app.add_subcommand("benchmark", "Latency comparison: AR baseline vs NAR strategies");
  be_cmd->add_option("--nar-ckpt", be.nar_ckpt, "NAR checkpoint")->required();
  be_cmd->add_option("--ar-ckpt", be.ar_ckpt, "AR checkpoint")->required();
  be_cmd->add_option("--vocab", be.vocab_path, "Vocabulary file")->required();
  be_cmd->add_option("--input", be.input_path, "Input TSV (sources)")->required();
  be_cmd->add_option("--out", be.out_path, "Benchmark report (JSON)");
  be_cmd->add_option("--force-target-len", be.force_target_len, "Forced output length")->capture_default_str();
  be_cmd->add_option("--mist-iterations", be.mist_iterations, "Iterations for the mist_iter row")
      ->capture_default_str();
  be_cmd->add_option("--warmup", be.warmup, "Warmup examples excluded from stats")->capture_default_str();
  be_cmd->add_option("--max-target-len", be.max_target_len, "Clamp for predicted lengths");
  be_cmd->callback([&]() { run_benchmark(be, be_cmd); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const mist::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const mist::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const mist::NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
