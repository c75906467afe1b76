// planfill: train/decode/bench/probe/render tooling for the slot-level
// plan-and-infill generative model. See README.md for usage.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "planfill/checkpoint.hpp"
#include "planfill/eval.hpp"
#include "planfill/probe.hpp"
#include "planfill/render.hpp"
#include "planfill/serde.hpp"
#include "planfill/trainer.hpp"

using namespace planfill;

namespace {

struct DecodeArgs {
  std::string ckpt;
  std::string prompts;
  std::string preset = "default";
  std::string out_dir = "decode-out";
  double tau_slot = -1.0;
  double tau_token = -1.0;
  int k = 0;
  int b = 0;
  int max_len = 0;
  std::string cache_mode;
  std::string draft_mode;
  double temperature = 0.0;
  std::int64_t seed = -1;
};

DecodeConfig apply_overrides(DecodeConfig cfg, const DecodeArgs& a) {
  if (a.tau_slot >= 0.0) cfg.tau_slot = a.tau_slot;
  if (a.tau_token >= 0.0) cfg.tau_token = a.tau_token;
  if (a.k > 0) cfg.k = a.k;
  if (a.b > 0) cfg.b = a.b;
  if (a.max_len > 0) cfg.max_len = a.max_len;
  if (!a.cache_mode.empty()) {
    if (a.cache_mode != "concat" && a.cache_mode != "recompute") {
      throw std::invalid_argument("--cache-mode must be concat|recompute");
    }
    cfg.cache_mode = a.cache_mode == "concat" ? CacheMode::concat : CacheMode::recompute;
  }
  if (!a.draft_mode.empty()) {
    if (a.draft_mode != "greedy" && a.draft_mode != "sampled") {
      throw std::invalid_argument("--draft-mode must be greedy|sampled");
    }
    cfg.draft_mode = a.draft_mode == "greedy" ? DraftMode::greedy : DraftMode::sampled;
  }
  if (a.temperature > 0.0) cfg.temperature = a.temperature;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  cfg.validate();
  return cfg;
}

std::string checkpoint_dtype(const fs::path& ckpt) {
  json manifest = json::parse(read_file(ckpt / "manifest.json"));
  return manifest.at("dtype").get<std::string>();
}

// Runs fn with the checkpoint loaded at its stored precision.
template <typename Fn>
void with_checkpoint(const std::string& ckpt_path, Fn&& fn) {
  const fs::path ckpt = fs::path(ckpt_path);
  if (checkpoint_dtype(ckpt) == "f64") {
    auto loaded = load_checkpoint<double>(ckpt);
    Model<double> model(loaded.config, std::move(loaded.params));
    fn(model);
  } else {
    auto loaded = load_checkpoint<float>(ckpt);
    Model<float> model(loaded.config, std::move(loaded.params));
    fn(model);
  }
}

CorpusSpec eval_spec(const RunConfig& rc) {
  CorpusSpec spec = rc.corpus;
  spec.n_samples = rc.n_eval;
  spec.seed = rc.corpus.seed + 0x9e37ULL;  // held-out split
  return spec;
}

template <typename S>
void run_train(const RunConfig& rc) {
  const fs::path out = resolve_out(rc.out_dir);
  fs::create_directories(out);

  auto train_corpus = gen_corpus(rc.corpus, rc.model.max_position);
  auto held_out = gen_corpus(eval_spec(rc), rc.model.max_position);
  write_corpus(out / "corpus.jsonl", train_corpus);
  write_corpus(out / "eval.jsonl", held_out);

  Rng mrng(rc.seed);
  auto model = Model<S>::randomized(rc.model, mrng);
  OptimizerState<S> opt = OptimizerState<S>::init(rc.model);

  std::vector<StepLog> logs = run_training(
      model, opt, train_corpus, rc.train, [](const StepLog& l) {
        std::printf("step %ld  arm %.4f  mdm %.4f  total %.4f  lr %.2e\n",
                    l.step, l.arm, l.mdm, l.total, l.lr);
      });
  atomic_write_file(out / "loss.csv", loss_log_to_csv(logs));
  save_checkpoint(out / "checkpoint", rc.model, model.parameters(), opt);
  std::printf("checkpoint written to %s\n", (out / "checkpoint").string().c_str());
}

int cmd_train(const std::string& config_path) {
  RunConfig rc = load_run_config(config_path);
  rc.model.validate();
  if (rc.precision == "f64") {
    run_train<double>(rc);
  } else {
    run_train<float>(rc);
  }
  return 0;
}

int cmd_gen_corpus(const std::string& config_path, const std::string& out_path,
                   const std::string& split) {
  RunConfig rc = load_run_config(config_path);
  CorpusSpec spec = split == "eval" ? eval_spec(rc) : rc.corpus;
  auto corpus = gen_corpus(spec, rc.model.max_position);
  const fs::path out = out_path.empty()
                           ? resolve_out(rc.out_dir) / (split + ".jsonl")
                           : resolve_out(out_path);
  write_corpus(out, corpus);
  std::printf("%d samples -> %s\n", spec.n_samples, out.string().c_str());
  return 0;
}

int cmd_decode(const DecodeArgs& args) {
  auto prompts = read_corpus(args.prompts);
  const auto presets = builtin_presets();
  DecodeConfig base;
  if (presets.count(args.preset)) {
    base = presets.at(args.preset);
  } else {
    throw std::invalid_argument("unknown preset: " + args.preset +
                                " (built-ins: default, toy, ar)");
  }
  DecodeConfig cfg = apply_overrides(base, args);

  with_checkpoint(args.ckpt, [&](auto& model) {
    EvalReport rep = evaluate(model, prompts, cfg, args.preset);
    const fs::path out = resolve_out(args.out_dir);
    std::string lines;
    for (size_t i = 0; i < rep.prompts.size(); ++i) {
      json j{{"prompt", prompts[i].prompt},
             {"response", rep.prompts[i].response},
             {"exact_match", rep.prompts[i].exact_match},
             {"trace", trace_to_json(rep.prompts[i].trace)}};
      lines += j.dump();
      lines += '\n';
    }
    atomic_write_file(out / "responses.jsonl", lines);
    atomic_write_file(out / "report.json",
                      eval_report_to_json(rep, false).dump(2) + "\n");
    std::printf("accuracy %.4f  tpf %.3f  tokens/sec %.1f  -> %s\n",
                rep.accuracy, rep.aggregate_tpf, rep.tokens_per_sec,
                out.string().c_str());
  });
  return 0;
}

int cmd_bench(const DecodeArgs& args, const std::vector<double>& tau_slots,
              const std::vector<double>& tau_tokens, const std::vector<int>& ks,
              const std::vector<int>& bs, const std::string& out_path) {
  auto prompts = read_corpus(args.prompts);
  DecodeConfig base = builtin_presets().at(args.preset);
  base = apply_overrides(base, args);
  with_checkpoint(args.ckpt, [&](auto& model) {
    auto rows = bench_sweep(model, prompts, base,
                            tau_slots.empty() ? std::vector<double>{base.tau_slot} : tau_slots,
                            tau_tokens.empty() ? std::vector<double>{base.tau_token} : tau_tokens,
                            ks.empty() ? std::vector<int>{base.k} : ks,
                            bs.empty() ? std::vector<int>{base.b} : bs);
    atomic_write_file(resolve_out(out_path), bench_to_csv(rows));
    std::printf("%zu sweep cells -> %s\n", rows.size(), out_path.c_str());
  });
  return 0;
}

int cmd_probe(const std::string& ckpt, const std::string& corpus_path,
              const std::vector<double>& t_levels, int samples,
              std::int64_t seed, const std::string& out_path) {
  auto corpus = read_corpus(corpus_path);
  with_checkpoint(ckpt, [&](auto& model) {
    Rng rng(seed >= 0 ? static_cast<std::uint64_t>(seed) : 0);
    auto curves = dependency_probe(
        model, corpus,
        t_levels.empty() ? std::vector<double>{0.3, 0.5, 0.8} : t_levels,
        samples, rng);
    atomic_write_file(resolve_out(out_path), locality_to_csv(curves));
    std::printf("%zu locality curves -> %s\n", curves.size(), out_path.c_str());
  });
  return 0;
}

int cmd_render(const std::string& trace_path, const std::string& out_path,
               int index, int wrap) {
  const std::string text = read_file(trace_path);
  json tj;
  if (trace_path.size() > 6 && trace_path.substr(trace_path.size() - 6) == ".jsonl") {
    int line_no = 0;
    size_t pos = 0;
    while (pos < text.size()) {
      size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      if (line_no == index) {
        tj = json::parse(text.substr(pos, end - pos)).at("trace");
        break;
      }
      ++line_no;
      pos = end + 1;
    }
    if (tj.is_null()) throw std::invalid_argument("trace index out of range");
  } else {
    tj = json::parse(text);
    if (tj.contains("trace")) tj = tj.at("trace");
  }
  DecodeTrace trace = trace_from_json(tj);
  atomic_write_file(resolve_out(out_path), render_trace_svg(trace, wrap));
  std::printf("svg -> %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slot-level plan-and-infill language model toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", config_path, "run config JSON")->required();

  std::string gc_out, gc_split = "train";
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic task corpus");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--out", gc_out, "output JSONL path");
  gen->add_option("--split", gc_split, "train|eval")->check(CLI::IsMember({"train", "eval"}));

  DecodeArgs dargs;
  auto add_decode_opts = [&](CLI::App* cmd, bool need_prompts) {
    cmd->add_option("--ckpt", dargs.ckpt, "checkpoint directory")->required();
    auto* p = cmd->add_option("--prompts", dargs.prompts, "prompts JSONL");
    if (need_prompts) p->required();
    cmd->add_option("--preset", dargs.preset, "decode preset (default|toy|ar)");
    cmd->add_option("--tau-slot", dargs.tau_slot, "slot selection threshold");
    cmd->add_option("--tau-token", dargs.tau_token, "token acceptance threshold");
    cmd->add_option("-k,--slot-size", dargs.k, "slot size");
    cmd->add_option("-b,--block-size", dargs.b, "block size");
    cmd->add_option("--max-len", dargs.max_len, "generation length");
    cmd->add_option("--cache-mode", dargs.cache_mode, "concat|recompute");
    cmd->add_option("--draft-mode", dargs.draft_mode, "greedy|sampled");
    cmd->add_option("--temperature", dargs.temperature, "sampling temperature");
    cmd->add_option("--seed", dargs.seed, "decode seed");
  };

  auto* dec = app.add_subcommand("decode", "decode prompts with a checkpoint");
  add_decode_opts(dec, true);
  dec->add_option("--out", dargs.out_dir, "output directory");

  std::vector<double> bench_tau_slots, bench_tau_tokens;
  std::vector<int> bench_ks, bench_bs;
  std::string bench_out = "bench.csv";
  auto* bench = app.add_subcommand("bench", "sweep decode hyperparameters");
  add_decode_opts(bench, true);
  bench->add_option("--tau-slots", bench_tau_slots, "grid of tau_slot values");
  bench->add_option("--tau-tokens", bench_tau_tokens, "grid of tau_token values");
  bench->add_option("--ks", bench_ks, "grid of slot sizes");
  bench->add_option("--bs", bench_bs, "grid of block sizes");
  bench->add_option("--csv", bench_out, "output CSV path");

  std::string probe_ckpt, probe_corpus, probe_out = "locality.csv";
  std::vector<double> probe_ts;
  int probe_samples = 2000;
  std::int64_t probe_seed = 0;
  auto* probe = app.add_subcommand("probe", "dependency-locality study");
  probe->add_option("--ckpt", probe_ckpt, "checkpoint directory")->required();
  probe->add_option("--corpus", probe_corpus, "corpus JSONL")->required();
  probe->add_option("--t-levels", probe_ts, "masking ratios");
  probe->add_option("--samples", probe_samples, "probe draws per ratio");
  probe->add_option("--seed", probe_seed, "probe seed");
  probe->add_option("--csv", probe_out, "output CSV path");

  std::string render_trace, render_out = "trace.svg";
  int render_index = 0, render_wrap = 16;
  auto* render = app.add_subcommand("render", "render a decode trace as SVG");
  render->add_option("--trace", render_trace, "trace JSON or responses JSONL")->required();
  render->add_option("--out", render_out, "output SVG path");
  render->add_option("--index", render_index, "line index for JSONL input");
  render->add_option("--wrap", render_wrap, "cells per row");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (gen->parsed()) return cmd_gen_corpus(config_path, gc_out, gc_split);
    if (dec->parsed()) return cmd_decode(dargs);
    if (bench->parsed()) {
      return cmd_bench(dargs, bench_tau_slots, bench_tau_tokens, bench_ks,
                       bench_bs, bench_out);
    }
    if (probe->parsed()) {
      return cmd_probe(probe_ckpt, probe_corpus, probe_ts, probe_samples,
                       probe_seed, probe_out);
    }
    if (render->parsed()) {
      return cmd_render(render_trace, render_out, render_index, render_wrap);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
