#ifndef PLANFILL_EVAL_HPP
#define PLANFILL_EVAL_HPP

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "planfill/corpus.hpp"
#include "planfill/decoder.hpp"
#include "planfill/model.hpp"

namespace planfill {

struct PromptEval {
  std::vector<TokenId> response;  // decoded, EOS kept if emitted
  bool exact_match = false;
  long tokens = 0;
  long forwards = 0;
  DecodeTrace trace;
};

// Exact-match accuracy plus the parallelism counters. Aggregate TPF is
// sum(tokens) / sum(forwards); tokens/sec is wall clock and hardware-bound.
struct EvalReport {
  std::string preset;
  double accuracy = 0.0;
  long total_tokens = 0;
  long total_forwards = 0;
  double aggregate_tpf = 0.0;
  double tokens_per_sec = 0.0;
  std::vector<PromptEval> prompts;
};

inline bool response_matches(const std::vector<TokenId>& decoded,
                             const std::vector<TokenId>& target, TokenId eos_id) {
  std::vector<TokenId> got = decoded;
  if (!got.empty() && got.back() == eos_id) got.pop_back();
  return got == target;
}

// Batch size 1 per prompt; each decode gets a fresh state and cache.
template <typename S>
EvalReport evaluate(const Model<S>& model, const std::vector<CorpusSample>& corpus,
                    const DecodeConfig& cfg, const std::string& preset_name = "") {
  EvalReport report;
  report.preset = preset_name;
  long correct = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& sample : corpus) {
    DecodeResult r = decode(model, sample.prompt, cfg);
    PromptEval pe;
    pe.response = r.response;
    pe.exact_match = response_matches(r.response, sample.response, model.config().eos_id);
    pe.tokens = r.trace.tokens_total;
    pe.forwards = r.trace.forwards;
    pe.trace = std::move(r.trace);
    correct += pe.exact_match ? 1 : 0;
    report.total_tokens += pe.tokens;
    report.total_forwards += pe.forwards;
    report.prompts.push_back(std::move(pe));
  }
  const auto t1 = std::chrono::steady_clock::now();
  const double secs = std::chrono::duration<double>(t1 - t0).count();
  report.accuracy = corpus.empty()
                        ? 0.0
                        : static_cast<double>(correct) / static_cast<double>(corpus.size());
  report.aggregate_tpf =
      report.total_forwards > 0
          ? static_cast<double>(report.total_tokens) / static_cast<double>(report.total_forwards)
          : 0.0;
  report.tokens_per_sec = secs > 0.0 ? static_cast<double>(report.total_tokens) / secs : 0.0;
  return report;
}

struct BenchRow {
  DecodeConfig cfg;
  double accuracy = 0.0;
  double tpf = 0.0;
  long forwards = 0;
  double tokens_per_sec = 0.0;
};

// Grid sweep over the decoding thresholds and unit sizes.
template <typename S>
std::vector<BenchRow> bench_sweep(const Model<S>& model,
                                  const std::vector<CorpusSample>& corpus,
                                  const DecodeConfig& base,
                                  const std::vector<double>& tau_slots,
                                  const std::vector<double>& tau_tokens,
                                  const std::vector<int>& ks,
                                  const std::vector<int>& bs) {
  std::vector<BenchRow> rows;
  for (double ts : tau_slots) {
    for (double tt : tau_tokens) {
      for (int k : ks) {
        for (int b : bs) {
          if (b < k || b % k != 0 || base.max_len % b != 0) continue;
          DecodeConfig cfg = base;
          cfg.tau_slot = ts;
          cfg.tau_token = tt;
          cfg.k = k;
          cfg.b = b;
          EvalReport rep = evaluate(model, corpus, cfg);
          rows.push_back({cfg, rep.accuracy, rep.aggregate_tpf,
                          rep.total_forwards, rep.tokens_per_sec});
        }
      }
    }
  }
  return rows;
}

inline std::string bench_to_csv(const std::vector<BenchRow>& rows) {
  std::string out = "tau_slot,tau_token,k,b,cache_mode,accuracy,tpf,forwards,tokens_per_sec\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%.4g,%.4g,%d,%d,%s,%.6g,%.6g,%ld,%.6g\n",
                  r.cfg.tau_slot, r.cfg.tau_token, r.cfg.k, r.cfg.b,
                  r.cfg.cache_mode == CacheMode::concat ? "concat" : "recompute",
                  r.accuracy, r.tpf, r.forwards, r.tokens_per_sec);
    out += line;
  }
  return out;
}

}  // namespace planfill

#endif  // PLANFILL_EVAL_HPP
