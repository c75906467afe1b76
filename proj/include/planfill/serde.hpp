#ifndef PLANFILL_SERDE_HPP
#define PLANFILL_SERDE_HPP

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "planfill/checkpoint.hpp"
#include "planfill/corpus.hpp"
#include "planfill/decoder.hpp"
#include "planfill/eval.hpp"
#include "planfill/trainer.hpp"

namespace planfill {

inline json decode_config_to_json(const DecodeConfig& c) {
  return json{{"tau_slot", c.tau_slot},
              {"tau_token", c.tau_token},
              {"k", c.k},
              {"b", c.b},
              {"max_len", c.max_len},
              {"cache_mode", c.cache_mode == CacheMode::concat ? "concat" : "recompute"},
              {"draft_mode", c.draft_mode == DraftMode::greedy ? "greedy" : "sampled"},
              {"temperature", c.temperature},
              {"seed", c.seed}};
}

inline DecodeConfig decode_config_from_json(const json& j) {
  DecodeConfig c;
  c.tau_slot = j.value("tau_slot", c.tau_slot);
  c.tau_token = j.value("tau_token", c.tau_token);
  c.k = j.value("k", c.k);
  c.b = j.value("b", c.b);
  c.max_len = j.value("max_len", c.max_len);
  const std::string cm = j.value("cache_mode", std::string("concat"));
  if (cm != "concat" && cm != "recompute") {
    throw std::invalid_argument("cache_mode must be concat|recompute");
  }
  c.cache_mode = cm == "concat" ? CacheMode::concat : CacheMode::recompute;
  const std::string dm = j.value("draft_mode", std::string("greedy"));
  if (dm != "greedy" && dm != "sampled") {
    throw std::invalid_argument("draft_mode must be greedy|sampled");
  }
  c.draft_mode = dm == "greedy" ? DraftMode::greedy : DraftMode::sampled;
  c.temperature = j.value("temperature", c.temperature);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline json trace_to_json(const DecodeTrace& t) {
  json slots = json::array();
  for (const auto& s : t.slots) {
    slots.push_back(json{{"origin", s.origin},
                         {"iteration", s.iteration},
                         {"path", s.path},
                         {"forced", s.forced}});
  }
  json tokens = json::array();
  for (const auto& tok : t.tokens) {
    tokens.push_back(json{{"pos", tok.pos}, {"iter", tok.iter}});
  }
  return json{{"slots", slots},
              {"tokens", tokens},
              {"forwards", t.forwards},
              {"tokens_total", t.tokens_total},
              {"tpf", t.tpf()}};
}

inline DecodeTrace trace_from_json(const json& j) {
  DecodeTrace t;
  for (const auto& s : j.at("slots")) {
    DecodeTrace::SlotRecord r;
    r.origin = s.at("origin").get<Pos>();
    r.iteration = s.at("iteration").get<int>();
    r.path = s.at("path").get<std::string>();
    r.forced = s.at("forced").get<std::vector<int>>();
    t.slots.push_back(std::move(r));
  }
  for (const auto& tok : j.at("tokens")) {
    t.tokens.push_back({tok.at("pos").get<Pos>(), tok.at("iter").get<int>()});
  }
  t.forwards = j.at("forwards").get<long>();
  t.tokens_total = j.at("tokens_total").get<long>();
  return t;
}

inline json corpus_spec_to_json(const CorpusSpec& s) {
  return json{{"task", task_to_string(s.task)}, {"n_samples", s.n_samples},
              {"len_min", s.len_min},           {"len_max", s.len_max},
              {"alphabet", s.alphabet},         {"base", s.base},
              {"seed", s.seed}};
}

inline CorpusSpec corpus_spec_from_json(const json& j) {
  CorpusSpec s;
  s.task = task_from_string(j.value("task", std::string("copy")));
  s.n_samples = j.value("n_samples", s.n_samples);
  s.len_min = j.value("len_min", s.len_min);
  s.len_max = j.value("len_max", s.len_max);
  s.alphabet = j.value("alphabet", s.alphabet);
  s.base = j.value("base", s.base);
  s.seed = j.value("seed", s.seed);
  return s;
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig t;
  t.steps = j.value("steps", t.steps);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr = j.value("lr", t.lr);
  t.warmup_steps = j.value("warmup_steps", t.warmup_steps);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.lambda = j.value("lambda", t.lambda);
  t.slot_sizes = j.value("slot_sizes", t.slot_sizes);
  t.log_every = j.value("log_every", t.log_every);
  t.seed = j.value("seed", t.seed);
  if (t.lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  return t;
}

// Whole-run configuration for the CLI: corpus, model, training and the named
// decode presets.
struct RunConfig {
  std::string out_dir = "run";
  std::uint64_t seed = 0;
  std::string precision = "f32";  // f32 | f64
  CorpusSpec corpus;
  int n_eval = 100;
  ModelConfig model;
  TrainConfig train;
  std::map<std::string, DecodeConfig> presets;
};

inline std::map<std::string, DecodeConfig> builtin_presets() {
  std::map<std::string, DecodeConfig> m;
  DecodeConfig dflt;  // large-model default shape
  dflt.tau_slot = 0.9;
  dflt.tau_token = 0.3;
  dflt.k = 32;
  dflt.b = 128;
  dflt.max_len = 512;
  m["default"] = dflt;
  DecodeConfig toy;
  toy.tau_slot = 0.6;
  toy.tau_token = 0.3;
  toy.k = 4;
  toy.b = 16;
  toy.max_len = 16;
  m["toy"] = toy;
  DecodeConfig ar;  // single-token slots: reduces to greedy AR decoding
  ar.tau_slot = 0.0;
  ar.tau_token = 0.0;
  ar.k = 1;
  ar.b = 1;
  ar.max_len = 16;
  m["ar"] = ar;
  return m;
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig r;
  r.out_dir = j.value("out_dir", r.out_dir);
  r.seed = j.value("seed", r.seed);
  r.precision = j.value("precision", r.precision);
  if (r.precision != "f32" && r.precision != "f64") {
    throw std::invalid_argument("precision must be f32|f64");
  }
  if (j.contains("corpus")) r.corpus = corpus_spec_from_json(j.at("corpus"));
  r.n_eval = j.value("n_eval", r.n_eval);
  if (j.contains("model")) {
    r.model = model_config_from_json(j.at("model"));
  }
  if (j.contains("train")) r.train = train_config_from_json(j.at("train"));
  r.presets = builtin_presets();
  if (j.contains("presets")) {
    for (const auto& [name, pj] : j.at("presets").items()) {
      r.presets[name] = decode_config_from_json(pj);
    }
  }
  // Derived seeds: one stream each for corpus and training unless given.
  if (!j.contains("corpus") || !j.at("corpus").contains("seed")) {
    r.corpus.seed = r.seed * 1000003ULL + 1;
  }
  if (!j.contains("train") || !j.at("train").contains("seed")) {
    r.train.seed = r.seed * 1000003ULL + 2;
  }
  return r;
}

inline RunConfig load_run_config(const fs::path& path) {
  return run_config_from_json(json::parse(read_file(path)));
}

inline json eval_report_to_json(const EvalReport& r, bool include_traces) {
  json prompts = json::array();
  for (const auto& p : r.prompts) {
    json pj{{"response", p.response},
            {"exact_match", p.exact_match},
            {"tokens", p.tokens},
            {"forwards", p.forwards},
            {"tpf", p.forwards > 0 ? static_cast<double>(p.tokens) / p.forwards : 0.0}};
    if (include_traces) pj["trace"] = trace_to_json(p.trace);
    prompts.push_back(std::move(pj));
  }
  return json{{"preset", r.preset},
              {"accuracy", r.accuracy},
              {"total_tokens", r.total_tokens},
              {"total_forwards", r.total_forwards},
              {"aggregate_tpf", r.aggregate_tpf},
              {"tokens_per_sec", r.tokens_per_sec},
              {"prompts", prompts}};
}

}  // namespace planfill

#endif  // PLANFILL_SERDE_HPP
