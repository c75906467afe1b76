#ifndef PLANFILL_CORPUS_HPP
#define PLANFILL_CORPUS_HPP

#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "planfill/io.hpp"
#include "planfill/rng.hpp"
#include "planfill/types.hpp"

namespace planfill {

// Token id layout shared by all synthetic tasks: the model's special tokens
// come first, payload symbols start at kPayloadBase.
constexpr TokenId kPadId = 0;
constexpr TokenId kBosId = 1;
constexpr TokenId kEosId = 2;
constexpr TokenId kMaskId = 3;
constexpr TokenId kSepId = 4;
constexpr TokenId kPayloadBase = 5;

enum class Task { copy, reverse, modsum_chain };

inline Task task_from_string(const std::string& s) {
  if (s == "copy") return Task::copy;
  if (s == "reverse") return Task::reverse;
  if (s == "modsum-chain") return Task::modsum_chain;
  throw std::invalid_argument("unknown task: " + s);
}

inline std::string task_to_string(Task t) {
  switch (t) {
    case Task::copy: return "copy";
    case Task::reverse: return "reverse";
    case Task::modsum_chain: return "modsum-chain";
  }
  return "?";
}

struct CorpusSample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;
};

struct CorpusSpec {
  Task task = Task::copy;
  int n_samples = 1024;
  int len_min = 4;
  int len_max = 12;
  int alphabet = 16;  // payload symbol count (modsum-chain uses `base` digits)
  int base = 7;       // modsum-chain modulus
  std::uint64_t seed = 0;
};

// Deterministic task responses over a symbol payload:
//   copy         response = payload
//   reverse      response = reversed payload
//   modsum-chain response[i] = (payload[0] + ... + payload[i]) mod base
inline std::vector<int> task_response(Task task, const std::vector<int>& payload,
                                      int base) {
  std::vector<int> out;
  out.reserve(payload.size());
  switch (task) {
    case Task::copy:
      out = payload;
      break;
    case Task::reverse:
      out.assign(payload.rbegin(), payload.rend());
      break;
    case Task::modsum_chain: {
      int acc = 0;
      for (int v : payload) {
        acc = (acc + v) % base;
        out.push_back(acc);
      }
      break;
    }
  }
  return out;
}

inline std::vector<CorpusSample> gen_corpus(const CorpusSpec& spec,
                                            int max_position) {
  if (spec.len_min < 1 || spec.len_max < spec.len_min) {
    throw std::invalid_argument("gen_corpus: bad length range");
  }
  const int symbols = spec.task == Task::modsum_chain ? spec.base : spec.alphabet;
  if (symbols < 2) throw std::invalid_argument("gen_corpus: alphabet too small");
  // prompt = [bos payload sep], response = payload-length tokens + eos slotting
  if (spec.len_max * 2 + 3 > max_position) {
    throw std::invalid_argument("gen_corpus: length range exceeds max_position");
  }
  Rng rng(spec.seed);
  std::vector<CorpusSample> out;
  out.reserve(static_cast<size_t>(spec.n_samples));
  for (int i = 0; i < spec.n_samples; ++i) {
    const int len = spec.len_min + rng.uniform_int(spec.len_max - spec.len_min + 1);
    std::vector<int> payload(static_cast<size_t>(len));
    for (auto& v : payload) v = rng.uniform_int(symbols);
    CorpusSample s;
    s.prompt.push_back(kBosId);
    for (int v : payload) s.prompt.push_back(kPayloadBase + v);
    s.prompt.push_back(kSepId);
    for (int v : task_response(spec.task, payload, spec.base)) {
      s.response.push_back(kPayloadBase + v);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string corpus_to_jsonl(const std::vector<CorpusSample>& corpus) {
  std::string out;
  for (const auto& s : corpus) {
    nlohmann::ordered_json j{{"prompt", s.prompt}, {"response", s.response}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<CorpusSample> corpus_from_jsonl(const std::string& text) {
  std::vector<CorpusSample> out;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (end > pos) {
      nlohmann::json j = nlohmann::json::parse(text.substr(pos, end - pos));
      CorpusSample s;
      s.prompt = j.at("prompt").get<std::vector<TokenId>>();
      s.response = j.at("response").get<std::vector<TokenId>>();
      out.push_back(std::move(s));
    }
    pos = end + 1;
  }
  return out;
}

inline void write_corpus(const fs::path& path, const std::vector<CorpusSample>& corpus) {
  atomic_write_file(path, corpus_to_jsonl(corpus));
}

inline std::vector<CorpusSample> read_corpus(const fs::path& path) {
  return corpus_from_jsonl(read_file(path));
}

}  // namespace planfill

#endif  // PLANFILL_CORPUS_HPP
