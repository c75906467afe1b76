#ifndef PLANFILL_DECODER_HPP
#define PLANFILL_DECODER_HPP

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "planfill/model.hpp"
#include "planfill/rng.hpp"
#include "planfill/slotting.hpp"
#include "planfill/types.hpp"

namespace planfill {

enum class CacheMode { concat, recompute };
enum class DraftMode { greedy, sampled };

struct DecodeConfig {
  double tau_slot = 0.9;   // slot selection threshold
  double tau_token = 0.3;  // token acceptance threshold
  int k = 32;              // slot size
  int b = 128;             // block size; blocks are decoded serially
  int max_len = 128;       // generation budget, multiple of b
  CacheMode cache_mode = CacheMode::concat;
  DraftMode draft_mode = DraftMode::greedy;
  double temperature = 1.0;  // sampled mode only
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) throw std::invalid_argument("DecodeConfig: k must be >= 1");
    if (b < k) throw std::invalid_argument("DecodeConfig: b must be >= k");
    if (b % k != 0) throw std::invalid_argument("DecodeConfig: k must divide b");
    if (max_len <= 0 || max_len % b != 0) {
      throw std::invalid_argument("DecodeConfig: max_len must be a positive multiple of b");
    }
    if (tau_slot < 0.0 || tau_slot > 1.0 || tau_token < 0.0 || tau_token > 1.0) {
      throw std::invalid_argument("DecodeConfig: thresholds must lie in [0,1]");
    }
    if (temperature <= 0.0) {
      throw std::invalid_argument("DecodeConfig: temperature must be positive");
    }
  }
};

struct SlotTokens {
  std::vector<TokenId> tokens;
  Pos origin = 0;
};

// Per-decode bookkeeping: committed slots, per-token acceptance records and
// the forward-pass budget; tpf = tokens generated per backbone forward pass.
struct DecodeTrace {
  struct SlotRecord {
    Pos origin = 0;
    int iteration = 0;         // plan-and-infill cycle of the commit
    std::string path;          // "global" | "iterative"
    std::vector<int> forced;   // in-slot indices accepted by the progress rule
  };
  struct TokenRecord {
    Pos pos = 0;
    int iter = 0;  // acceptance clock (cycles + completion rounds)
  };
  std::vector<SlotRecord> slots;
  std::vector<TokenRecord> tokens;
  long forwards = 0;
  long tokens_total = 0;

  double tpf() const {
    return forwards > 0 ? static_cast<double>(tokens_total) /
                              static_cast<double>(forwards)
                        : 0.0;
  }
};

// Per-block decoding state. The cache covers exactly prompt ++ clean slots in
// physical (generation) order; masked slots stay in positional order.
template <typename S>
struct DecodeState {
  TokenBuffer prompt;
  std::vector<SlotTokens> clean;  // generation order
  std::vector<Pos> masked;        // origins, positional order
  KVCache<S> cache;
  int block_slots = 0;  // K of the current block
  std::optional<Pos> eos_pos;

  double timestep() const {
    return block_slots > 0 ? static_cast<double>(masked.size()) /
                                 static_cast<double>(block_slots)
                           : 0.0;
  }
};

struct DraftSlot {
  Pos origin = 0;
  std::vector<TokenId> tokens;
  std::vector<double> gen_prob;  // probability of each token in the pass that produced it
  double score = 0.0;            // top-token probability at the slot's first position
};

struct PlanResult {
  std::vector<DraftSlot> drafts;  // one per masked slot, positional order
  std::vector<int> selected;      // indices into drafts, ascending
};

// Longest prefix in which every probability strictly exceeds tau.
inline int accepted_prefix_len(const std::vector<double>& probs, double tau) {
  int l = 0;
  while (l < static_cast<int>(probs.size()) && probs[static_cast<size_t>(l)] > tau) ++l;
  return l;
}

// Slots whose certainty score exceeds tau_slot; falls back to the single
// highest-scoring slot when none qualifies.
inline std::vector<int> select_slots(const std::vector<double>& scores, double tau_slot) {
  std::vector<int> sel;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > tau_slot) sel.push_back(static_cast<int>(i));
  }
  if (sel.empty() && !scores.empty()) {
    int best = 0;
    for (size_t i = 1; i < scores.size(); ++i) {
      if (scores[i] > scores[static_cast<size_t>(best)]) best = static_cast<int>(i);
    }
    sel.push_back(best);
  }
  return sel;
}

namespace detail {

template <typename S>
TokenId pick_token(const Mat<S>& logits, long row, const DecodeConfig& cfg,
                   Rng& rng, double& prob_out) {
  Vec<double> p = row_softmax(logits, row);
  TokenId tok = 0;
  if (cfg.draft_mode == DraftMode::greedy) {
    Eigen::Index idx;
    p.maxCoeff(&idx);
    tok = static_cast<TokenId>(idx);
  } else {
    Vec<double> z = logits.row(row).transpose().template cast<double>() /
                    cfg.temperature;
    const double mx = z.maxCoeff();
    Vec<double> q = (z.array() - mx).exp();
    q /= q.sum();
    const double u = rng.u01();
    double acc = 0.0;
    Eigen::Index idx = q.size() - 1;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      acc += q(i);
      if (u < acc) {
        idx = i;
        break;
      }
    }
    tok = static_cast<TokenId>(idx);
  }
  prob_out = p(tok);  // certainty is always the untempered model probability
  return tok;
}

inline TokenBuffer placeholder_buffer(Pos origin, int count, TokenId mask_id) {
  TokenBuffer b;
  for (int j = 0; j < count; ++j) b.push_back(mask_id, origin + j);
  return b;
}

}  // namespace detail

// Step I: one forward over all masked placeholders (conditioned on the cached
// prompt ++ clean slots) yields a marginal at every masked position. Drafts
// are drawn per position; a slot's certainty score is the probability of the
// most likely token at its first position.
template <typename S>
PlanResult plan(const Model<S>& model, const DecodeState<S>& state,
                const DecodeConfig& cfg, Rng& rng, DecodeTrace* trace = nullptr) {
  if (state.masked.empty()) {
    throw std::invalid_argument("plan: no masked slots");
  }
  TokenBuffer buf;
  for (Pos origin : state.masked) {
    buf.append(detail::placeholder_buffer(origin, cfg.k, model.config().mask_id));
  }
  ForwardResult<S> fr = model.forward(buf, &state.cache);
  if (trace) ++trace->forwards;

  PlanResult out;
  std::vector<double> scores;
  for (size_t i = 0; i < state.masked.size(); ++i) {
    DraftSlot d;
    d.origin = state.masked[i];
    for (int j = 0; j < cfg.k; ++j) {
      const long row = static_cast<long>(i) * cfg.k + j;
      double prob = 0.0;
      d.tokens.push_back(detail::pick_token(fr.logits, row, cfg, rng, prob));
      d.gen_prob.push_back(prob);
      if (j == 0) d.score = row_softmax(fr.logits, row).maxCoeff();
    }
    scores.push_back(d.score);
    out.drafts.push_back(std::move(d));
  }
  out.selected = select_slots(scores, cfg.tau_slot);
  return out;
}

// A slot ready to commit: final tokens plus the key/value states of the pass
// that verified them, so concat-mode commits need no extra forward.
template <typename S>
struct CompletedSlot {
  SlotTokens slot;
  BufferKV<S> kv;
  std::vector<int> forced;        // in-slot indices accepted by the progress rule
  std::vector<int> accept_clock;  // per-token acceptance clock
  std::string path;               // "global" | "iterative"
};

template <typename S>
struct GlobalVerifyResult {
  std::vector<double> probs;  // per concatenated draft token
  int accepted_len = 0;       // longest valid prefix l
  int slots_accepted = 0;     // floor(l / k)
  std::vector<CompletedSlot<S>> accepted;
};

// Step II (1): concatenate the selected drafts in positional order and verify
// them in a single forward pass. A draft token's probability is conditioned on
// prompt ++ clean ++ preceding draft tokens; each slot's first token keeps its
// planning-context probability. Whole slots covered by the valid prefix are
// accepted; otherwise the caller falls back to iterative completion.
template <typename S>
GlobalVerifyResult<S> global_verify(const Model<S>& model,
                                    const DecodeState<S>& state,
                                    const std::vector<DraftSlot>& drafts,
                                    const DecodeConfig& cfg, int clock,
                                    DecodeTrace* trace = nullptr) {
  if (drafts.empty()) {
    throw std::invalid_argument("global_verify: no drafts");
  }
  TokenBuffer buf;
  for (const auto& d : drafts) {
    for (int j = 0; j < cfg.k; ++j) buf.push_back(d.tokens[static_cast<size_t>(j)], d.origin + j);
  }
  ForwardResult<S> fr = model.forward(buf, &state.cache);
  if (trace) ++trace->forwards;

  GlobalVerifyResult<S> out;
  for (size_t s = 0; s < drafts.size(); ++s) {
    for (int j = 0; j < cfg.k; ++j) {
      const long row = static_cast<long>(s) * cfg.k + j;
      if (j == 0) {
        out.probs.push_back(drafts[s].gen_prob[0]);
      } else {
        Vec<double> p = row_softmax(fr.logits, row - 1);
        out.probs.push_back(p(drafts[s].tokens[static_cast<size_t>(j)]));
      }
    }
  }
  out.accepted_len = accepted_prefix_len(out.probs, cfg.tau_token);
  out.slots_accepted = out.accepted_len / cfg.k;
  for (int s = 0; s < out.slots_accepted; ++s) {
    CompletedSlot<S> c;
    c.slot.tokens = drafts[static_cast<size_t>(s)].tokens;
    c.slot.origin = drafts[static_cast<size_t>(s)].origin;
    c.kv = KVCache<S>::slice(fr.kv, static_cast<long>(s) * cfg.k, cfg.k);
    c.accept_clock.assign(static_cast<size_t>(cfg.k), clock);
    c.path = "global";
    out.accepted.push_back(std::move(c));
  }
  return out;
}

// Step II (2): refine each selected slot independently (one logical batched
// forward per round, no cross-slot conditioning). Each round verifies the
// longest in-slot prefix above tau_token, then re-masks and re-predicts the
// suffix. A round that fails to extend a slot force-accepts one token, so a
// slot finishes within k rounds.
template <typename S>
std::vector<CompletedSlot<S>> complete_parallel(
    const Model<S>& model, const DecodeState<S>& state,
    const std::vector<DraftSlot>& drafts, const DecodeConfig& cfg, Rng& rng,
    int clock, int* rounds_out = nullptr, DecodeTrace* trace = nullptr) {
  const TokenId mask_id = model.config().mask_id;
  const int n = static_cast<int>(drafts.size());

  struct Work {
    DraftSlot d;
    int l = 0;  // accepted prefix length, sticky
    std::vector<int> forced;
    std::vector<int> accept_clock;
    BufferKV<S> kv;
    bool done = false;
  };
  std::vector<Work> work;
  for (const auto& d : drafts) {
    Work w;
    w.d = d;
    w.accept_clock.assign(static_cast<size_t>(cfg.k), 0);
    work.push_back(std::move(w));
  }

  int round = 0;
  while (true) {
    ++round;
    // Verification pass over the current draft tokens of unfinished slots.
    std::vector<int> idx;
    std::vector<TokenBuffer> bufs;
    for (int i = 0; i < n; ++i) {
      if (work[static_cast<size_t>(i)].done) continue;
      idx.push_back(i);
      TokenBuffer b;
      for (int j = 0; j < cfg.k; ++j) {
        b.push_back(work[static_cast<size_t>(i)].d.tokens[static_cast<size_t>(j)],
                    work[static_cast<size_t>(i)].d.origin + j);
      }
      bufs.push_back(std::move(b));
    }
    std::vector<ForwardResult<S>> frs = model.forward_batch(bufs, &state.cache);
    if (trace) ++trace->forwards;

    bool all_done = true;
    for (size_t bi = 0; bi < idx.size(); ++bi) {
      Work& w = work[static_cast<size_t>(idx[bi])];
      const int old_l = w.l;
      for (int j = w.l; j < cfg.k; ++j) {
        const double prob =
            j == 0 ? w.d.gen_prob[0]
                   : row_softmax(frs[bi].logits, j - 1)(
                         w.d.tokens[static_cast<size_t>(j)]);
        if (prob > cfg.tau_token) {
          w.accept_clock[static_cast<size_t>(j)] = clock + round;
          ++w.l;
        } else {
          break;
        }
      }
      if (w.l == old_l) {  // progress rule: accept one token regardless
        w.forced.push_back(w.l);
        w.accept_clock[static_cast<size_t>(w.l)] = clock + round;
        ++w.l;
      }
      if (w.l == cfg.k) {
        w.done = true;
        w.kv = std::move(frs[bi].kv);
      } else {
        all_done = false;
      }
    }
    if (all_done) break;

    // Prediction pass: keep the accepted prefix, re-mask and re-draw the rest.
    std::vector<int> pidx;
    std::vector<TokenBuffer> pbufs;
    for (int i = 0; i < n; ++i) {
      Work& w = work[static_cast<size_t>(i)];
      if (w.done) continue;
      pidx.push_back(i);
      TokenBuffer b;
      for (int j = 0; j < cfg.k; ++j) {
        const TokenId tok =
            j < w.l ? w.d.tokens[static_cast<size_t>(j)] : mask_id;
        b.push_back(tok, w.d.origin + j);
      }
      pbufs.push_back(std::move(b));
    }
    std::vector<ForwardResult<S>> prs = model.forward_batch(pbufs, &state.cache);
    if (trace) ++trace->forwards;
    for (size_t bi = 0; bi < pidx.size(); ++bi) {
      Work& w = work[static_cast<size_t>(pidx[bi])];
      for (int j = w.l; j < cfg.k; ++j) {
        double prob = 0.0;
        w.d.tokens[static_cast<size_t>(j)] =
            detail::pick_token(prs[bi].logits, j, cfg, rng, prob);
        w.d.gen_prob[static_cast<size_t>(j)] = prob;
      }
    }
  }

  if (rounds_out) *rounds_out = round;
  std::vector<CompletedSlot<S>> out;
  for (auto& w : work) {
    CompletedSlot<S> c;
    c.slot.tokens = std::move(w.d.tokens);
    c.slot.origin = w.d.origin;
    c.kv = std::move(w.kv);
    c.forced = std::move(w.forced);
    c.accept_clock = std::move(w.accept_clock);
    c.path = "iterative";
    out.push_back(std::move(c));
  }
  return out;
}

// Moves completed slots from masked to clean, in ascending positional order
// among themselves. concat mode appends the key/value states saved from the
// verification pass; recompute mode refreshes them with one extra forward over
// the committed tokens so later slots are conditioned on earlier ones.
template <typename S>
void commit(const Model<S>& model, DecodeState<S>& state,
            std::vector<CompletedSlot<S>> completed, const DecodeConfig& cfg,
            int cycle, DecodeTrace* trace = nullptr) {
  std::sort(completed.begin(), completed.end(),
            [](const CompletedSlot<S>& a, const CompletedSlot<S>& b) {
              return a.slot.origin < b.slot.origin;
            });

  for (const auto& c : completed) {
    for (Pos p : state.cache.positions) {
      if (p >= c.slot.origin && p < c.slot.origin + cfg.k) {
        throw std::runtime_error("commit: slot position already cached");
      }
    }
  }

  if (cfg.cache_mode == CacheMode::recompute) {
    TokenBuffer buf;
    for (const auto& c : completed) {
      for (int j = 0; j < cfg.k; ++j) {
        buf.push_back(c.slot.tokens[static_cast<size_t>(j)], c.slot.origin + j);
      }
    }
    ForwardResult<S> fr = model.forward(buf, &state.cache);
    if (trace) ++trace->forwards;
    state.cache.append(fr.kv, buf.position_ids);
  } else {
    for (const auto& c : completed) {
      state.cache.append(c.kv, iota_positions(c.slot.origin, cfg.k));
    }
  }

  for (auto& c : completed) {
    state.masked.erase(
        std::remove(state.masked.begin(), state.masked.end(), c.slot.origin),
        state.masked.end());
    for (int j = 0; j < cfg.k; ++j) {
      if (c.slot.tokens[static_cast<size_t>(j)] == model.config().eos_id) {
        const Pos p = c.slot.origin + j;
        if (!state.eos_pos || p < *state.eos_pos) state.eos_pos = p;
        break;
      }
    }
    if (trace) {
      DecodeTrace::SlotRecord sr;
      sr.origin = c.slot.origin;
      sr.iteration = cycle;
      sr.path = c.path;
      sr.forced = c.forced;
      trace->slots.push_back(std::move(sr));
      for (int j = 0; j < cfg.k; ++j) {
        trace->tokens.push_back(
            {c.slot.origin + j, c.accept_clock[static_cast<size_t>(j)]});
      }
      trace->tokens_total += cfg.k;
    }
    state.clean.push_back(std::move(c.slot));
  }
}

// Drops all wholly-later masked slots once an EOS has been committed; tokens
// after the EOS never get decoded.
template <typename S>
void truncate_on_eos(DecodeState<S>& state) {
  if (!state.eos_pos) return;
  const Pos eos = *state.eos_pos;
  state.masked.erase(
      std::remove_if(state.masked.begin(), state.masked.end(),
                     [eos](Pos origin) { return origin > eos; }),
      state.masked.end());
}

struct DecodeResult {
  std::vector<TokenId> response;  // ends at the first EOS when one was emitted
  bool truncated = false;         // max_len exhausted without EOS
  DecodeTrace trace;
};

template <typename S>
DecodeState<S> init_decode_state(const Model<S>& model,
                                 const std::vector<TokenId>& prompt,
                                 DecodeTrace* trace = nullptr) {
  if (prompt.empty()) throw std::invalid_argument("decode: empty prompt");
  DecodeState<S> state;
  state.prompt = TokenBuffer(prompt, iota_positions(0, static_cast<int>(prompt.size())));
  state.cache = KVCache<S>::empty(model.config());
  ForwardResult<S> fr = model.forward(state.prompt);
  if (trace) ++trace->forwards;
  state.cache.append(fr.kv, state.prompt.position_ids);
  return state;
}

template <typename S>
void start_block(DecodeState<S>& state, Pos block_start, int num_slots, int k) {
  state.masked.clear();
  for (int s = 0; s < num_slots; ++s) state.masked.push_back(block_start + s * k);
  state.block_slots = num_slots;
}

// Block-serial plan-and-infill decoding. Within a block: plan, then either
// wholesale global acceptance or parallel iterative completion, then commit
// and EOS truncation, until the block has no masked slots left.
template <typename S>
DecodeResult decode(const Model<S>& model, const std::vector<TokenId>& prompt,
                    const DecodeConfig& cfg) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  if (static_cast<int>(prompt.size()) + cfg.max_len > mc.max_position) {
    throw std::out_of_range("decode: prompt + max_len exceeds max_position");
  }

  DecodeResult result;
  DecodeTrace& trace = result.trace;
  Rng rng(cfg.seed);

  DecodeState<S> state = init_decode_state(model, prompt, &trace);
  const Pos resp_start = static_cast<Pos>(prompt.size());
  const int K = cfg.b / cfg.k;

  int cycle = 0;
  int clock = 0;
  for (int block = 0; block * cfg.b < cfg.max_len && !state.eos_pos; ++block) {
    start_block(state, resp_start + block * cfg.b, K, cfg.k);
    truncate_on_eos(state);
    while (!state.masked.empty()) {
      ++cycle;
      ++clock;
      PlanResult pr = plan(model, state, cfg, rng, &trace);
      std::vector<DraftSlot> selected;
      for (int i : pr.selected) selected.push_back(pr.drafts[static_cast<size_t>(i)]);

      GlobalVerifyResult<S> gv =
          global_verify(model, state, selected, cfg, clock, &trace);
      if (gv.slots_accepted >= 1) {
        commit(model, state, std::move(gv.accepted), cfg, cycle, &trace);
      } else {
        int rounds = 0;
        std::vector<CompletedSlot<S>> done = complete_parallel(
            model, state, selected, cfg, rng, clock, &rounds, &trace);
        clock += rounds;
        commit(model, state, std::move(done), cfg, cycle, &trace);
      }
      truncate_on_eos(state);
    }
  }

  std::vector<TokenId> restored = restore_order(state.clean);
  result.response = finalize_response(std::move(restored), mc.eos_id, mc.pad_id);
  result.truncated = !state.eos_pos.has_value();
  return result;
}

// Plain greedy autoregressive decoding: one token per step, each drawn from
// the model's prediction at the next position given all committed tokens.
// decode() with k = b = 1 must match this token-for-token.
template <typename S>
std::vector<TokenId> greedy_ar_decode(const Model<S>& model,
                                      const std::vector<TokenId>& prompt,
                                      int max_len) {
  if (prompt.empty()) throw std::invalid_argument("greedy_ar_decode: empty prompt");
  const ModelConfig& mc = model.config();
  KVCache<S> cache = KVCache<S>::empty(mc);
  TokenBuffer pb(prompt, iota_positions(0, static_cast<int>(prompt.size())));
  ForwardResult<S> fr = model.forward(pb);
  cache.append(fr.kv, pb.position_ids);

  std::vector<TokenId> out;
  const Pos start = static_cast<Pos>(prompt.size());
  for (int i = 0; i < max_len; ++i) {
    const Pos pos = start + i;
    TokenBuffer query({mc.mask_id}, {pos});
    ForwardResult<S> qr = model.forward(query, &cache);
    Eigen::Index idx;
    row_softmax(qr.logits, 0).maxCoeff(&idx);
    const TokenId tok = static_cast<TokenId>(idx);
    TokenBuffer real({tok}, {pos});
    ForwardResult<S> rr = model.forward(real, &cache);
    cache.append(rr.kv, real.position_ids);
    out.push_back(tok);
    if (tok == mc.eos_id) break;
  }
  return out;
}

}  // namespace planfill

#endif  // PLANFILL_DECODER_HPP
