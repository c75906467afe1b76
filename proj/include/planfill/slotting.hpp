#ifndef PLANFILL_SLOTTING_HPP
#define PLANFILL_SLOTTING_HPP

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "planfill/rng.hpp"
#include "planfill/types.hpp"

namespace planfill {

// A response cut into K consecutive slots of exactly k tokens; the final slot
// is padded with pad_id when k does not divide the response length.
// origin_positions are response-relative indices of each slot's first token.
struct SlotPartition {
  int k = 0;
  std::vector<std::vector<TokenId>> slots;
  int pad_count = 0;
  std::vector<int> origin_positions;

  int num_slots() const { return static_cast<int>(slots.size()); }
};

inline SlotPartition partition(const std::vector<TokenId>& response, int k,
                               TokenId pad_id) {
  if (k <= 0) throw std::invalid_argument("partition: k must be >= 1");
  if (response.empty()) throw std::invalid_argument("partition: empty response");
  SlotPartition p;
  p.k = k;
  const int len = static_cast<int>(response.size());
  const int num = (len + k - 1) / k;
  p.pad_count = num * k - len;
  for (int s = 0; s < num; ++s) {
    std::vector<TokenId> slot(static_cast<size_t>(k), pad_id);
    for (int j = 0; j < k; ++j) {
      const int idx = s * k + j;
      if (idx < len) slot[static_cast<size_t>(j)] = response[static_cast<size_t>(idx)];
    }
    p.slots.push_back(std::move(slot));
    p.origin_positions.push_back(s * k);
  }
  return p;
}

// One corrupted training sequence: permuted clean slots followed by masked
// slots in positional order, with ground-truth position IDs throughout, plus
// the per-position loss targets the objective consumes.
struct TrainingInstance {
  struct Slot {
    std::vector<TokenId> tokens;  // ground truth, even for masked slots
    Pos origin = 0;               // absolute position of the first token
  };
  struct LossTerm {
    int query_index;  // physical buffer index whose logits predict `target`
    TokenId target;
  };

  std::vector<TokenId> prompt;
  int k = 0;
  double t = 0.0;
  std::vector<Slot> clean;   // permuted (generation) order
  std::vector<Slot> masked;  // original positional order
  TokenBuffer buffer;        // prompt ++ clean ++ masked placeholders
  std::vector<LossTerm> arm_terms;
  std::vector<LossTerm> mdm_terms;
};

// Three-step corruption: mask floor(t*K) slots chosen uniformly without
// replacement, permute the clean slots uniformly, and reassemble as
// prompt ++ clean ++ masked. Position IDs stay at ground truth. Pad tokens
// never receive loss terms.
inline TrainingInstance corrupt(const std::vector<TokenId>& prompt,
                                const SlotPartition& part, double t, Rng& rng,
                                const ModelConfig& cfg) {
  if (t < 0.0 || t >= 1.0) throw std::invalid_argument("corrupt: t must be in [0,1)");
  const int K = part.num_slots();
  const int n_masked = static_cast<int>(t * K);
  const Pos base = static_cast<Pos>(prompt.size());

  TrainingInstance inst;
  inst.prompt = prompt;
  inst.k = part.k;
  inst.t = t;

  std::vector<int> masked_idx = rng.sample_without_replacement(K, n_masked);
  std::vector<bool> is_masked(static_cast<size_t>(K), false);
  for (int i : masked_idx) is_masked[static_cast<size_t>(i)] = true;

  std::vector<int> clean_idx;
  for (int i = 0; i < K; ++i) {
    if (!is_masked[static_cast<size_t>(i)]) clean_idx.push_back(i);
  }
  rng.shuffle(clean_idx);

  for (int i : clean_idx) {
    inst.clean.push_back({part.slots[static_cast<size_t>(i)],
                          base + part.origin_positions[static_cast<size_t>(i)]});
  }
  for (int i : masked_idx) {  // already increasing
    inst.masked.push_back({part.slots[static_cast<size_t>(i)],
                           base + part.origin_positions[static_cast<size_t>(i)]});
  }

  for (size_t i = 0; i < prompt.size(); ++i) {
    inst.buffer.push_back(prompt[i], static_cast<Pos>(i));
  }
  for (const auto& slot : inst.clean) {
    const int first = inst.buffer.size();
    for (int j = 0; j < part.k; ++j) {
      inst.buffer.push_back(slot.tokens[static_cast<size_t>(j)], slot.origin + j);
    }
    // ARM targets: token j predicted from the physical predecessor, j >= 2.
    for (int j = 1; j < part.k; ++j) {
      const TokenId target = slot.tokens[static_cast<size_t>(j)];
      if (target == cfg.pad_id) continue;
      inst.arm_terms.push_back({first + j - 1, target});
    }
  }
  for (const auto& slot : inst.masked) {
    const int first = inst.buffer.size();
    for (int j = 0; j < part.k; ++j) {
      inst.buffer.push_back(cfg.mask_id, slot.origin + j);
    }
    // MDM targets: the placeholder itself is the query position.
    for (int j = 0; j < part.k; ++j) {
      const TokenId target = slot.tokens[static_cast<size_t>(j)];
      if (target == cfg.pad_id) continue;
      inst.mdm_terms.push_back({first + j, target});
    }
  }
  return inst;
}

// Sorts slots back into positional order and concatenates their tokens.
template <typename SlotT>
std::vector<TokenId> restore_order(std::vector<SlotT> slots) {
  std::sort(slots.begin(), slots.end(),
            [](const SlotT& a, const SlotT& b) { return a.origin < b.origin; });
  for (size_t i = 1; i < slots.size(); ++i) {
    if (slots[i].origin == slots[i - 1].origin) {
      throw std::runtime_error("restore_order: duplicate slot origin");
    }
  }
  std::vector<TokenId> out;
  for (const auto& s : slots) {
    out.insert(out.end(), s.tokens.begin(), s.tokens.end());
  }
  return out;
}

// Final-response cleanup: cut after the first EOS when present, otherwise
// strip trailing pads.
inline std::vector<TokenId> finalize_response(std::vector<TokenId> tokens,
                                              TokenId eos_id, TokenId pad_id) {
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == eos_id) {
      tokens.resize(i + 1);
      return tokens;
    }
  }
  while (!tokens.empty() && tokens.back() == pad_id) tokens.pop_back();
  return tokens;
}

}  // namespace planfill

#endif  // PLANFILL_SLOTTING_HPP
