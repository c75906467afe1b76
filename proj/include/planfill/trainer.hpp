#ifndef PLANFILL_TRAINER_HPP
#define PLANFILL_TRAINER_HPP

#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "planfill/corpus.hpp"
#include "planfill/model.hpp"
#include "planfill/objective.hpp"
#include "planfill/optimizer.hpp"
#include "planfill/slotting.hpp"

namespace planfill {

struct TrainConfig {
  long steps = 1000;
  int batch_size = 16;
  double lr = 1e-3;
  long warmup_steps = 50;
  double weight_decay = 0.0;
  double lambda = 1.0;  // MDM loss weight
  std::vector<int> slot_sizes = {4, 8, 16, 32};
  long log_every = 25;
  std::uint64_t seed = 0;
};

struct StepLog {
  long step = 0;
  double arm = 0.0;
  double mdm = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

// One training instance from a corpus sample: the response gets its EOS
// appended, is partitioned at a per-sample slot size drawn from `slot_sizes`
// (capped at the response length), and corrupted at t ~ U(0,1).
inline TrainingInstance make_instance(const CorpusSample& sample, int slot_size,
                                      double t, Rng& rng, const ModelConfig& cfg) {
  std::vector<TokenId> response = sample.response;
  response.push_back(cfg.eos_id);
  const int k = std::min<int>(slot_size, static_cast<int>(response.size()));
  SlotPartition part = partition(response, k, cfg.pad_id);
  return corrupt(sample.prompt, part, t, rng, cfg);
}

// Pads every buffer in the batch to a common length with pad_id; padding rows
// attend like normal tokens but never carry loss terms. Pad positions continue
// past each sample's own range so position IDs stay distinct.
inline void pad_batch(std::vector<TrainingInstance>& batch, const ModelConfig& cfg) {
  int max_len = 0;
  for (const auto& inst : batch) max_len = std::max(max_len, inst.buffer.size());
  for (auto& inst : batch) {
    Pos next = 0;
    for (Pos p : inst.buffer.position_ids) next = std::max(next, p);
    ++next;
    while (inst.buffer.size() < max_len) {
      if (next >= cfg.max_position) {
        throw std::out_of_range("pad_batch: padding exceeds max_position");
      }
      inst.buffer.push_back(cfg.pad_id, next++);
    }
  }
}

// One optimizer step over a padded batch. Returns the batch-mean losses;
// throws on a non-finite loss with the offending step index.
template <typename S>
LossBreakdown train_step(Model<S>& model, std::vector<TrainingInstance>& batch,
                         OptimizerState<S>& opt, const AdamWConfig& ocfg,
                         double lambda) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  pad_batch(batch, model.config());

  Parameters<S> grads = zero_like(model.parameters());
  LossBreakdown agg;
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (auto& inst : batch) {
    Tape<S> tape;
    ForwardResult<S> fr = model.forward_tape(inst.buffer, tape);
    Mat<S> dlogits = Mat<S>::Zero(fr.logits.rows(), fr.logits.cols());
    LossBreakdown lb = hybrid_loss_grad(fr.logits, inst, lambda, weight, dlogits);
    agg.arm += lb.arm * weight;
    agg.mdm += lb.mdm * weight;
    agg.total += lb.total * weight;
    model.backward(inst.buffer, tape, dlogits, grads);
  }
  if (!std::isfinite(agg.total)) {
    throw std::runtime_error("train_step: non-finite loss at step " +
                             std::to_string(opt.step + 1));
  }
  adamw_step(model.parameters(), grads, opt, ocfg);
  return agg;
}

// Full training loop: per step, sample a batch from the corpus, corrupt on the
// fly, and take one optimizer step. Deterministic given the seed.
template <typename S>
std::vector<StepLog> run_training(
    Model<S>& model, OptimizerState<S>& opt,
    const std::vector<CorpusSample>& corpus, const TrainConfig& tcfg,
    const std::function<void(const StepLog&)>& on_log = nullptr) {
  if (corpus.empty()) throw std::invalid_argument("run_training: empty corpus");
  AdamWConfig ocfg;
  ocfg.lr = tcfg.lr;
  ocfg.warmup_steps = tcfg.warmup_steps;
  ocfg.weight_decay = tcfg.weight_decay;

  Rng rng(tcfg.seed);
  std::vector<StepLog> logs;
  for (long step = 1; step <= tcfg.steps; ++step) {
    std::vector<TrainingInstance> batch;
    batch.reserve(static_cast<size_t>(tcfg.batch_size));
    for (int i = 0; i < tcfg.batch_size; ++i) {
      const auto& sample =
          corpus[static_cast<size_t>(rng.uniform_int(static_cast<int>(corpus.size())))];
      const int slot_size = tcfg.slot_sizes[static_cast<size_t>(
          rng.uniform_int(static_cast<int>(tcfg.slot_sizes.size())))];
      const double t = rng.u01();
      batch.push_back(make_instance(sample, slot_size, t, rng, model.config()));
    }
    LossBreakdown lb = train_step(model, batch, opt, ocfg, tcfg.lambda);
    StepLog log{step, lb.arm, lb.mdm, lb.total, warmup_lr(ocfg, opt.step)};
    if (on_log && (step % std::max<long>(1, tcfg.log_every) == 0 || step == tcfg.steps)) {
      on_log(log);
    }
    logs.push_back(log);
  }
  return logs;
}

inline std::string loss_log_to_csv(const std::vector<StepLog>& logs) {
  std::string out = "step,arm,mdm,total,lr\n";
  char line[160];
  for (const auto& l : logs) {
    std::snprintf(line, sizeof(line), "%ld,%.17g,%.17g,%.17g,%.17g\n", l.step,
                  l.arm, l.mdm, l.total, l.lr);
    out += line;
  }
  return out;
}

}  // namespace planfill

#endif  // PLANFILL_TRAINER_HPP
