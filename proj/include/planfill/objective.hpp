#ifndef PLANFILL_OBJECTIVE_HPP
#define PLANFILL_OBJECTIVE_HPP

#include <cmath>
#include <stdexcept>

#include "planfill/model.hpp"
#include "planfill/slotting.hpp"

namespace planfill {

struct LossBreakdown {
  double arm = 0.0;
  double mdm = 0.0;
  double total = 0.0;
  long n_arm_terms = 0;
  long n_mdm_terms = 0;
};

namespace detail {

// -log softmax(logits_row)[target], evaluated in double.
template <typename S>
double nll_term(const Mat<S>& logits, int row, TokenId target) {
  if (row < 0 || row >= logits.rows()) {
    throw std::invalid_argument("loss: query index outside logits");
  }
  if (target < 0 || target >= logits.cols()) {
    throw std::runtime_error("loss: missing or invalid ground-truth target");
  }
  Vec<double> z = logits.row(row).transpose().template cast<double>();
  const double mx = z.maxCoeff();
  const double lse = std::log((z.array() - mx).exp().sum()) + mx;
  return lse - z(target);
}

template <typename S>
double mean_nll(const Mat<S>& logits, const TrainingInstance& inst,
                const std::vector<TrainingInstance::LossTerm>& terms) {
  if (logits.rows() != inst.buffer.size()) {
    throw std::invalid_argument("loss: logits misaligned with instance buffer");
  }
  if (terms.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& t : terms) acc += nll_term(logits, t.query_index, t.target);
  return acc / static_cast<double>(terms.size());
}

}  // namespace detail

// Next-token loss over the permuted clean slots; slot-initial tokens carry no
// target (their physical predecessor belongs to an unrelated slot). Zero when
// the instance has no clean slots.
template <typename S>
double arm_loss(const Mat<S>& logits, const TrainingInstance& inst) {
  return detail::mean_nll(logits, inst, inst.arm_terms);
}

// Denoising loss over masked slots; each placeholder position predicts its own
// ground-truth token in place. Zero when nothing is masked.
template <typename S>
double mdm_loss(const Mat<S>& logits, const TrainingInstance& inst) {
  return detail::mean_nll(logits, inst, inst.mdm_terms);
}

template <typename S>
double hybrid_loss(const Mat<S>& logits, const TrainingInstance& inst,
                   double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("hybrid_loss: lambda must be >= 0");
  return arm_loss(logits, inst) + lambda * mdm_loss(logits, inst);
}

// Loss plus dL/dlogits for one instance, scaled by `weight` (e.g. 1/batch).
// The lambda=0 case still reports the MDM value but contributes no gradient.
template <typename S>
LossBreakdown hybrid_loss_grad(const Mat<S>& logits, const TrainingInstance& inst,
                               double lambda, double weight, Mat<S>& dlogits) {
  if (lambda < 0.0) throw std::invalid_argument("hybrid_loss: lambda must be >= 0");
  if (dlogits.rows() != logits.rows() || dlogits.cols() != logits.cols()) {
    throw std::invalid_argument("hybrid_loss_grad: dlogits shape mismatch");
  }
  LossBreakdown out;
  out.arm = arm_loss(logits, inst);
  out.mdm = mdm_loss(logits, inst);
  out.total = out.arm + lambda * out.mdm;
  out.n_arm_terms = static_cast<long>(inst.arm_terms.size());
  out.n_mdm_terms = static_cast<long>(inst.mdm_terms.size());

  auto add_grads = [&](const std::vector<TrainingInstance::LossTerm>& terms,
                       double coeff) {
    if (terms.empty() || coeff == 0.0) return;
    const double per_term = coeff / static_cast<double>(terms.size());
    for (const auto& t : terms) {
      Vec<double> p = row_softmax(logits, t.query_index);
      for (long c = 0; c < dlogits.cols(); ++c) {
        dlogits(t.query_index, c) += static_cast<S>(per_term * p(c));
      }
      dlogits(t.query_index, t.target) -= static_cast<S>(per_term);
    }
  };
  add_grads(inst.arm_terms, weight);
  add_grads(inst.mdm_terms, weight * lambda);
  return out;
}

}  // namespace planfill

#endif  // PLANFILL_OBJECTIVE_HPP
