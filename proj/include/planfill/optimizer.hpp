#ifndef PLANFILL_OPTIMIZER_HPP
#define PLANFILL_OPTIMIZER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "planfill/model.hpp"

namespace planfill {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long warmup_steps = 0;  // linear warmup to lr, then constant
};

// First/second moment accumulators plus the step counter.
template <typename S>
struct OptimizerState {
  Parameters<S> m;
  Parameters<S> v;
  long step = 0;

  static OptimizerState init(const ModelConfig& cfg) {
    OptimizerState st;
    st.m = make_parameters<S>(cfg);
    st.v = make_parameters<S>(cfg);
    // make_parameters sets norm gains to 1; moments start at 0.
    for_each_tensor(st.m, [](TensorRef<S> t) {
      std::fill(t.data, t.data + t.rows * t.cols, S(0));
    });
    for_each_tensor(st.v, [](TensorRef<S> t) {
      std::fill(t.data, t.data + t.rows * t.cols, S(0));
    });
    return st;
  }
};

inline double warmup_lr(const AdamWConfig& cfg, long step) {
  if (cfg.warmup_steps <= 0) return cfg.lr;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  return cfg.lr * std::min(1.0, frac);
}

template <typename S>
void adamw_step(Parameters<S>& params, Parameters<S>& grads,
                OptimizerState<S>& state, const AdamWConfig& cfg) {
  state.step += 1;
  const double lr_t = warmup_lr(cfg, state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  std::vector<TensorRef<S>> pr, gr, mr, vr;
  for_each_tensor(params, [&](TensorRef<S> t) { pr.push_back(t); });
  for_each_tensor(grads, [&](TensorRef<S> t) { gr.push_back(t); });
  for_each_tensor(state.m, [&](TensorRef<S> t) { mr.push_back(t); });
  for_each_tensor(state.v, [&](TensorRef<S> t) { vr.push_back(t); });

  for (size_t i = 0; i < pr.size(); ++i) {
    const long n = pr[i].rows * pr[i].cols;
    for (long j = 0; j < n; ++j) {
      const double g = static_cast<double>(gr[i].data[j]);
      double m = cfg.beta1 * static_cast<double>(mr[i].data[j]) + (1.0 - cfg.beta1) * g;
      double v = cfg.beta2 * static_cast<double>(vr[i].data[j]) + (1.0 - cfg.beta2) * g * g;
      mr[i].data[j] = static_cast<S>(m);
      vr[i].data[j] = static_cast<S>(v);
      const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      const double decayed =
          update + cfg.weight_decay * static_cast<double>(pr[i].data[j]);
      pr[i].data[j] = static_cast<S>(static_cast<double>(pr[i].data[j]) - lr_t * decayed);
    }
  }
}

}  // namespace planfill

#endif  // PLANFILL_OPTIMIZER_HPP
