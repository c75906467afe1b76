#ifndef PLANFILL_PROBE_HPP
#define PLANFILL_PROBE_HPP

#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "planfill/corpus.hpp"
#include "planfill/model.hpp"
#include "planfill/types.hpp"

namespace planfill {

// Jensen-Shannon divergence between two categorical distributions, natural
// log; symmetric, zero iff p = q, at most ln 2.
inline double js_divergence(const Vec<double>& p, const Vec<double>& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("js_divergence: size mismatch");
  }
  double sp = 0.0, sq = 0.0;
  for (long i = 0; i < p.size(); ++i) {
    if (p(i) < 0.0 || q(i) < 0.0) {
      throw std::invalid_argument("js_divergence: negative probability");
    }
    sp += p(i);
    sq += q(i);
  }
  if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6) {
    throw std::invalid_argument("js_divergence: inputs must sum to 1");
  }
  double acc = 0.0;
  for (long i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p(i) + q(i));
    if (p(i) > 0.0) acc += 0.5 * p(i) * std::log(p(i) / m);
    if (q(i) > 0.0) acc += 0.5 * q(i) * std::log(q(i) / m);
  }
  return acc;
}

// Mean JS divergence per signed token distance for one masking ratio t.
// Distances beyond +-16 collapse into the +-17 tail bins.
struct LocalityCurve {
  struct Bin {
    double sum_js = 0.0;
    long n = 0;
    double mean() const { return n > 0 ? sum_js / static_cast<double>(n) : 0.0; }
  };
  double t = 0.0;
  std::map<int, Bin> bins;
};

constexpr int kProbeMaxDistance = 16;

inline int clamp_distance(int d) {
  if (d > kProbeMaxDistance) return kProbeMaxDistance + 1;
  if (d < -kProbeMaxDistance) return -(kProbeMaxDistance + 1);
  return d;
}

// Measures how revealing one ground-truth token moves the prediction at the
// other masked positions. Per sample: token-level Bernoulli(t) masking of the
// response, one masked position j revealed, and the distributions at every
// other masked position compared before/after via two forward passes.
// Parameters and caches are never mutated.
template <typename S>
std::vector<LocalityCurve> dependency_probe(const Model<S>& model,
                                            const std::vector<CorpusSample>& corpus,
                                            const std::vector<double>& t_levels,
                                            int samples, Rng& rng) {
  if (corpus.empty()) throw std::invalid_argument("dependency_probe: empty corpus");
  const ModelConfig& cfg = model.config();

  std::vector<LocalityCurve> curves;
  for (double t : t_levels) {
    LocalityCurve curve;
    curve.t = t;
    for (int s = 0; s < samples; ++s) {
      // Draw until at least one position is masked.
      const CorpusSample* sample = nullptr;
      std::vector<int> masked;
      while (masked.empty()) {
        sample = &corpus[static_cast<size_t>(
            rng.uniform_int(static_cast<int>(corpus.size())))];
        for (size_t i = 0; i < sample->response.size(); ++i) {
          if (rng.u01() < t) masked.push_back(static_cast<int>(i));
        }
      }
      if (masked.size() < 2) continue;  // nothing to pair against the reveal

      const Pos base = static_cast<Pos>(sample->prompt.size());
      const int j = masked[static_cast<size_t>(
          rng.uniform_int(static_cast<int>(masked.size())))];

      std::vector<bool> is_masked(sample->response.size(), false);
      for (int i : masked) is_masked[static_cast<size_t>(i)] = true;

      // prompt ++ clean tokens (positional order) ++ placeholders, with an
      // optional reveal appended at the end of the clean region.
      auto build = [&](bool reveal_j) {
        TokenBuffer buf;
        for (size_t i = 0; i < sample->prompt.size(); ++i) {
          buf.push_back(sample->prompt[i], static_cast<Pos>(i));
        }
        for (size_t i = 0; i < sample->response.size(); ++i) {
          if (!is_masked[i]) buf.push_back(sample->response[i], base + static_cast<Pos>(i));
        }
        if (reveal_j) {
          buf.push_back(sample->response[static_cast<size_t>(j)], base + j);
        }
        std::vector<int> query_rows;  // buffer row per masked position != j
        for (size_t i = 0; i < sample->response.size(); ++i) {
          if (!is_masked[i]) continue;
          if (reveal_j && static_cast<int>(i) == j) continue;
          query_rows.push_back(buf.size());
          buf.push_back(cfg.mask_id, base + static_cast<Pos>(i));
        }
        return std::make_pair(buf, query_rows);
      };

      auto [buf_before, rows_before] = build(false);
      auto [buf_after, rows_after] = build(true);
      ForwardResult<S> before = model.forward(buf_before);
      ForwardResult<S> after = model.forward(buf_after);

      size_t after_idx = 0;
      size_t before_idx = 0;
      for (size_t i = 0; i < sample->response.size(); ++i) {
        if (!is_masked[i]) continue;
        if (static_cast<int>(i) == j) {
          ++before_idx;  // j has a query row only in the pre-reveal pass
          continue;
        }
        const Vec<double> p = row_softmax(before.logits, rows_before[before_idx]);
        const Vec<double> q = row_softmax(after.logits, rows_after[after_idx]);
        const int dist = clamp_distance(static_cast<int>(i) - j);
        auto& bin = curve.bins[dist];
        bin.sum_js += js_divergence(p, q);
        bin.n += 1;
        ++before_idx;
        ++after_idx;
      }
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

inline std::string locality_to_csv(const std::vector<LocalityCurve>& curves) {
  std::string out = "t,signed_distance,mean_js,n\n";
  char line[128];
  for (const auto& c : curves) {
    for (const auto& [dist, bin] : c.bins) {
      std::snprintf(line, sizeof(line), "%.6g,%d,%.12g,%ld\n", c.t, dist,
                    bin.mean(), bin.n);
      out += line;
    }
  }
  return out;
}

// Weighted mean JS over bins selected by |distance|.
inline double mean_js_at(const LocalityCurve& c, int abs_dist_min, int abs_dist_max) {
  double sum = 0.0;
  long n = 0;
  for (const auto& [dist, bin] : c.bins) {
    const int a = std::abs(dist);
    if (a >= abs_dist_min && a <= abs_dist_max) {
      sum += bin.sum_js;
      n += bin.n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace planfill

#endif  // PLANFILL_PROBE_HPP
