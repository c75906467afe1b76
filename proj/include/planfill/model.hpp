#ifndef PLANFILL_MODEL_HPP
#define PLANFILL_MODEL_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "planfill/rng.hpp"
#include "planfill/types.hpp"

namespace planfill {

constexpr double kRmsEps = 1e-5;

template <typename S>
struct LayerParams {
  Vec<S> attn_norm;  // [d]
  Mat<S> wq, wk, wv, wo;  // [d, d]
  Vec<S> mlp_norm;   // [d]
  Mat<S> w1;         // [d, d_ff]
  Mat<S> w2;         // [d_ff, d]
};

template <typename S>
struct Parameters {
  Mat<S> embed;  // [vocab, d]
  std::vector<LayerParams<S>> layers;
  Vec<S> final_norm;  // [d]
  Mat<S> head;        // [d, vocab]
};

// A mutable view over one named parameter tensor; rank distinguishes vectors
// from matrices in the checkpoint format.
template <typename S>
struct TensorRef {
  std::string name;
  S* data;
  long rows;
  long cols;
  int rank;
};

template <typename S, typename Fn>
void for_each_tensor(Parameters<S>& p, Fn&& fn) {
  auto mat = [&](const std::string& name, Mat<S>& m) {
    fn(TensorRef<S>{name, m.data(), m.rows(), m.cols(), 2});
  };
  auto vec = [&](const std::string& name, Vec<S>& v) {
    fn(TensorRef<S>{name, v.data(), v.rows(), 1, 1});
  };
  mat("embed", p.embed);
  for (size_t l = 0; l < p.layers.size(); ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    vec(pre + "attn_norm", p.layers[l].attn_norm);
    mat(pre + "wq", p.layers[l].wq);
    mat(pre + "wk", p.layers[l].wk);
    mat(pre + "wv", p.layers[l].wv);
    mat(pre + "wo", p.layers[l].wo);
    vec(pre + "mlp_norm", p.layers[l].mlp_norm);
    mat(pre + "w1", p.layers[l].w1);
    mat(pre + "w2", p.layers[l].w2);
  }
  vec("final_norm", p.final_norm);
  mat("head", p.head);
}

template <typename S>
Parameters<S> make_parameters(const ModelConfig& cfg) {
  Parameters<S> p;
  p.embed = Mat<S>::Zero(cfg.vocab_size, cfg.d_model);
  p.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& l : p.layers) {
    l.attn_norm = Vec<S>::Ones(cfg.d_model);
    l.wq = Mat<S>::Zero(cfg.d_model, cfg.d_model);
    l.wk = Mat<S>::Zero(cfg.d_model, cfg.d_model);
    l.wv = Mat<S>::Zero(cfg.d_model, cfg.d_model);
    l.wo = Mat<S>::Zero(cfg.d_model, cfg.d_model);
    l.mlp_norm = Vec<S>::Ones(cfg.d_model);
    l.w1 = Mat<S>::Zero(cfg.d_model, cfg.d_ff);
    l.w2 = Mat<S>::Zero(cfg.d_ff, cfg.d_model);
  }
  p.final_norm = Vec<S>::Ones(cfg.d_model);
  p.head = Mat<S>::Zero(cfg.d_model, cfg.vocab_size);
  return p;
}

template <typename S>
Parameters<S> zero_like(Parameters<S>& p) {
  Parameters<S> z = p;
  for_each_tensor(z, [](TensorRef<S> t) {
    std::fill(t.data, t.data + t.rows * t.cols, S(0));
  });
  return z;
}

template <typename S>
void init_parameters(Parameters<S>& p, Rng& rng, double std_dev = 0.02) {
  for_each_tensor(p, [&](TensorRef<S> t) {
    if (t.rank == 1) return;  // norm gains stay at 1
    for (long i = 0; i < t.rows * t.cols; ++i) {
      t.data[i] = static_cast<S>(rng.normal() * std_dev);
    }
  });
}

// Per-layer key/value states of one forward pass, kept so callers can decide
// whether the pass becomes part of a cache (commit) or is discarded (planning).
template <typename S>
struct BufferKV {
  struct LayerKV {
    Mat<S> k, v;  // [len, d], keys post-rotation
  };
  std::vector<LayerKV> layers;
};

// Append-only key/value cache over the physical buffer order. Entries align
// index-for-index with `positions` across all layers.
template <typename S>
struct KVCache {
  std::vector<typename BufferKV<S>::LayerKV> layers;
  std::vector<Pos> positions;

  static KVCache empty(const ModelConfig& cfg) {
    KVCache c;
    c.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& l : c.layers) {
      l.k = Mat<S>(0, cfg.d_model);
      l.v = Mat<S>(0, cfg.d_model);
    }
    return c;
  }

  int len() const { return static_cast<int>(positions.size()); }

  void append(const BufferKV<S>& kv, const std::vector<Pos>& pos) {
    if (kv.layers.size() != layers.size()) {
      throw std::invalid_argument("KVCache::append: layer count mismatch");
    }
    const long old = static_cast<long>(positions.size());
    const long add = static_cast<long>(pos.size());
    for (size_t l = 0; l < layers.size(); ++l) {
      if (kv.layers[l].k.rows() != add) {
        throw std::invalid_argument("KVCache::append: row count mismatch");
      }
      layers[l].k.conservativeResize(old + add, Eigen::NoChange);
      layers[l].v.conservativeResize(old + add, Eigen::NoChange);
      layers[l].k.bottomRows(add) = kv.layers[l].k;
      layers[l].v.bottomRows(add) = kv.layers[l].v;
    }
    positions.insert(positions.end(), pos.begin(), pos.end());
  }

  // Rows [first, first+count) of an existing BufferKV, e.g. the accepted
  // prefix of a verification pass.
  static BufferKV<S> slice(const BufferKV<S>& kv, long first, long count) {
    BufferKV<S> out;
    out.layers.resize(kv.layers.size());
    for (size_t l = 0; l < kv.layers.size(); ++l) {
      out.layers[l].k = kv.layers[l].k.middleRows(first, count);
      out.layers[l].v = kv.layers[l].v.middleRows(first, count);
    }
    return out;
  }
};

template <typename S>
struct ForwardResult {
  Mat<S> logits;   // [len, vocab]
  BufferKV<S> kv;  // this buffer's key/value states
};

// Saved activations of one uncached forward, consumed by backward().
template <typename S>
struct Tape {
  struct Layer {
    Mat<S> x_in, h_att, q, k, v, ctx, x_mid, h_mlp, u, a;
    std::vector<Mat<S>> probs;  // per head, [len, len]
  };
  Mat<S> x0;  // embeddings
  std::vector<Layer> layers;
  Mat<S> x_final;  // residual stream after the last layer
  Mat<S> f;        // final-norm output
};

namespace detail {

// y = x * w / rms(x), rowwise.
template <typename S>
Mat<S> rmsnorm(const Mat<S>& x, const Vec<S>& w) {
  Mat<S> y(x.rows(), x.cols());
  const S inv_d = S(1) / static_cast<S>(x.cols());
  for (long i = 0; i < x.rows(); ++i) {
    const S ms = x.row(i).squaredNorm() * inv_d + static_cast<S>(kRmsEps);
    const S r = S(1) / std::sqrt(ms);
    y.row(i) = x.row(i).cwiseProduct(w.transpose()) * r;
  }
  return y;
}

template <typename S>
void rmsnorm_backward(const Mat<S>& x, const Vec<S>& w, const Mat<S>& dy,
                      Mat<S>& dx, Vec<S>& dw) {
  const long d = x.cols();
  const S inv_d = S(1) / static_cast<S>(d);
  for (long i = 0; i < x.rows(); ++i) {
    const S ms = x.row(i).squaredNorm() * inv_d + static_cast<S>(kRmsEps);
    const S r = S(1) / std::sqrt(ms);
    auto g = dy.row(i).cwiseProduct(w.transpose());
    const S dot = g.cwiseProduct(x.row(i)).sum();
    dx.row(i) = g * r - x.row(i) * (r * r * r * dot * inv_d);
    dw += (dy.row(i).cwiseProduct(x.row(i)) * r).transpose();
  }
}

// In-place rotary rotation of q/k rows; sign = -1 reverses (backward).
template <typename S>
void apply_rope(Mat<S>& m, const std::vector<Pos>& pos, int n_heads,
                double rope_base, int sign) {
  const int hd = static_cast<int>(m.cols()) / n_heads;
  const int half = hd / 2;
  std::vector<double> inv_freq(static_cast<size_t>(half));
  for (int i = 0; i < half; ++i) {
    inv_freq[static_cast<size_t>(i)] =
        std::pow(rope_base, -2.0 * i / static_cast<double>(hd));
  }
  for (long row = 0; row < m.rows(); ++row) {
    const double p = static_cast<double>(pos[static_cast<size_t>(row)]);
    for (int i = 0; i < half; ++i) {
      const double angle = p * inv_freq[static_cast<size_t>(i)];
      const S c = static_cast<S>(std::cos(angle));
      const S s = static_cast<S>(std::sin(angle)) * static_cast<S>(sign);
      for (int h = 0; h < n_heads; ++h) {
        const int j = h * hd + 2 * i;
        const S x = m(row, j);
        const S y = m(row, j + 1);
        m(row, j) = x * c - y * s;
        m(row, j + 1) = x * s + y * c;
      }
    }
  }
}

template <typename S>
S silu(S x) {
  return x / (S(1) + std::exp(-x));
}

template <typename S>
S silu_grad(S x) {
  const S sig = S(1) / (S(1) + std::exp(-x));
  return sig * (S(1) + x * (S(1) - sig));
}

}  // namespace detail

// Softmax of one logits row, evaluated in double for stable probabilities.
template <typename S>
Vec<double> row_softmax(const Mat<S>& logits, long row) {
  Vec<double> p = logits.row(row).transpose().template cast<double>();
  const double mx = p.maxCoeff();
  p = (p.array() - mx).exp();
  p /= p.sum();
  return p;
}

// Decoder-only transformer over explicit position IDs: causal attention in
// physical buffer order, rotary embeddings computed from the position IDs, and
// exact incremental KV caching. An instance is confined to one thread during a
// forward/training step; const forwards may share parameters across threads.
template <typename S>
class Model {
 public:
  Model(ModelConfig cfg, Parameters<S> params)
      : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
  }

  static Model randomized(const ModelConfig& cfg, Rng& rng, double std_dev = 0.02) {
    auto p = make_parameters<S>(cfg);
    init_parameters(p, rng, std_dev);
    return Model(cfg, std::move(p));
  }

  const ModelConfig& config() const { return cfg_; }
  Parameters<S>& parameters() { return params_; }
  const Parameters<S>& parameters() const { return params_; }

  long forward_count() const { return forward_calls_.load(); }
  void reset_forward_count() const { forward_calls_.store(0); }

  ForwardResult<S> forward(const TokenBuffer& buffer,
                           const KVCache<S>* cache = nullptr) const {
    ++forward_calls_;
    return run(buffer, cache, nullptr);
  }

  // One logical forward over a batch of buffers that share a read-only cache.
  // Items do not attend to each other; the pass counts once toward the
  // forward-pass budget, mirroring batched execution.
  std::vector<ForwardResult<S>> forward_batch(
      const std::vector<TokenBuffer>& buffers, const KVCache<S>* cache) const {
    ++forward_calls_;
    std::vector<ForwardResult<S>> out;
    out.reserve(buffers.size());
    for (const auto& b : buffers) out.push_back(run(b, cache, nullptr));
    return out;
  }

  ForwardResult<S> forward_tape(const TokenBuffer& buffer, Tape<S>& tape) const {
    ++forward_calls_;
    return run(buffer, nullptr, &tape);
  }

  // Accumulates parameter gradients for dL/dlogits into `grads`.
  void backward(const TokenBuffer& buffer, const Tape<S>& tape,
                const Mat<S>& dlogits, Parameters<S>& grads) const {
    const long L = buffer.size();
    const int nh = cfg_.n_heads;
    const int hd = cfg_.head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(hd));

    grads.head += tape.f.transpose() * dlogits;
    Mat<S> df = dlogits * params_.head.transpose();

    Mat<S> dx(L, cfg_.d_model);
    detail::rmsnorm_backward(tape.x_final, params_.final_norm, df, dx,
                             grads.final_norm);

    Mat<S> dnorm(L, cfg_.d_model);
    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
      const auto& t = tape.layers[static_cast<size_t>(l)];
      const auto& w = params_.layers[static_cast<size_t>(l)];
      auto& g = grads.layers[static_cast<size_t>(l)];

      // MLP: x_out = x_mid + silu(h_mlp * w1) * w2
      Mat<S> da = dx * w.w2.transpose();
      g.w2 += t.a.transpose() * dx;
      Mat<S> du = da.binaryExpr(t.u, [](S grad, S u) {
        return grad * detail::silu_grad(u);
      });
      g.w1 += t.h_mlp.transpose() * du;
      Mat<S> dh_mlp = du * w.w1.transpose();
      detail::rmsnorm_backward(t.x_mid, w.mlp_norm, dh_mlp, dnorm, g.mlp_norm);
      Mat<S> dx_mid = dx + dnorm;  // residual + norm path

      // Attention: x_mid = x_in + ctx * wo
      Mat<S> dctx = dx_mid * w.wo.transpose();
      g.wo += t.ctx.transpose() * dx_mid;

      Mat<S> dq = Mat<S>::Zero(L, cfg_.d_model);
      Mat<S> dk = Mat<S>::Zero(L, cfg_.d_model);
      Mat<S> dv = Mat<S>::Zero(L, cfg_.d_model);
      for (int h = 0; h < nh; ++h) {
        const auto& P = t.probs[static_cast<size_t>(h)];
        auto dctx_h = dctx.middleCols(h * hd, hd);
        auto k_h = t.k.middleCols(h * hd, hd);
        auto v_h = t.v.middleCols(h * hd, hd);
        auto q_h = t.q.middleCols(h * hd, hd);
        Mat<S> dP = dctx_h * v_h.transpose();
        dv.middleCols(h * hd, hd) += P.transpose() * dctx_h;
        Vec<S> rowdot = (dP.array() * P.array()).rowwise().sum().matrix();
        Mat<S> dS =
            (P.array() * (dP.array().colwise() - rowdot.array())).matrix();
        dq.middleCols(h * hd, hd) += dS * k_h * scale;
        dk.middleCols(h * hd, hd) += dS.transpose() * q_h * scale;
      }
      detail::apply_rope(dq, buffer.position_ids, nh, cfg_.rope_base, -1);
      detail::apply_rope(dk, buffer.position_ids, nh, cfg_.rope_base, -1);

      g.wq += t.h_att.transpose() * dq;
      g.wk += t.h_att.transpose() * dk;
      g.wv += t.h_att.transpose() * dv;
      Mat<S> dh_att = dq * w.wq.transpose() + dk * w.wk.transpose() +
                      dv * w.wv.transpose();

      detail::rmsnorm_backward(t.x_in, w.attn_norm, dh_att, dnorm, g.attn_norm);
      dx = dx_mid + dnorm;
    }

    for (long i = 0; i < L; ++i) {
      grads.embed.row(buffer.tokens[static_cast<size_t>(i)]) += dx.row(i);
    }
  }

 private:

  ForwardResult<S> run(const TokenBuffer& buffer, const KVCache<S>* cache,
                       Tape<S>* tape) const {
    buffer.validate(cfg_);
    if (tape != nullptr && cache != nullptr) {
      throw std::invalid_argument("Model: gradient tape unsupported with a cache");
    }
    const long L = buffer.size();
    const long C = cache ? cache->len() : 0;
    const long T = C + L;
    const int nh = cfg_.n_heads;
    const int hd = cfg_.head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(hd));

    if (cache) {
      std::unordered_set<Pos> seen(cache->positions.begin(), cache->positions.end());
      for (Pos p : buffer.position_ids) {
        if (!seen.insert(p).second) {
          throw std::invalid_argument("Model: buffer position collides with cache");
        }
      }
    }

    Mat<S> x(L, cfg_.d_model);
    for (long i = 0; i < L; ++i) {
      x.row(i) = params_.embed.row(buffer.tokens[static_cast<size_t>(i)]);
    }
    if (tape) {
      tape->x0 = x;
      tape->layers.assign(static_cast<size_t>(cfg_.n_layers), {});
    }

    ForwardResult<S> out;
    out.kv.layers.resize(static_cast<size_t>(cfg_.n_layers));

    for (int l = 0; l < cfg_.n_layers; ++l) {
      const auto& w = params_.layers[static_cast<size_t>(l)];
      Mat<S> h = detail::rmsnorm(x, w.attn_norm);
      Mat<S> q = h * w.wq;
      Mat<S> k = h * w.wk;
      Mat<S> v = h * w.wv;
      detail::apply_rope(q, buffer.position_ids, nh, cfg_.rope_base, +1);
      detail::apply_rope(k, buffer.position_ids, nh, cfg_.rope_base, +1);

      out.kv.layers[static_cast<size_t>(l)].k = k;
      out.kv.layers[static_cast<size_t>(l)].v = v;

      // Keys/values seen by the queries: cached entries then this buffer.
      Mat<S> k_all(T, cfg_.d_model);
      Mat<S> v_all(T, cfg_.d_model);
      if (C > 0) {
        k_all.topRows(C) = cache->layers[static_cast<size_t>(l)].k;
        v_all.topRows(C) = cache->layers[static_cast<size_t>(l)].v;
      }
      k_all.bottomRows(L) = k;
      v_all.bottomRows(L) = v;

      Mat<S> ctx(L, cfg_.d_model);
      for (int hI = 0; hI < nh; ++hI) {
        auto q_h = q.middleCols(hI * hd, hd);
        auto k_h = k_all.middleCols(hI * hd, hd);
        auto v_h = v_all.middleCols(hI * hd, hd);
        Mat<S> scores = q_h * k_h.transpose() * scale;  // [L, T]
        const S neg_inf = -std::numeric_limits<S>::infinity();
        for (long i = 0; i < L; ++i) {
          for (long j = C + i + 1; j < T; ++j) scores(i, j) = neg_inf;
        }
        // rowwise softmax
        for (long i = 0; i < L; ++i) {
          const S mx = scores.row(i).maxCoeff();
          scores.row(i) = (scores.row(i).array() - mx).exp().matrix();
          scores.row(i) /= scores.row(i).sum();
        }
        ctx.middleCols(hI * hd, hd) = scores * v_h;
        if (tape) tape->layers[static_cast<size_t>(l)].probs.push_back(std::move(scores));
      }

      Mat<S> x_mid = x + ctx * w.wo;
      Mat<S> h2 = detail::rmsnorm(x_mid, w.mlp_norm);
      Mat<S> u = h2 * w.w1;
      Mat<S> a = u.unaryExpr([](S t) { return detail::silu(t); });
      Mat<S> x_out = x_mid + a * w.w2;

      if (tape) {
        auto& tl = tape->layers[static_cast<size_t>(l)];
        tl.x_in = std::move(x);
        tl.h_att = std::move(h);
        tl.q = std::move(q);
        tl.k = std::move(k);
        tl.v = std::move(v);
        tl.ctx = std::move(ctx);
        tl.x_mid = std::move(x_mid);
        tl.h_mlp = std::move(h2);
        tl.u = std::move(u);
        tl.a = std::move(a);
      }
      x = std::move(x_out);
    }

    if (tape) tape->x_final = x;
    Mat<S> f = detail::rmsnorm(x, params_.final_norm);
    out.logits = f * params_.head;
    if (tape) tape->f = std::move(f);
    return out;
  }

  ModelConfig cfg_;
  Parameters<S> params_;
  mutable std::atomic<long> forward_calls_{0};
};

}  // namespace planfill

#endif  // PLANFILL_MODEL_HPP
