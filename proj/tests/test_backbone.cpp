#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "planfill/checkpoint.hpp"
#include "planfill/model.hpp"
#include "planfill/objective.hpp"
#include "planfill/optimizer.hpp"
#include "planfill/trainer.hpp"

using namespace planfill;

namespace {

ModelConfig tiny_config(int layers = 2, int d = 32, int heads = 4, int dff = 64,
                        int vocab = 24) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.n_layers = layers;
  cfg.n_heads = heads;
  cfg.d_model = d;
  cfg.d_ff = dff;
  cfg.max_position = 256;
  return cfg;
}

template <typename S>
TokenBuffer random_buffer(const ModelConfig& cfg, Rng& rng, int len,
                          bool shuffled_positions = false) {
  TokenBuffer b;
  std::vector<Pos> pos = iota_positions(0, len);
  if (shuffled_positions) rng.shuffle(pos);
  for (int i = 0; i < len; ++i) {
    b.push_back(static_cast<TokenId>(rng.uniform_int(cfg.vocab_size)),
                pos[static_cast<size_t>(i)]);
  }
  return b;
}

template <typename S>
double max_abs_diff(const Mat<S>& a, const Mat<S>& b) {
  return (a.template cast<double>() - b.template cast<double>()).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_SUITE_BEGIN("backbone");

TEST_CASE("single BOS token forward: shape and finiteness") {
  ModelConfig cfg = tiny_config();
  Rng rng(1);
  auto model = Model<float>::randomized(cfg, rng);
  TokenBuffer buf({cfg.bos_id}, {0});
  auto fr = model.forward(buf);
  CHECK(fr.logits.rows() == 1);
  CHECK(fr.logits.cols() == cfg.vocab_size);
  CHECK(fr.logits.allFinite());
  CHECK(fr.kv.layers.size() == static_cast<size_t>(cfg.n_layers));
}

TEST_CASE("forward input errors") {
  ModelConfig cfg = tiny_config();
  Rng rng(2);
  auto model = Model<float>::randomized(cfg, rng);
  TokenBuffer empty;
  CHECK_THROWS_AS(model.forward(empty), std::invalid_argument);
  TokenBuffer out_of_range({1}, {cfg.max_position});
  CHECK_THROWS_AS(model.forward(out_of_range), std::out_of_range);

  TokenBuffer a({1, 2}, {0, 1});
  auto fr = model.forward(a);
  KVCache<float> cache = KVCache<float>::empty(cfg);
  cache.append(fr.kv, a.position_ids);
  TokenBuffer colliding({3}, {1});
  CHECK_THROWS_AS(model.forward(colliding, &cache), std::invalid_argument);
}

TEST_CASE("cache equivalence: prefix+suffix equals single pass") {
  ModelConfig cfg = tiny_config(3, 48, 4, 96);
  Rng rng(3);
  auto model = Model<float>::randomized(cfg, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const int len = 2 + rng.uniform_int(40);
    TokenBuffer full = random_buffer<float>(cfg, rng, len, trial % 2 == 1);
    auto full_fr = model.forward(full);

    const int split = 1 + rng.uniform_int(len - 1);
    TokenBuffer prefix, suffix;
    for (int i = 0; i < len; ++i) {
      if (i < split) prefix.push_back(full.tokens[i], full.position_ids[i]);
      else suffix.push_back(full.tokens[i], full.position_ids[i]);
    }
    auto pre_fr = model.forward(prefix);
    KVCache<float> cache = KVCache<float>::empty(cfg);
    cache.append(pre_fr.kv, prefix.position_ids);
    auto suf_fr = model.forward(suffix, &cache);

    for (int i = 0; i < suffix.size(); ++i) {
      const double diff =
          (suf_fr.logits.row(i).cast<double>() -
           full_fr.logits.row(split + i).cast<double>()).cwiseAbs().maxCoeff();
      CHECK(diff < 1e-5);
    }
  }
}

TEST_CASE("RoPE translation invariance") {
  ModelConfig cfg = tiny_config();
  Rng rng(4);
  auto model = Model<double>::randomized(cfg, rng);
  TokenBuffer buf = random_buffer<double>(cfg, rng, 24, true);
  auto base = model.forward(buf);

  TokenBuffer shifted = buf;
  for (auto& p : shifted.position_ids) p += 7;
  auto moved = model.forward(shifted);
  CHECK(max_abs_diff(base.logits, moved.logits) < 1e-6);

  // float path stays within looser float tolerance
  Rng rng2(4);
  auto modelf = Model<float>::randomized(cfg, rng2);
  TokenBuffer buff = buf;
  auto basef = modelf.forward(buff);
  TokenBuffer shiftedf = shifted;
  auto movedf = modelf.forward(shiftedf);
  CHECK(max_abs_diff(basef.logits, movedf.logits) < 1e-3);
}

TEST_CASE("causality is exact: perturbing token j leaves earlier logits bitwise unchanged") {
  ModelConfig cfg = tiny_config();
  Rng rng(5);
  auto model = Model<float>::randomized(cfg, rng);
  TokenBuffer buf = random_buffer<float>(cfg, rng, 16);
  auto base = model.forward(buf);
  for (int j = 4; j < 16; j += 5) {
    TokenBuffer mutated = buf;
    mutated.tokens[static_cast<size_t>(j)] =
        (mutated.tokens[static_cast<size_t>(j)] + 1) % cfg.vocab_size;
    auto out = model.forward(mutated);
    for (int i = 0; i < j; ++i) {
      CHECK((out.logits.row(i).array() == base.logits.row(i).array()).all());
    }
  }
}

TEST_CASE("cached entries act as a set: permuting cache rows preserves outputs") {
  ModelConfig cfg = tiny_config();
  Rng rng(6);
  auto model = Model<double>::randomized(cfg, rng);
  TokenBuffer prefix = random_buffer<double>(cfg, rng, 12);
  auto pre = model.forward(prefix);
  KVCache<double> cache = KVCache<double>::empty(cfg);
  cache.append(pre.kv, prefix.position_ids);

  TokenBuffer query({5}, {20});
  auto base = model.forward(query, &cache);

  std::vector<int> perm(12);
  for (int i = 0; i < 12; ++i) perm[static_cast<size_t>(i)] = i;
  rng.shuffle(perm);
  KVCache<double> permuted = KVCache<double>::empty(cfg);
  permuted.positions.resize(12);
  for (size_t l = 0; l < cache.layers.size(); ++l) {
    permuted.layers[l].k.resize(12, cfg.d_model);
    permuted.layers[l].v.resize(12, cfg.d_model);
    for (int i = 0; i < 12; ++i) {
      permuted.layers[l].k.row(i) = cache.layers[l].k.row(perm[static_cast<size_t>(i)]);
      permuted.layers[l].v.row(i) = cache.layers[l].v.row(perm[static_cast<size_t>(i)]);
    }
  }
  for (int i = 0; i < 12; ++i) {
    permuted.positions[static_cast<size_t>(i)] =
        cache.positions[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  }
  auto out = model.forward(query, &permuted);
  CHECK(max_abs_diff(base.logits, out.logits) < 1e-6);
}

TEST_CASE("analytic gradients match central finite differences") {
  ModelConfig cfg = tiny_config(2, 32, 4, 64, 20);
  Rng rng(7);
  auto model = Model<double>::randomized(cfg, rng);

  // A realistic corrupted instance as the loss input.
  std::vector<TokenId> prompt = {cfg.bos_id, 6, 7, 8};
  std::vector<TokenId> response = {9, 10, 11, 12, 13, 14, cfg.eos_id};
  SlotPartition part = partition(response, 3, cfg.pad_id);
  Rng crng(8);
  TrainingInstance inst = corrupt(prompt, part, 0.5, crng, cfg);

  const double lambda = 1.0;
  auto loss_fn = [&]() {
    auto fr = model.forward(inst.buffer);
    return hybrid_loss(fr.logits, inst, lambda);
  };

  Parameters<double> grads = zero_like(model.parameters());
  {
    Tape<double> tape;
    auto fr = model.forward_tape(inst.buffer, tape);
    Mat<double> dlogits = Mat<double>::Zero(fr.logits.rows(), fr.logits.cols());
    hybrid_loss_grad(fr.logits, inst, lambda, 1.0, dlogits);
    model.backward(inst.buffer, tape, dlogits, grads);
  }

  std::vector<TensorRef<double>> prefs, grefs;
  for_each_tensor(model.parameters(), [&](TensorRef<double> t) { prefs.push_back(t); });
  for_each_tensor(grads, [&](TensorRef<double> t) { grefs.push_back(t); });

  Rng pick(9);
  const double eps = 1e-5;
  int checked = 0;
  double worst = 0.0;
  for (int s = 0; s < 200; ++s) {
    const int ti = pick.uniform_int(static_cast<int>(prefs.size()));
    const long n = prefs[static_cast<size_t>(ti)].rows * prefs[static_cast<size_t>(ti)].cols;
    const long j = pick.uniform_int(static_cast<int>(n));
    double* slot = prefs[static_cast<size_t>(ti)].data + j;
    const double orig = *slot;
    *slot = orig + eps;
    const double up = loss_fn();
    *slot = orig - eps;
    const double down = loss_fn();
    *slot = orig;
    const double fd = (up - down) / (2 * eps);
    const double an = grefs[static_cast<size_t>(ti)].data[j];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    const double rel = std::abs(fd - an) / denom;
    worst = std::max(worst, rel);
    ++checked;
  }
  CHECK(checked == 200);
  CHECK(worst < 1e-3);
}

TEST_CASE("train_step basics") {
  ModelConfig cfg = tiny_config();
  Rng rng(10);
  auto model = Model<float>::randomized(cfg, rng);
  OptimizerState<float> opt = OptimizerState<float>::init(cfg);

  std::vector<CorpusSample> corpus = {
      {{cfg.bos_id, 5, 6, 7, 4}, {5, 6, 7}},
      {{cfg.bos_id, 8, 9, 4}, {8, 9}},
  };
  Rng brng(11);
  auto make_batch = [&]() {
    std::vector<TrainingInstance> batch;
    for (const auto& s : corpus) {
      batch.push_back(make_instance(s, 2, 0.4, brng, cfg));
    }
    return batch;
  };

  SUBCASE("zero learning rate leaves parameters unchanged") {
    Parameters<float> before = model.parameters();
    AdamWConfig ocfg;
    ocfg.lr = 0.0;
    auto batch = make_batch();
    train_step(model, batch, opt, ocfg, 1.0);
    std::vector<TensorRef<float>> a, b;
    for_each_tensor(before, [&](TensorRef<float> t) { a.push_back(t); });
    for_each_tensor(model.parameters(), [&](TensorRef<float> t) { b.push_back(t); });
    for (size_t i = 0; i < a.size(); ++i) {
      for (long j = 0; j < a[i].rows * a[i].cols; ++j) {
        CHECK(a[i].data[j] == b[i].data[j]);
      }
    }
  }

  SUBCASE("repeated batch: smoothed loss decreases over 50 steps") {
    AdamWConfig ocfg;
    ocfg.lr = 3e-3;
    ocfg.warmup_steps = 5;
    std::vector<double> losses;
    for (int s = 0; s < 50; ++s) {
      Rng fixed(11);
      std::vector<TrainingInstance> batch;
      for (const auto& smp : corpus) batch.push_back(make_instance(smp, 2, 0.4, fixed, cfg));
      losses.push_back(train_step(model, batch, opt, ocfg, 1.0).total);
    }
    const double head = (losses[0] + losses[1] + losses[2] + losses[3] + losses[4]) / 5;
    const double tail = (losses[45] + losses[46] + losses[47] + losses[48] + losses[49]) / 5;
    CHECK(tail < head);
  }

  SUBCASE("non-finite loss raises a diverged-training error") {
    model.parameters().head(0, 0) = std::numeric_limits<float>::infinity();
    auto batch = make_batch();
    AdamWConfig ocfg;
    CHECK_THROWS_AS(train_step(model, batch, opt, ocfg, 1.0), std::runtime_error);
  }
}

TEST_CASE("checkpoint round trip") {
  ModelConfig cfg = tiny_config();
  Rng rng(12);
  auto model = Model<float>::randomized(cfg, rng);
  OptimizerState<float> opt = OptimizerState<float>::init(cfg);
  opt.step = 42;
  for_each_tensor(opt.m, [&](TensorRef<float> t) {
    for (long i = 0; i < t.rows * t.cols; ++i) t.data[i] = static_cast<float>(i % 7) * 0.25f;
  });

  const fs::path dir = fs::temp_directory_path() / "planfill_ckpt_test";
  fs::remove_all(dir);
  save_checkpoint(dir, cfg, model.parameters(), opt);

  auto loaded = load_checkpoint<float>(dir);
  CHECK(loaded.config == cfg);
  CHECK(loaded.opt.step == 42);

  std::vector<TensorRef<float>> a, b;
  for_each_tensor(model.parameters(), [&](TensorRef<float> t) { a.push_back(t); });
  for_each_tensor(loaded.params, [&](TensorRef<float> t) { b.push_back(t); });
  for (size_t i = 0; i < a.size(); ++i) {
    for (long j = 0; j < a[i].rows * a[i].cols; ++j) {
      CHECK(a[i].data[j] == b[i].data[j]);  // bitwise
    }
  }

  // identical logits before/after, exactly
  TokenBuffer buf({1, 2, 3, 4}, {0, 1, 2, 3});
  auto before = model.forward(buf);
  Model<float> reloaded(loaded.config, std::move(loaded.params));
  auto after = reloaded.forward(buf);
  CHECK((before.logits.array() == after.logits.array()).all());

  SUBCASE("config mismatch rejected") {
    json manifest = json::parse(read_file(dir / "manifest.json"));
    manifest["config"]["vocab_size"] = cfg.vocab_size + 8;
    atomic_write_file(dir / "manifest.json", manifest.dump());
    CHECK_THROWS_AS(load_checkpoint<float>(dir), std::runtime_error);
  }
  SUBCASE("version mismatch rejected") {
    json manifest = json::parse(read_file(dir / "manifest.json"));
    manifest["format_version"] = 999;
    atomic_write_file(dir / "manifest.json", manifest.dump());
    CHECK_THROWS_AS(load_checkpoint<float>(dir), std::runtime_error);
  }
  SUBCASE("truncated blob rejected") {
    std::string blob = read_file(dir / "tensors.bin");
    blob.resize(blob.size() / 2);
    atomic_write_file(dir / "tensors.bin", blob);
    CHECK_THROWS_AS(load_checkpoint<float>(dir), std::runtime_error);
  }
  fs::remove_all(dir);
}

TEST_SUITE_END();
