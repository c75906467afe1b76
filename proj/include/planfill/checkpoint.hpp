#ifndef PLANFILL_CHECKPOINT_HPP
#define PLANFILL_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "planfill/io.hpp"
#include "planfill/model.hpp"
#include "planfill/optimizer.hpp"

namespace planfill {

using json = nlohmann::ordered_json;

constexpr int kCheckpointVersion = 1;

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},       {"d_model", c.d_model},
              {"d_ff", c.d_ff},             {"max_position", c.max_position},
              {"rope_base", c.rope_base},   {"mask_id", c.mask_id},
              {"pad_id", c.pad_id},         {"eos_id", c.eos_id},
              {"bos_id", c.bos_id}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_position = j.at("max_position").get<int>();
  c.rope_base = j.at("rope_base").get<double>();
  c.mask_id = j.at("mask_id").get<TokenId>();
  c.pad_id = j.at("pad_id").get<TokenId>();
  c.eos_id = j.at("eos_id").get<TokenId>();
  c.bos_id = j.at("bos_id").get<TokenId>();
  return c;
}

namespace detail {

template <typename S>
constexpr int dtype_tag() {
  static_assert(sizeof(S) == 4 || sizeof(S) == 8, "unsupported scalar");
  return sizeof(S) == 4 ? 1 : 2;  // 1 = f32, 2 = f64
}

inline const char* dtype_name(int tag) { return tag == 1 ? "f32" : "f64"; }

template <typename T>
void put_raw(std::string& out, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(T));
}

template <typename T>
T get_raw(const std::string& blob, size_t& off) {
  if (off + sizeof(T) > blob.size()) {
    throw std::runtime_error("checkpoint: truncated tensor blob");
  }
  T v;
  std::memcpy(&v, blob.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

// Checkpoint layout: <dir>/tensors.bin carries every tensor as
//   [u32 name_len][name][u32 dtype_tag][u32 rank][u64 dims...][raw data]
// little-endian and row-major, and <dir>/manifest.json records the config,
// step counter and a byte-offset index of the blob.
template <typename S>
void save_checkpoint(const fs::path& dir, const ModelConfig& cfg,
                     Parameters<S>& params, OptimizerState<S>& opt) {
  fs::create_directories(dir);
  std::string blob;
  json index = json::array();

  auto emit = [&](const std::string& name, TensorRef<S> t) {
    const std::uint64_t offset = blob.size();
    detail::put_raw<std::uint32_t>(blob, static_cast<std::uint32_t>(name.size()));
    blob.append(name);
    detail::put_raw<std::uint32_t>(blob, static_cast<std::uint32_t>(detail::dtype_tag<S>()));
    detail::put_raw<std::uint32_t>(blob, static_cast<std::uint32_t>(t.rank));
    detail::put_raw<std::uint64_t>(blob, static_cast<std::uint64_t>(t.rows));
    if (t.rank == 2) detail::put_raw<std::uint64_t>(blob, static_cast<std::uint64_t>(t.cols));
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.rows * t.cols) * sizeof(S);
    blob.append(reinterpret_cast<const char*>(t.data), nbytes);
    json dims = json::array();
    dims.push_back(t.rows);
    if (t.rank == 2) dims.push_back(t.cols);
    index.push_back(json{{"name", name},
                         {"dtype", detail::dtype_name(detail::dtype_tag<S>())},
                         {"rank", t.rank},
                         {"dims", dims},
                         {"offset", offset},
                         {"nbytes", nbytes}});
  };

  for_each_tensor(params, [&](TensorRef<S> t) { emit(t.name, t); });
  for_each_tensor(opt.m, [&](TensorRef<S> t) { emit("opt.m." + t.name, t); });
  for_each_tensor(opt.v, [&](TensorRef<S> t) { emit("opt.v." + t.name, t); });

  atomic_write_file(dir / "tensors.bin", blob);
  json manifest{{"format_version", kCheckpointVersion},
                {"dtype", detail::dtype_name(detail::dtype_tag<S>())},
                {"step", opt.step},
                {"config", model_config_to_json(cfg)},
                {"tensors", index}};
  atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

template <typename S>
struct Checkpoint {
  ModelConfig config;
  Parameters<S> params;
  OptimizerState<S> opt;
};

template <typename S>
Checkpoint<S> load_checkpoint(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: bad manifest: " + std::string(e.what()));
  }
  if (manifest.at("format_version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: format version mismatch");
  }
  if (std::string(detail::dtype_name(detail::dtype_tag<S>())) !=
      manifest.at("dtype").get<std::string>()) {
    throw std::runtime_error("checkpoint: dtype mismatch");
  }

  Checkpoint<S> out;
  out.config = model_config_from_json(manifest.at("config"));
  out.config.validate();
  out.params = make_parameters<S>(out.config);
  out.opt = OptimizerState<S>::init(out.config);
  out.opt.step = manifest.at("step").get<long>();

  const std::string blob = read_file(dir / "tensors.bin");

  std::vector<TensorRef<S>> refs;
  for_each_tensor(out.params, [&](TensorRef<S> t) { refs.push_back(t); });
  for_each_tensor(out.opt.m, [&](TensorRef<S> t) {
    t.name = "opt.m." + t.name;
    refs.push_back(t);
  });
  for_each_tensor(out.opt.v, [&](TensorRef<S> t) {
    t.name = "opt.v." + t.name;
    refs.push_back(t);
  });

  const json& index = manifest.at("tensors");
  if (index.size() != refs.size()) {
    throw std::runtime_error("checkpoint: config mismatch (tensor count)");
  }
  for (size_t i = 0; i < refs.size(); ++i) {
    const json& e = index.at(i);
    size_t off = e.at("offset").get<std::uint64_t>();
    const auto name_len = detail::get_raw<std::uint32_t>(blob, off);
    if (off + name_len > blob.size()) {
      throw std::runtime_error("checkpoint: truncated tensor blob");
    }
    const std::string name = blob.substr(off, name_len);
    off += name_len;
    if (name != refs[i].name || name != e.at("name").get<std::string>()) {
      throw std::runtime_error("checkpoint: config mismatch (tensor name " + name + ")");
    }
    const auto tag = detail::get_raw<std::uint32_t>(blob, off);
    if (tag != static_cast<std::uint32_t>(detail::dtype_tag<S>())) {
      throw std::runtime_error("checkpoint: dtype mismatch for " + name);
    }
    const auto rank = detail::get_raw<std::uint32_t>(blob, off);
    const auto rows = detail::get_raw<std::uint64_t>(blob, off);
    const std::uint64_t cols = rank == 2 ? detail::get_raw<std::uint64_t>(blob, off) : 1;
    if (rank != static_cast<std::uint32_t>(refs[i].rank) ||
        rows != static_cast<std::uint64_t>(refs[i].rows) ||
        cols != static_cast<std::uint64_t>(refs[i].cols)) {
      throw std::runtime_error("checkpoint: config mismatch (shape of " + name + ")");
    }
    const std::uint64_t nbytes = rows * cols * sizeof(S);
    if (off + nbytes > blob.size()) {
      throw std::runtime_error("checkpoint: truncated tensor blob");
    }
    std::memcpy(refs[i].data, blob.data() + off, nbytes);
  }
  return out;
}

}  // namespace planfill

#endif  // PLANFILL_CHECKPOINT_HPP
