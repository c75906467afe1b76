#ifndef PLANFILL_TYPES_HPP
#define PLANFILL_TYPES_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace planfill {

using TokenId = std::int32_t;
using Pos = std::int32_t;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Model hyperparameters plus the special-token layout. Special tokens must be
// pairwise distinct and inside the vocab; d_model must split evenly over heads.
struct ModelConfig {
  int vocab_size = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int max_position = 512;
  double rope_base = 10000.0;
  TokenId mask_id = 3;
  TokenId pad_id = 0;
  TokenId eos_id = 2;
  TokenId bos_id = 1;

  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size <= 0 || n_layers <= 0 || n_heads <= 0 || d_model <= 0 ||
        d_ff <= 0 || max_position <= 0) {
      throw std::invalid_argument("ModelConfig: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
    }
    if (rope_base <= 1.0) {
      throw std::invalid_argument("ModelConfig: rope_base must exceed 1");
    }
    const TokenId ids[4] = {mask_id, pad_id, eos_id, bos_id};
    for (int i = 0; i < 4; ++i) {
      if (ids[i] < 0 || ids[i] >= vocab_size) {
        throw std::invalid_argument("ModelConfig: special token out of vocab range");
      }
    }
    if (mask_id == pad_id || mask_id == eos_id || pad_id == eos_id) {
      throw std::invalid_argument("ModelConfig: mask/pad/eos ids must be pairwise distinct");
    }
  }

  bool operator==(const ModelConfig& o) const {
    return vocab_size == o.vocab_size && n_layers == o.n_layers &&
           n_heads == o.n_heads && d_model == o.d_model && d_ff == o.d_ff &&
           max_position == o.max_position && rope_base == o.rope_base &&
           mask_id == o.mask_id && pad_id == o.pad_id && eos_id == o.eos_id &&
           bos_id == o.bos_id;
  }
};

// A run of tokens paired with explicit position IDs. The physical order of the
// buffer is what causal attention sees; the position IDs carry the logical
// (ground-truth) ordering and need not be contiguous or sorted.
struct TokenBuffer {
  std::vector<TokenId> tokens;
  std::vector<Pos> position_ids;

  TokenBuffer() = default;
  TokenBuffer(std::vector<TokenId> toks, std::vector<Pos> pos)
      : tokens(std::move(toks)), position_ids(std::move(pos)) {}

  int size() const { return static_cast<int>(tokens.size()); }
  bool empty() const { return tokens.empty(); }

  void push_back(TokenId tok, Pos pos) {
    tokens.push_back(tok);
    position_ids.push_back(pos);
  }

  void append(const TokenBuffer& other) {
    tokens.insert(tokens.end(), other.tokens.begin(), other.tokens.end());
    position_ids.insert(position_ids.end(), other.position_ids.begin(),
                        other.position_ids.end());
  }

  void validate(const ModelConfig& cfg) const {
    if (tokens.size() != position_ids.size()) {
      throw std::invalid_argument("TokenBuffer: tokens/position_ids length mismatch");
    }
    if (tokens.empty()) {
      throw std::invalid_argument("TokenBuffer: empty buffer");
    }
    for (size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] < 0 || tokens[i] >= cfg.vocab_size) {
        throw std::out_of_range("TokenBuffer: token id out of vocab range");
      }
      if (position_ids[i] < 0 || position_ids[i] >= cfg.max_position) {
        throw std::out_of_range("TokenBuffer: position_id out of range");
      }
    }
  }
};

// Contiguous positions [start, start+n).
inline std::vector<Pos> iota_positions(Pos start, int n) {
  std::vector<Pos> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = start + i;
  return out;
}

}  // namespace planfill

#endif  // PLANFILL_TYPES_HPP
