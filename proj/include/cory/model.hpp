#pragma once

// Minimal causal token model: embedding -> trunk (GRU or single-head causal
// attention) -> token logits head and scalar value head on the same last
// hidden state. Gradients are hand-derived and checked against finite
// differences in the tests.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cory/mdp.hpp"
#include "cory/rng.hpp"

namespace cory {

enum class TrunkKind { gru, attention };

std::string to_string(TrunkKind kind);
TrunkKind parse_trunk(std::string_view name);

struct ModelDims {
  std::size_t vocab = 20;
  std::size_t embed = 16;   // embedding width (also the residual width for attention)
  std::size_t hidden = 32;  // GRU state width, or MLP width for attention
  std::size_t layers = 1;   // 1 or 2
  TrunkKind trunk = TrunkKind::gru;
  std::size_t max_positions = 64;  // only used by attention (position table)
  std::int32_t pad_id = -1;        // never emitted by the policy; -1 if none

  std::size_t head_dim() const { return trunk == TrunkKind::gru ? hidden : embed; }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

enum class ParamGroup { embedding, trunk, logits_head, value_head };

struct ParamSlice {
  std::string name;
  ParamGroup group;
  std::size_t offset;
  std::size_t rows;
  std::size_t cols;
  std::size_t size() const { return rows * cols; }
};

// Flat parameter vector plus a same-sized gradient accumulator. The layout
// partitions the flat vector exactly, in declaration order.
class ParamStore {
 public:
  explicit ParamStore(const ModelDims& dims);

  const ModelDims& dims() const { return dims_; }
  std::size_t size() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  const std::vector<ParamSlice>& layout() const { return layout_; }
  const ParamSlice& slice(std::string_view name) const;
  std::span<double> view(std::string_view name);
  std::span<const double> view(std::string_view name) const;
  std::span<double> grad_view(std::string_view name);

  void zero_grad();

  // Small uniform (+-scale) trunk and embedding weights; both heads zero, so
  // the initial policy is uniform over the vocabulary.
  void init(Rng& rng, double scale = 0.08);

 private:
  ModelDims dims_;
  std::vector<ParamSlice> layout_;
  std::vector<double> params_;
  std::vector<double> grad_;
};

struct GruLayerCache {
  std::size_t in_dim = 0;
  std::vector<double> x, h_prev, z, r, n, rh, h;  // row-major, one row per position
};

struct AttentionLayerCache {
  std::vector<double> x, q, k, v, attn, ctx, h1, m, y;
};

// Outputs of one forward pass over a context of T tokens: row t of logits
// scores the token at position t+1; values[t] is V(prefix of length t+1).
struct ForwardTrace {
  std::vector<TokenId> tokens;
  std::size_t vocab = 0;
  std::vector<double> logits;  // T x vocab
  std::vector<double> values;  // T
  std::vector<double> top;     // T x head_dim, input to both heads
  std::vector<GruLayerCache> gru;
  std::vector<AttentionLayerCache> attention;

  std::size_t positions() const { return tokens.size(); }
  std::span<const double> logits_row(std::size_t t) const { return {logits.data() + t * vocab, vocab}; }
};

ForwardTrace forward(const ParamStore& model, std::span<const TokenId> tokens);
inline ForwardTrace forward(const ParamStore& model, const TokenSeq& context) {
  return forward(model, context.real());
}

// Cotangents for each forward output: d_logits is T x vocab, d_values is T.
struct Cotangents {
  std::vector<double> d_logits;
  std::vector<double> d_values;

  static Cotangents zeros_like(const ForwardTrace& trace) {
    return {std::vector<double>(trace.logits.size(), 0.0), std::vector<double>(trace.values.size(), 0.0)};
  }
};

// grad += d(sum(upstream * outputs)) / d(params). Never touches params.
void backward(ParamStore& model, const ForwardTrace& trace, const Cotangents& upstream);

// params += lr * grad (ascent on the objective whose gradient is stored),
// then grad is zeroed. Throws NonFiniteGradient without touching params.
void sgd_step(ParamStore& model, double lr);

enum class OptimizerKind { sgd, adam };
std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

// Gradient-ascent optimizer state bound to one parameter vector.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ParamStore& model, double lr);
  OptimizerKind kind() const { return kind_; }
  std::uint64_t steps() const { return t_; }

 private:
  OptimizerKind kind_;
  double beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

double grad_norm(const ParamStore& model);

// Binary checkpoint: magic, format version, JSON header (dims + layout), then
// the flat parameters as little-endian IEEE-754 doubles.
void save_checkpoint(const ParamStore& model, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace cory
