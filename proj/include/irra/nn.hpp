#pragma once

#include "irra/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace irra {

using Rng = std::mt19937_64;

/// Derives an independent, reproducible seed for substream `stream` of `seed`.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream);

/// Optimiser groups: encoders train at the base rate, randomly initialised
/// heads (fusion, MLM, ID classifier) at the new-module rate.
enum class ParamGroup { Encoder, NewModule };

struct NamedParam {
  std::string name;
  Tensor tensor;
  ParamGroup group;
};

/// Ordered registry of learnable tensors. Names are unique.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor tensor, ParamGroup group);

  const std::vector<NamedParam>& params() const { return params_; }
  std::vector<NamedParam>& params() { return params_; }
  Tensor find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  /// Total number of scalars whose name starts with `prefix`.
  std::size_t scalar_count(const std::string& prefix = "") const;
  void zero_grad();

 private:
  std::vector<NamedParam> params_;
  std::map<std::string, std::size_t> index_;
};

/// Builds parameters under a name prefix with a shared generator.
class ParamFactory {
 public:
  ParamFactory(ParamStore& store, Rng& rng, std::string prefix, ParamGroup group)
      : store_(store), rng_(rng), prefix_(std::move(prefix)), group_(group) {}

  ParamFactory scoped(const std::string& name) const;

  Tensor zeros(const std::string& name, Shape shape);
  Tensor ones(const std::string& name, Shape shape);
  /// Normal(0, std) truncated at two standard deviations.
  Tensor truncated_normal(const std::string& name, Shape shape, double std);
  /// Normal(0, 1/sqrt(fan_in)) for a [fan_in x fan_out] weight.
  Tensor lecun_normal(const std::string& name, std::size_t fan_in, std::size_t fan_out);

 private:
  Tensor add(const std::string& name, Tensor t);

  ParamStore& store_;
  Rng& rng_;
  std::string prefix_;
  ParamGroup group_;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], undefined when bias-free

  static Linear create(ParamFactory f, std::size_t in, std::size_t out, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm create(ParamFactory f, std::size_t dim);
  Tensor operator()(const Tensor& x) const;
};

/// Multi-head attention with input and output projections.
struct MultiHeadAttention {
  Linear q_proj, k_proj, v_proj, out_proj;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParamFactory f, std::size_t dim, std::size_t heads);
  Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                    bool causal = false) const;
};

/// Two-layer GELU feed-forward with 4x expansion.
struct Mlp {
  Linear fc, proj;

  static Mlp create(ParamFactory f, std::size_t dim);
  Tensor operator()(const Tensor& x) const;
};

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
struct TransformerBlock {
  LayerNorm ln_attn, ln_mlp;
  MultiHeadAttention attn;
  Mlp mlp;

  static TransformerBlock create(ParamFactory f, std::size_t dim, std::size_t heads);
  Tensor operator()(const Tensor& x, bool causal = false) const;
};

}  // namespace irra
