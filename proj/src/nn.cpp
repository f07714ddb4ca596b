#include "irra/nn.hpp"

#include "irra/errors.hpp"
#include "irra/ops.hpp"

#include <cmath>

namespace irra {

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the pair.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor ParamStore::add(const std::string& name, Tensor tensor, ParamGroup group) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(true);
  index_[name] = params_.size();
  params_.push_back({name, tensor, group});
  return tensor;
}

Tensor ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("no parameter named '" + name + "'");
  return params_[it->second].tensor;
}

std::size_t ParamStore::scalar_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.name.compare(0, prefix.size(), prefix) == 0) n += p.tensor.size();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

ParamFactory ParamFactory::scoped(const std::string& name) const {
  return ParamFactory(store_, rng_, prefix_.empty() ? name : prefix_ + "." + name, group_);
}

Tensor ParamFactory::add(const std::string& name, Tensor t) {
  return store_.add(prefix_.empty() ? name : prefix_ + "." + name, std::move(t), group_);
}

Tensor ParamFactory::zeros(const std::string& name, Shape shape) {
  return add(name, Tensor::zeros(std::move(shape)));
}

Tensor ParamFactory::ones(const std::string& name, Shape shape) {
  return add(name, Tensor::full(std::move(shape), 1.0));
}

Tensor ParamFactory::truncated_normal(const std::string& name, Shape shape, double std) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(numel(shape));
  for (auto& x : v) {
    double z;
    do {
      z = dist(rng_);
    } while (std::abs(z) > 2.0);
    x = z * std;
  }
  return add(name, Tensor::from_values(std::move(shape), std::move(v)));
}

Tensor ParamFactory::lecun_normal(const std::string& name, std::size_t fan_in,
                                  std::size_t fan_out) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = dist(rng_);
  return add(name, Tensor::from_values({fan_in, fan_out}, std::move(v)));
}

Linear Linear::create(ParamFactory f, std::size_t in, std::size_t out, bool with_bias) {
  Linear l;
  l.weight = f.lecun_normal("weight", in, out);
  if (with_bias) l.bias = f.zeros("bias", {out});
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

LayerNorm LayerNorm::create(ParamFactory f, std::size_t dim) {
  return {f.ones("gain", {dim}), f.zeros("bias", {dim})};
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

MultiHeadAttention MultiHeadAttention::create(ParamFactory f, std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MultiHeadAttention m;
  m.q_proj = Linear::create(f.scoped("q"), dim, dim);
  m.k_proj = Linear::create(f.scoped("k"), dim, dim);
  m.v_proj = Linear::create(f.scoped("v"), dim, dim);
  m.out_proj = Linear::create(f.scoped("out"), dim, dim);
  m.heads = heads;
  return m;
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                                      bool causal) const {
  return out_proj(attention(q_proj(query), k_proj(key), v_proj(value), heads, causal));
}

Mlp Mlp::create(ParamFactory f, std::size_t dim) {
  return {Linear::create(f.scoped("fc"), dim, 4 * dim),
          Linear::create(f.scoped("proj"), 4 * dim, dim)};
}

Tensor Mlp::operator()(const Tensor& x) const { return proj(gelu(fc(x))); }

TransformerBlock TransformerBlock::create(ParamFactory f, std::size_t dim, std::size_t heads) {
  return {LayerNorm::create(f.scoped("ln_attn"), dim), LayerNorm::create(f.scoped("ln_mlp"), dim),
          MultiHeadAttention::create(f.scoped("attn"), dim, heads), Mlp::create(f.scoped("mlp"), dim)};
}

Tensor TransformerBlock::operator()(const Tensor& x, bool causal) const {
  const Tensor h = ln_attn(x);
  const Tensor y = x + attn(h, h, h, causal);
  return y + mlp(ln_mlp(y));
}

}  // namespace irra
