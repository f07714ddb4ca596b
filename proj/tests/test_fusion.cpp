#include "helpers.hpp"

#include "irra/encoders.hpp"
#include "irra/errors.hpp"
#include "irra/fusion.hpp"
#include "irra/gradcheck.hpp"
#include "irra/ops.hpp"

#include <doctest.h>

#include <cmath>

using namespace irra;
using irra::test::random_tensor;
using irra::test::to_vector;

namespace {

// y = x W + b for one row, straight loops.
std::vector<double> affine(const std::vector<double>& x, const Linear& l) {
  const std::size_t in = l.weight.dim(0), out = l.weight.dim(1);
  std::vector<double> y(out, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    double s = l.bias.defined() ? l.bias.at(o) : 0.0;
    for (std::size_t i = 0; i < in; ++i) s += x[i] * l.weight.at(i * out + o);
    y[o] = s;
  }
  return y;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t d = t.dim(-1);
  return {t.values().begin() + r * d, t.values().begin() + (r + 1) * d};
}

// Multi-head cross attention from the definition, one query at a time.
std::vector<double> mca_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                               const MultiHeadAttention& p, std::size_t lq, std::size_t lk) {
  const std::size_t d = q.dim(-1), h = p.heads, dh = d / h;
  std::vector<std::vector<double>> qs, ks, vs;
  for (std::size_t i = 0; i < lq; ++i) qs.push_back(affine(row(q, i), p.q_proj));
  for (std::size_t j = 0; j < lk; ++j) {
    ks.push_back(affine(row(k, j), p.k_proj));
    vs.push_back(affine(row(v, j), p.v_proj));
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < lq; ++i) {
    std::vector<double> concat(d, 0.0);
    for (std::size_t head = 0; head < h; ++head) {
      std::vector<double> logits(lk);
      double mx = -1e300;
      for (std::size_t j = 0; j < lk; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qs[i][head * dh + c] * ks[j][head * dh + c];
        logits[j] = s / std::sqrt(double(dh));
        mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t j = 0; j < lk; ++j) {
        for (std::size_t c = 0; c < dh; ++c) concat[head * dh + c] += logits[j] / z * vs[j][head * dh + c];
      }
    }
    const auto mixed = affine(concat, p.out_proj);
    out.insert(out.end(), mixed.begin(), mixed.end());
  }
  return out;
}

struct FusionFixture {
  ParamStore store;
  Rng init{11};
  FusionEncoder enc;
  explicit FusionFixture(const FusionConfig& cfg)
      : enc(ParamFactory(store, init, "fusion", ParamGroup::NewModule), cfg) {}
  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (const auto& p : store.params()) out.push_back(p.tensor);
    return out;
  }
};

FusionConfig small(FusionVariant v) {
  FusionConfig c;
  c.variant = v;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.num_blocks = 1;
  c.text_dim = 6;
  c.image_dim = 10;
  return c;
}

}  // namespace

TEST_CASE("mca agrees with a scalar attention oracle") {
  Rng rng(1);
  ParamStore store;
  Rng init(2);
  const auto p = MultiHeadAttention::create(ParamFactory(store, init, "mca", ParamGroup::NewModule), 8, 2);
  for (int t = 0; t < 20; ++t) {
    const Tensor q = random_tensor({1, 3, 8}, rng, false);
    const Tensor kv = random_tensor({1, 5, 8}, rng, false);
    const auto got = to_vector(mca(q, kv, kv, p));
    const auto want = mca_oracle(q, kv, kv, p, 3, 5);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-10);
  }
}

TEST_CASE("attention over a single key returns its value") {
  Rng rng(3);
  const Tensor q = random_tensor({1, 4, 6}, rng, false);
  const Tensor k = random_tensor({1, 1, 6}, rng, false);
  const Tensor v = random_tensor({1, 1, 6}, rng, false);
  const auto out = to_vector(attention(q, k, v, 3));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(out[i * 6 + c] - v.at(c)) < 1e-15);
  }
}

TEST_CASE("identical keys average the values uniformly") {
  Rng rng(4);
  const Tensor q = random_tensor({1, 2, 4}, rng, false);
  const Tensor key_row = random_tensor({4}, rng, false);
  const Tensor k = expand(key_row, {1, 3, 4});
  const Tensor v = random_tensor({1, 3, 4}, rng, false);
  const auto out = to_vector(attention(q, k, v, 2));
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double avg = (v.at(c) + v.at(4 + c) + v.at(8 + c)) / 3.0;
      CHECK(std::abs(out[i * 4 + c] - avg) < 1e-14);
    }
  }
}

TEST_CASE("attention rows sum to one") {
  Rng rng(5);
  const Tensor q = random_tensor({2, 3, 8}, rng, false, 4.0);
  const Tensor k = random_tensor({2, 5, 8}, rng, false, 4.0);
  const auto probs = attention_probabilities(q, k, 2);
  REQUIRE(probs.size() == 2 * 2 * 3 * 5);
  for (std::size_t r = 0; r < probs.size() / 5; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += probs[r * 5 + j];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("attention rejects widths not divisible by the head count") {
  const Tensor q = Tensor::zeros({1, 2, 6});
  CHECK_THROWS_AS(attention(q, q, q, 4), ShapeError);
}

TEST_CASE("every variant maps text and image states to L x hidden") {
  Rng rng(6);
  for (auto v : {FusionVariant::Ours, FusionVariant::CoAttention, FusionVariant::MergedAttention}) {
    FusionFixture f(small(v));
    for (std::size_t n : {1u, 4u, 9u}) {
      const Tensor t = random_tensor({2, 5, 6}, rng, false);
      const Tensor i = random_tensor({2, n, 10}, rng, false);
      CHECK(f.enc.fuse(t, i).states.shape() == Shape{2, 5, 8});
    }
  }
}

TEST_CASE("fusion rejects mismatched widths and batch sizes") {
  FusionFixture f(small(FusionVariant::Ours));
  CHECK_THROWS_AS(f.enc.fuse(Tensor::zeros({2, 5, 7}), Tensor::zeros({2, 3, 10})), ShapeError);
  CHECK_THROWS_AS(f.enc.fuse(Tensor::zeros({2, 5, 6}), Tensor::zeros({3, 3, 10})), ShapeError);
}

TEST_CASE("perturbing one image token moves every fused state") {
  Rng rng(7);
  FusionFixture f(small(FusionVariant::Ours));
  const Tensor t = random_tensor({1, 5, 6}, rng, false);
  const Tensor i = random_tensor({1, 4, 10}, rng, false);
  Tensor i2 = i.detach();
  i2.mutable_values()[2 * 10 + 3] += 0.5;
  const auto a = to_vector(f.enc.fuse(t, i).states);
  const auto b = to_vector(f.enc.fuse(t, i2).states);
  for (std::size_t pos = 0; pos < 5; ++pos) {
    bool moved = false;
    for (std::size_t c = 0; c < 8; ++c) moved |= a[pos * 8 + c] != b[pos * 8 + c];
    CHECK(moved);
  }
}

TEST_CASE("fusion is a pure function of inputs and params") {
  Rng rng(8);
  FusionFixture f(small(FusionVariant::CoAttention));
  const Tensor t = random_tensor({1, 5, 6}, rng, false);
  const Tensor i = random_tensor({1, 4, 10}, rng, false);
  CHECK(to_vector(f.enc.fuse(t, i).states) == to_vector(f.enc.fuse(t, i).states));
}

TEST_CASE("fusion gradients match finite differences for all variants") {
  Rng rng(9);
  for (auto v : {FusionVariant::Ours, FusionVariant::CoAttention, FusionVariant::MergedAttention}) {
    CAPTURE(to_string(v));
    FusionConfig cfg = small(v);
    cfg.text_dim = 8;
    cfg.image_dim = 8;
    FusionFixture f(cfg);
    std::vector<Tensor> params = f.params();
    params.push_back(random_tensor({1, 3, 8}, rng));
    params.push_back(random_tensor({1, 4, 8}, rng));
    const Tensor w = random_tensor({1, 3, 8}, rng, false);
    GradCheckOptions opts;
    opts.max_coords_per_param = 3;
    const auto r = check_gradients(
        [&] {
          return sum(mul(f.enc.fuse(params[params.size() - 2], params.back()).states, w));
        },
        params, opts);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("parameter counts order co-attention over ours over merged") {
  for (std::size_t hidden : {8u, 64u, 512u}) {
    for (std::size_t blocks : {1u, 2u, 4u}) {
      FusionConfig c;
      c.hidden_dim = hidden;
      c.num_heads = hidden >= 64 ? 8 : 2;
      c.num_blocks = blocks;
      c.text_dim = c.image_dim = hidden;
      c.variant = FusionVariant::CoAttention;
      const auto co = fusion_parameter_count(c);
      c.variant = FusionVariant::Ours;
      const auto ours = fusion_parameter_count(c);
      c.variant = FusionVariant::MergedAttention;
      const auto merged = fusion_parameter_count(c);
      CAPTURE(hidden);
      CAPTURE(blocks);
      CHECK(co > ours);
      CHECK(ours > merged);
    }
  }
  FusionFixture f(small(FusionVariant::Ours));
  CHECK(fusion_parameter_count(small(FusionVariant::Ours)) == f.store.scalar_count());
}

TEST_CASE("fusion variant names round-trip") {
  for (auto v : {FusionVariant::Ours, FusionVariant::CoAttention, FusionVariant::MergedAttention}) {
    CHECK(parse_fusion_variant(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_fusion_variant("late"), ConfigError);
}

namespace {

struct HeadFixture {
  ParamStore store;
  Rng init{12};
  MlmHead head;
  HeadFixture(std::size_t dim, std::size_t vocab)
      : head(MlmHead::create(ParamFactory(store, init, "mlm", ParamGroup::NewModule), dim, vocab)) {}
};

}  // namespace

TEST_CASE("irr loss with uniform predictions is ln |V|") {
  Rng rng(13);
  HeadFixture h(8, 11);
  for (auto& v : h.head.fc.weight.mutable_values()) v = 0.0;
  for (auto& v : h.head.fc.bias.mutable_values()) v = 0.0;
  const FusedStates fused{random_tensor({2, 5, 8}, rng, false)};
  const std::vector<MaskedPositions> masked{{{1, 3}, {6, 7}}, {{2}, {10}}};
  CHECK(std::abs(irr_loss(fused, masked, h.head).item() - std::log(11.0)) < 1e-12);
  CHECK(std::abs(irr_loss(fused, masked, h.head, true).item() - std::log(11.0) / 11.0) < 1e-12);
}

TEST_CASE("irr loss vanishes when predictions saturate at the truth") {
  Rng rng(14);
  HeadFixture h(8, 11);
  for (auto& v : h.head.fc.weight.mutable_values()) v = 0.0;
  for (auto& v : h.head.fc.bias.mutable_values()) v = 0.0;
  h.head.fc.bias.mutable_values()[7] = 100.0;
  const FusedStates fused{random_tensor({1, 5, 8}, rng, false)};
  const std::vector<MaskedPositions> masked{{{1, 4}, {7, 7}}};
  const double loss = irr_loss(fused, masked, h.head).item();
  CHECK(loss >= 0.0);
  CHECK(loss < 1e-40);
}

TEST_CASE("irr loss matches the literal one-hot double sum") {
  Rng rng(15);
  HeadFixture h(8, 9);
  for (int t = 0; t < 20; ++t) {
    const FusedStates fused{random_tensor({2, 6, 8}, rng, false)};
    const std::vector<MaskedPositions> masked{{{0, 2, 5}, {5, 6, 8}}, {{1}, {7}}};
    const auto logits = to_vector(h.head(fused.states));
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < masked.size(); ++b) {
      for (std::size_t m = 0; m < masked[b].positions.size(); ++m) {
        const std::size_t base = (b * 6 + masked[b].positions[m]) * 9;
        double z = 0.0;
        for (std::size_t j = 0; j < 9; ++j) z += std::exp(logits[base + j]);
        for (std::size_t j = 0; j < 9; ++j) {
          const double y = j == masked[b].original_ids[m] ? 1.0 : 0.0;
          acc += y * std::log(std::exp(logits[base + j]) / z);
        }
        ++count;
      }
    }
    const double oracle = -acc / double(count);
    CHECK(std::abs(irr_loss(fused, masked, h.head).item() - oracle) < 1e-10);
    CHECK(std::abs(irr_loss(fused, masked, h.head, true).item() - oracle / 9.0) < 1e-10);
  }
}

TEST_CASE("an empty mask set yields zero loss and zero gradient") {
  Rng rng(16);
  HeadFixture h(8, 9);
  const Tensor states = random_tensor({2, 4, 8}, rng);
  const std::vector<MaskedPositions> masked(2);
  const Tensor loss = irr_loss(FusedStates{states}, masked, h.head);
  CHECK(loss.item() == 0.0);
  backward(loss);
  for (double g : states.grad()) CHECK(g == 0.0);
}

TEST_CASE("irr loss gradients reach the image encoder") {
  Rng rng(17);
  ParamStore store;
  Rng init(18);
  ImageEncoder img(ParamFactory(store, init, "image", ParamGroup::Encoder), {8, 8, 1, 4, 8, 1, 2, 4});
  FusionConfig fc = small(FusionVariant::Ours);
  fc.image_dim = 8;
  FusionEncoder fusion(ParamFactory(store, init, "fusion", ParamGroup::NewModule), fc);
  const auto head = MlmHead::create(ParamFactory(store, init, "mlm", ParamGroup::NewModule), 8, 9);
  Image im(8, 8, 1);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& p : im.pixels) p = u(rng);
  const std::vector<Image> imgs{im};
  const auto enc = img.encode(imgs);
  const Tensor text = random_tensor({1, 5, 6}, rng, false);
  const std::vector<MaskedPositions> masked{{{2}, {6}}};
  backward(irr_loss(fusion.fuse(text, enc.token_states), masked, head));
  double norm = 0.0;
  for (const auto& p : store.params()) {
    if (p.name.rfind("image", 0) != 0 || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) norm += g * g;
  }
  CHECK(norm > 0.0);
}
