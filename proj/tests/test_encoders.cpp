#include "helpers.hpp"

#include "irra/encoders.hpp"
#include "irra/errors.hpp"
#include "irra/gradcheck.hpp"
#include "irra/ops.hpp"

#include <doctest.h>

#include <algorithm>

using namespace irra;
using irra::test::random_tensor;
using irra::test::to_vector;

namespace {

Image random_image(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  Image img(h, w, c);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

struct ImageFixture {
  ParamStore store;
  Rng init{3};
  ImageEncoder enc;
  explicit ImageFixture(const ImageEncoderConfig& cfg)
      : enc(ParamFactory(store, init, "image", ParamGroup::Encoder), cfg) {}
};

struct TextFixture {
  ParamStore store;
  Rng init{4};
  TextEncoder enc;
  explicit TextFixture(const TextEncoderConfig& cfg)
      : enc(ParamFactory(store, init, "text", ParamGroup::Encoder), cfg) {}
};

TextEncoderConfig small_text() { return {12, 6, 8, 1, 2, 4}; }

}  // namespace

TEST_CASE("patchify with unit patches lists pixels in raster order") {
  Image img(2, 2, 1);
  img.pixels = {1, 2, 3, 4};
  const RowMatrix p = patchify(img, 1);
  REQUIRE(p.rows() == 4);
  REQUIRE(p.cols() == 1);
  for (int i = 0; i < 4; ++i) CHECK(p(i, 0) == i + 1);
}

TEST_CASE("patchify of a 4x2 image with P=2 gives two rows of four") {
  Image img(4, 2, 1);
  img.pixels = {1, 2, 3, 4, 5, 6, 7, 8};
  const RowMatrix p = patchify(img, 2);
  REQUIRE(p.rows() == 2);
  REQUIRE(p.cols() == 4);
  CHECK(p(0, 0) == 1);
  CHECK(p(0, 1) == 2);
  CHECK(p(0, 2) == 3);
  CHECK(p(0, 3) == 4);
  CHECK(p(1, 0) == 5);
  CHECK(p(1, 3) == 8);
}

TEST_CASE("unpatchify inverts patchify") {
  Rng rng(1);
  const Image img = random_image(8, 4, 3, rng);
  CHECK(unpatchify(patchify(img, 2), 8, 4, 3, 2) == img);
  CHECK(unpatchify(patchify(img, 4), 8, 4, 3, 4) == img);
}

TEST_CASE("patchify rejects sizes the patch does not divide") {
  Image img(5, 4, 1);
  CHECK_THROWS_AS(patchify(img, 2), ConfigError);
}

TEST_CASE("encoder configs validate their invariants") {
  ImageEncoderConfig bad_patch;
  bad_patch.patch_size = 5;
  CHECK_THROWS_AS(bad_patch.validate(), ConfigError);
  TextEncoderConfig short_text;
  short_text.max_len = 2;
  CHECK_THROWS_AS(short_text.validate(), ConfigError);
  CHECK(ImageEncoderConfig{}.num_patches() == 8);
  CHECK(ImageEncoderConfig::production().height == 384);
  CHECK(ImageEncoderConfig::production().width == 128);
  CHECK(TextEncoderConfig::production().max_len == 77);
}

TEST_CASE("zero image with zeroed positions and projection encodes to zero") {
  ImageFixture f({8, 8, 1, 4, 8, 1, 2, 4});
  for (auto& v : f.enc.positional_embedding().mutable_values()) v = 0.0;
  for (auto& v : f.enc.projection().weight.mutable_values()) v = 0.0;
  if (f.enc.projection().bias.defined()) {
    for (auto& v : f.enc.projection().bias.mutable_values()) v = 0.0;
  }
  const std::vector<Image> imgs{Image(8, 8, 1)};
  const auto out = f.enc.encode(imgs);
  for (double v : out.global_embed.values()) CHECK(v == 0.0);
}

TEST_CASE("image encoder output shapes and distinctness") {
  const ImageEncoderConfig cfg;
  ImageFixture f(cfg);
  Rng rng(2);
  const std::vector<Image> imgs{random_image(32, 16, 3, rng), random_image(32, 16, 3, rng)};
  const auto out = f.enc.encode(imgs);
  CHECK(out.global_embed.shape() == Shape{2, 64});
  CHECK(out.token_states.shape() == Shape{2, 8, 64});
  const auto g = to_vector(out.global_embed);
  CHECK(!std::equal(g.begin(), g.begin() + 64, g.begin() + 64));
}

TEST_CASE("image encoder rejects the wrong image size") {
  ImageFixture f({8, 8, 1, 4, 8, 1, 2, 4});
  const std::vector<Image> imgs{Image(8, 4, 1)};
  CHECK_THROWS_AS(f.enc.encode(imgs), ShapeError);
}

TEST_CASE("image encoding is a pure function of input and params") {
  ImageFixture f({8, 8, 1, 4, 8, 1, 2, 4});
  Rng rng(5);
  const std::vector<Image> imgs{random_image(8, 8, 1, rng)};
  CHECK(to_vector(f.enc.encode(imgs).global_embed) == to_vector(f.enc.encode(imgs).global_embed));
}

TEST_CASE("permuting patches changes the token states") {
  ImageFixture f({8, 8, 1, 4, 8, 1, 2, 4});
  Rng rng(6);
  const Image img = random_image(8, 8, 1, rng);
  RowMatrix patches = patchify(img, 4);
  patches.row(0).swap(patches.row(3));
  const std::vector<Image> imgs{img, unpatchify(patches, 8, 8, 1, 4)};
  const auto out = to_vector(f.enc.encode(imgs).token_states);
  // Without positional embeddings permuted token 3 would equal original token 0.
  bool differs = false;
  for (std::size_t c = 0; c < 8; ++c) differs |= out[c] != out[4 * 8 + 3 * 8 + c];
  CHECK(differs);
}

TEST_CASE("image encoder gradients match finite differences") {
  ImageFixture f({8, 8, 1, 4, 8, 1, 2, 4});
  Rng rng(7);
  const std::vector<Image> imgs{random_image(8, 8, 1, rng), random_image(8, 8, 1, rng)};
  const Tensor w = random_tensor({2, 4}, rng, false);
  std::vector<Tensor> params;
  for (const auto& p : f.store.params()) params.push_back(p.tensor);
  GradCheckOptions opts;
  opts.max_coords_per_param = 3;
  const auto r = check_gradients([&] { return sum(mul(f.enc.encode(imgs).global_embed, w)); },
                                 params, opts);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("eos_position finds the first end token") {
  const std::vector<TokenId> ids{kSosId, 7, kEosId, kEosId, kPadId};
  CHECK(eos_position(ids) == 2);
  const std::vector<TokenId> none{kSosId, 7, 8};
  CHECK_THROWS_AS(eos_position(none), ContractError);
}

TEST_CASE("text encoder rejects a sequence without an end token") {
  TextFixture f(small_text());
  const std::vector<std::vector<TokenId>> ids{{kSosId, 6, 7, 8, 9, 10}};
  CHECK_THROWS_AS(f.enc.encode(ids), ContractError);
}

TEST_CASE("tokens after the end token do not reach the global embedding") {
  TextFixture f(small_text());
  const std::vector<std::vector<TokenId>> a{{kSosId, 6, 7, kEosId, kPadId, kPadId}};
  const std::vector<std::vector<TokenId>> b{{kSosId, 6, 7, kEosId, 9, 10}};
  CHECK(to_vector(f.enc.encode(a).global_embed) == to_vector(f.enc.encode(b).global_embed));
}

TEST_CASE("causal states ignore later tokens") {
  TextFixture f(small_text());
  const std::vector<std::vector<TokenId>> a{{kSosId, 6, 7, 8, kEosId, kPadId}};
  const std::vector<std::vector<TokenId>> b{{kSosId, 6, 11, 9, kEosId, kPadId}};
  const auto sa = to_vector(f.enc.encode(a).token_states);
  const auto sb = to_vector(f.enc.encode(b).token_states);
  // Positions 0 and 1 precede the edit at position 2.
  for (std::size_t i = 0; i < 2 * 8; ++i) CHECK(sa[i] == sb[i]);
  bool later_differs = false;
  for (std::size_t i = 2 * 8; i < 3 * 8; ++i) later_differs |= sa[i] != sb[i];
  CHECK(later_differs);
}

TEST_CASE("bidirectional encoding differs from causal encoding") {
  TextFixture f(small_text());
  const std::vector<std::vector<TokenId>> ids{{kSosId, 6, 7, 8, kEosId, kPadId}};
  CHECK(to_vector(f.enc.encode(ids, true).token_states) !=
        to_vector(f.enc.encode(ids, false).token_states));
}

TEST_CASE("text encoder shapes") {
  TextFixture f(TextEncoderConfig{});
  std::vector<TokenId> seq(16, kPadId);
  seq[0] = kSosId;
  seq[1] = 9;
  seq[2] = kEosId;
  const std::vector<std::vector<TokenId>> ids{seq, seq, seq};
  const auto out = f.enc.encode(ids);
  CHECK(out.global_embed.shape() == Shape{3, 64});
  CHECK(out.token_states.shape() == Shape{3, 16, 64});
}

TEST_CASE("text encoder embedding table gradient matches finite differences") {
  TextFixture f(small_text());
  Rng rng(8);
  const std::vector<std::vector<TokenId>> ids{{kSosId, 6, 7, kEosId, kPadId, kPadId},
                                              {kSosId, 9, 10, 11, 8, kEosId}};
  const Tensor w = random_tensor({2, 4}, rng, false);
  std::vector<Tensor> params{f.enc.token_embedding()};
  const auto r = check_gradients([&] { return sum(mul(f.enc.encode(ids).global_embed, w)); }, params);
  CHECK(r.coords_checked == 12 * 8);
  CHECK(r.max_rel_error < 1e-4);
}
