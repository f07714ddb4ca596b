#include "irra/gradient_suite.hpp"

#include "irra/encoders.hpp"
#include "irra/errors.hpp"
#include "irra/fusion.hpp"
#include "irra/losses.hpp"
#include "irra/nn.hpp"
#include "irra/ops.hpp"

#include <algorithm>
#include <functional>
#include <map>

namespace irra {

namespace {

struct Case {
  std::function<Tensor()> loss;
  std::vector<Tensor> params;
  /// Probe cap per parameter; 0 probes everything.
  std::size_t max_coords = 0;
};

using CaseBuilder = std::function<Case(Rng&)>;

Tensor random_tensor(Rng& rng, Shape shape, bool grad = true, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from_values(std::move(shape), std::move(v), grad);
}

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Contracts an arbitrary output with fixed random weights so that every
// output coordinate contributes a distinct gradient.
Tensor probe(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

std::vector<Tensor> store_params(const ParamStore& store) {
  std::vector<Tensor> out;
  for (const auto& p : store.params()) out.push_back(p.tensor);
  return out;
}

std::vector<std::size_t> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = uniform(rng, 0, classes - 1);
  return labels;
}

Case matmul_case(Rng& rng) {
  const auto m = uniform(rng, 1, 4), k = uniform(rng, 1, 5), n = uniform(rng, 1, 4);
  Tensor a = random_tensor(rng, {m, k}), b = random_tensor(rng, {k, n});
  Tensor w = random_tensor(rng, {m, n}, false);
  return {[=] { return probe(matmul(a, b), w); }, {a, b}};
}

Case softmax_case(Rng& rng) {
  const auto r = uniform(rng, 1, 4), c = uniform(rng, 2, 6);
  const std::ptrdiff_t axis = uniform(rng, 0, 1) ? -1 : 0;
  Tensor x = random_tensor(rng, {r, c}, true, 2.0);
  Tensor w = random_tensor(rng, {r, c}, false);
  return {[=] { return probe(softmax(x, axis), w); }, {x}};
}

Case log_softmax_case(Rng& rng) {
  const auto r = uniform(rng, 1, 4), c = uniform(rng, 2, 6);
  Tensor x = random_tensor(rng, {r, c}, true, 2.0);
  Tensor w = random_tensor(rng, {r, c}, false);
  return {[=] { return probe(log_softmax(x), w); }, {x}};
}

Case layer_norm_case(Rng& rng) {
  const auto r = uniform(rng, 1, 4), c = uniform(rng, 2, 8);
  Tensor x = random_tensor(rng, {r, c}), g = random_tensor(rng, {c}), b = random_tensor(rng, {c});
  Tensor w = random_tensor(rng, {r, c}, false);
  return {[=] { return probe(layer_norm(x, g, b), w); }, {x, g, b}};
}

Case gelu_case(Rng& rng) {
  const auto n = uniform(rng, 1, 10);
  Tensor x = random_tensor(rng, {n}, true, 2.0);
  Tensor w = random_tensor(rng, {n}, false);
  return {[=] { return probe(gelu(x), w); }, {x}};
}

Case linear_case(Rng& rng) {
  const auto b = uniform(rng, 1, 3), l = uniform(rng, 1, 3), i = uniform(rng, 1, 5),
             o = uniform(rng, 1, 5);
  Tensor x = random_tensor(rng, {b, l, i}), wt = random_tensor(rng, {i, o}),
         bias = random_tensor(rng, {o});
  Tensor w = random_tensor(rng, {b, l, o}, false);
  return {[=] { return probe(linear(x, wt, bias), w); }, {x, wt, bias}};
}

Case attention_case(Rng& rng) {
  const auto heads = uniform(rng, 1, 2);
  const auto d = heads * uniform(rng, 1, 3);
  const auto b = uniform(rng, 1, 2), lq = uniform(rng, 1, 4);
  const bool causal = uniform(rng, 0, 1) == 1;
  const auto lk = causal ? lq : uniform(rng, 1, 4);
  Tensor q = random_tensor(rng, {b, lq, d}), k = random_tensor(rng, {b, lk, d}),
         v = random_tensor(rng, {b, lk, d});
  Tensor w = random_tensor(rng, {b, lq, d}, false);
  return {[=] { return probe(attention(q, k, v, heads, causal), w); }, {q, k, v}};
}

Case mca_case(Rng& rng) {
  auto store = std::make_shared<ParamStore>();
  const auto heads = uniform(rng, 1, 2);
  const auto d = heads * 2;
  const auto mha = MultiHeadAttention::create(ParamFactory(*store, rng, "mca", ParamGroup::NewModule), d, heads);
  const auto b = uniform(rng, 1, 2), lq = uniform(rng, 1, 3), lk = uniform(rng, 1, 3);
  Tensor q = random_tensor(rng, {b, lq, d}), kv = random_tensor(rng, {b, lk, d});
  Tensor w = random_tensor(rng, {b, lq, d}, false);
  auto params = store_params(*store);
  params.push_back(q);
  params.push_back(kv);
  return {[=] { return probe(mca(q, kv, kv, mha), w); }, params};
}

CaseBuilder fusion_case(FusionVariant variant) {
  return [variant](Rng& rng) {
    auto store = std::make_shared<ParamStore>();
    FusionConfig cfg;
    cfg.variant = variant;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.num_blocks = 1;
    cfg.text_dim = uniform(rng, 0, 1) ? 8 : 6;
    cfg.image_dim = uniform(rng, 0, 1) ? 8 : 10;
    auto enc = std::make_shared<FusionEncoder>(
        ParamFactory(*store, rng, "fusion", ParamGroup::NewModule), cfg);
    const auto b = uniform(rng, 1, 2), l = uniform(rng, 1, 3), n = uniform(rng, 1, 3);
    Tensor t = random_tensor(rng, {b, l, cfg.text_dim}), v = random_tensor(rng, {b, n, cfg.image_dim});
    Tensor w = random_tensor(rng, {b, l, cfg.hidden_dim}, false);
    auto params = store_params(*store);
    params.push_back(t);
    params.push_back(v);
    return Case{[=] { return probe(enc->fuse(t, v).states, w); }, params, 3};
  };
}

Case image_encoder_case(Rng& rng) {
  auto store = std::make_shared<ParamStore>();
  ImageEncoderConfig cfg{4, 4, 1, 2, 8, 1, 2, 3};
  auto enc = std::make_shared<ImageEncoder>(ParamFactory(*store, rng, "image", ParamGroup::Encoder), cfg);
  std::vector<Image> images(uniform(rng, 1, 2), Image(4, 4, 1));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& im : images) {
    for (auto& p : im.pixels) p = u(rng);
  }
  Tensor w = random_tensor(rng, {images.size(), cfg.joint_dim}, false);
  return {[=] { return probe(enc->encode(images).global_embed, w); }, store_params(*store), 3};
}

Case text_encoder_case(Rng& rng) {
  auto store = std::make_shared<ParamStore>();
  TextEncoderConfig cfg{8, 5, 8, 1, 2, 3};
  auto enc = std::make_shared<TextEncoder>(ParamFactory(*store, rng, "text", ParamGroup::Encoder), cfg);
  std::vector<std::vector<TokenId>> ids(uniform(rng, 1, 2));
  for (auto& s : ids) {
    const auto eos = uniform(rng, 1, 4);
    s.assign(5, kPadId);
    s[0] = kSosId;
    for (std::size_t i = 1; i < eos; ++i) s[i] = uniform(rng, kNumSpecialTokens, 7);
    s[eos] = kEosId;
  }
  Tensor w = random_tensor(rng, {ids.size(), cfg.joint_dim}, false);
  return {[=] { return probe(enc->encode(ids).global_embed, w); }, store_params(*store), 3};
}

Case irr_case(Rng& rng) {
  auto store = std::make_shared<ParamStore>();
  const std::size_t d = 4, vocab = 7;
  const auto head = MlmHead::create(ParamFactory(*store, rng, "mlm", ParamGroup::NewModule), d, vocab);
  const auto b = uniform(rng, 1, 2), l = uniform(rng, 2, 4);
  Tensor h = random_tensor(rng, {b, l, d});
  std::vector<MaskedPositions> masked(b);
  for (auto& m : masked) {
    for (std::size_t i = 0; i < l; ++i) {
      if (uniform(rng, 0, 1)) {
        m.positions.push_back(i);
        m.original_ids.push_back(uniform(rng, 0, vocab - 1));
      }
    }
  }
  if (masked[0].empty()) {
    masked[0].positions.push_back(0);
    masked[0].original_ids.push_back(1);
  }
  const bool literal = uniform(rng, 0, 1) == 1;
  auto params = store_params(*store);
  params.push_back(h);
  return {[=] { return irr_loss(FusedStates{h}, masked, head, literal); }, params};
}

Case sdm_case(Rng& rng) {
  const auto n = uniform(rng, 1, 6), d = uniform(rng, 2, 5);
  Tensor img = random_tensor(rng, {n, d}), txt = random_tensor(rng, {n, d});
  const auto labels = random_labels(rng, n, uniform(rng, 1, n));
  SdmConfig cfg;
  cfg.temperature = uniform(rng, 0, 1) ? 0.02 : 0.5;
  cfg.direction = uniform(rng, 0, 1) ? KlDirection::PredictedFirst : KlDirection::LabelFirst;
  return {[=] { return sdm_loss(PairBatch{img, txt, labels}, cfg); }, {img, txt}};
}

Case id_case(Rng& rng) {
  auto store = std::make_shared<ParamStore>();
  const auto n = uniform(rng, 1, 5), d = uniform(rng, 2, 4), classes = uniform(rng, 2, 5);
  const auto cls = Linear::create(ParamFactory(*store, rng, "id", ParamGroup::NewModule), d, classes);
  Tensor img = random_tensor(rng, {n, d}), txt = random_tensor(rng, {n, d});
  const auto labels = random_labels(rng, n, classes);
  auto params = store_params(*store);
  params.push_back(img);
  params.push_back(txt);
  return {[=] { return id_loss(PairBatch{img, txt, labels}, cls); }, params};
}

Case infonce_case(Rng& rng) {
  const auto n = uniform(rng, 1, 6), d = uniform(rng, 2, 5);
  Tensor img = random_tensor(rng, {n, d}), txt = random_tensor(rng, {n, d});
  const double tau = uniform(rng, 0, 1) ? 0.02 : 0.3;
  const auto labels = random_labels(rng, n, n);
  return {[=] { return infonce_loss(PairBatch{img, txt, labels}, tau); }, {img, txt}};
}

Case cross_entropy_case(Rng& rng) {
  const auto n = uniform(rng, 1, 4), c = uniform(rng, 2, 6);
  Tensor x = random_tensor(rng, {n, c}, true, 2.0);
  const auto targets = random_labels(rng, n, c);
  return {[=] { return cross_entropy(x, targets); }, {x}};
}

Case l2_normalize_case(Rng& rng) {
  const auto n = uniform(rng, 1, 4), d = uniform(rng, 1, 5);
  Tensor x = random_tensor(rng, {n, d});
  Tensor w = random_tensor(rng, {n, d}, false);
  return {[=] { return probe(l2_normalize_rows(x), w); }, {x}};
}

const std::vector<std::pair<std::string, CaseBuilder>>& suite() {
  static const std::vector<std::pair<std::string, CaseBuilder>> ops = {
      {"matmul", matmul_case},
      {"softmax", softmax_case},
      {"log_softmax", log_softmax_case},
      {"layer_norm", layer_norm_case},
      {"gelu", gelu_case},
      {"linear", linear_case},
      {"cross_entropy", cross_entropy_case},
      {"l2_normalize_rows", l2_normalize_case},
      {"attention", attention_case},
      {"mca", mca_case},
      {"fusion_ours", fusion_case(FusionVariant::Ours)},
      {"fusion_co_attention", fusion_case(FusionVariant::CoAttention)},
      {"fusion_merged_attention", fusion_case(FusionVariant::MergedAttention)},
      {"image_encoder", image_encoder_case},
      {"text_encoder", text_encoder_case},
      {"irr_loss", irr_case},
      {"sdm_loss", sdm_case},
      {"id_loss", id_case},
      {"infonce_loss", infonce_case},
  };
  return ops;
}

}  // namespace

std::vector<std::string> gradient_suite_ops() {
  std::vector<std::string> names;
  for (const auto& [name, builder] : suite()) names.push_back(name);
  return names;
}

std::vector<GradientSuiteRow> run_gradient_suite(const GradientSuiteOptions& options) {
  const auto names = gradient_suite_ops();
  for (const auto& o : options.only) {
    if (std::find(names.begin(), names.end(), o) == names.end()) {
      throw ConfigError("unknown gradient-suite operation '" + o + "'");
    }
  }
  std::vector<GradientSuiteRow> rows;
  for (std::size_t op = 0; op < suite().size(); ++op) {
    const auto& [name, builder] = suite()[op];
    if (!options.only.empty() &&
        std::find(options.only.begin(), options.only.end(), name) == options.only.end()) {
      continue;
    }
    GradientSuiteRow row;
    row.op = name;
    for (std::size_t c = 0; c < options.cases_per_op; ++c) {
      const auto case_seed = substream_seed(substream_seed(options.seed, op), c);
      Rng rng(case_seed);
      Case tc = builder(rng);
      GradCheckOptions gc;
      gc.step = options.step;
      gc.max_coords_per_param = tc.max_coords;
      gc.sample_seed = case_seed;
      const auto r = check_gradients(tc.loss, tc.params, gc);
      ++row.cases;
      row.coords_checked += r.coords_checked;
      if (!r.passed(options.tolerance)) ++row.failures;
      if (c == 0 || r.max_rel_error > row.max_rel_error) {
        row.max_rel_error = r.max_rel_error;
        row.worst_case = c;
        row.worst_analytic = r.worst_analytic;
        row.worst_numeric = r.worst_numeric;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace irra
