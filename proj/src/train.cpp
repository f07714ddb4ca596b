#include "irra/train.hpp"

#include "irra/errors.hpp"
#include "irra/ops.hpp"
#include "irra/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace irra {

using nlohmann::json;

namespace {

// Substream ids of the run seed.
enum Stream : std::uint64_t {
  kInitImage = 1,
  kInitText = 2,
  kInitFusion = 3,
  kInitMlm = 4,
  kInitId = 5,
  kShuffle = 10,
  kSampleBase = 1000,
};

constexpr std::size_t kEmbedChunk = 64;

std::vector<const AnnotationRecord*> records_of_split(const Dataset& ds, const std::string& split) {
  std::vector<const AnnotationRecord*> out;
  for (const auto& r : ds.records) {
    if (r.split == split) out.push_back(&r);
  }
  return out;
}

TextEncoderConfig text_config(const TrainConfig& c, std::size_t vocab_size) {
  TextEncoderConfig t = c.text;
  t.vocab_size = vocab_size;
  return t;
}

FusionConfig fusion_config(const TrainConfig& c) {
  FusionConfig f = c.fusion;
  f.text_dim = c.text.embed_dim;
  f.image_dim = c.image.embed_dim;
  return f;
}

TrainConfig resolved(const TrainConfig& c, std::size_t vocab_size) {
  TrainConfig out = c;
  out.text = text_config(c, vocab_size);
  out.fusion = fusion_config(c);
  return out;
}

std::vector<Rng> init_streams(std::uint64_t seed) {
  std::vector<Rng> rngs;
  for (auto s : {kInitImage, kInitText, kInitFusion, kInitMlm, kInitId}) {
    rngs.emplace_back(substream_seed(seed, s));
  }
  return rngs;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedule and optimiser

double lr_at(std::size_t step, const LrSchedule& s) {
  if (step < s.warmup_steps) {
    const double frac = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    return s.warmup_start_lr + (s.base_lr - s.warmup_start_lr) * frac;
  }
  if (s.total_steps <= s.warmup_steps) return s.base_lr;
  const double progress =
      std::min(1.0, static_cast<double>(step - s.warmup_steps) /
                        static_cast<double>(s.total_steps - s.warmup_steps));
  return s.base_lr * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

LrSchedule make_schedule(const ScheduleConfig& c, std::size_t steps_per_epoch) {
  return {c.base_lr, c.warmup_start_lr, c.warmup_epochs * steps_per_epoch,
          c.epochs * steps_per_epoch};
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const AdamConfig& config) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.t == 0 && state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimiser state does not match the parameter size");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

Adam::Adam(ParamStore& store, AdamConfig config)
    : store_(store), config_(config), states_(store.params().size()) {}

void Adam::step(double encoder_lr, double new_module_lr) {
  auto& params = store_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    // Parameters outside this step's graph are left alone.
    if (!p.tensor.has_grad()) continue;
    const double lr = p.group == ParamGroup::Encoder ? encoder_lr : new_module_lr;
    adam_step(p.tensor.mutable_values(), p.tensor.grad(), states_[i], lr, config_);
  }
}

// ---------------------------------------------------------------------------
// Model

IrraModel::IrraModel(const TrainConfig& cfg, std::size_t vocab_size, std::size_t classes)
    : config(resolved(cfg, vocab_size)),
      num_classes(classes),
      init_rngs(init_streams(cfg.seed)),
      image(ParamFactory(store, init_rngs[0], "image", ParamGroup::Encoder), config.image),
      text(ParamFactory(store, init_rngs[1], "text", ParamGroup::Encoder), config.text),
      fusion(ParamFactory(store, init_rngs[2], "fusion", ParamGroup::NewModule),
             config.fusion),
      mlm(MlmHead::create(ParamFactory(store, init_rngs[3], "mlm", ParamGroup::NewModule),
                          config.fusion.hidden_dim, vocab_size)),
      id_classifier(Linear::create(
          ParamFactory(store, init_rngs[4], "id_classifier", ParamGroup::NewModule),
          config.image.joint_dim, std::max<std::size_t>(classes, 1))) {}

std::map<std::size_t, std::size_t> identity_classes(std::span<const AnnotationRecord> records) {
  std::map<std::size_t, std::size_t> classes;
  for (const auto& r : records) classes.emplace(r.identity_id, 0);
  std::size_t next = 0;
  for (auto& [id, cls] : classes) cls = next++;
  return classes;
}

// ---------------------------------------------------------------------------
// Logs

json report_to_json(const RetrievalReport& r, bool per_query) {
  json j = {{"ks", r.ks}, {"mAP", r.mean_ap}, {"mINP", r.mean_inp}};
  json ranks = json::object();
  for (std::size_t i = 0; i < r.ks.size(); ++i) ranks["R" + std::to_string(r.ks[i])] = r.rank_k[i];
  j["rank"] = ranks;
  if (per_query) {
    json q = json::array();
    for (const auto& pq : r.per_query) {
      std::size_t first_hit = 0;
      while (first_hit < pq.relevant.size() && !pq.relevant[first_hit]) ++first_hit;
      q.push_back({{"query", pq.query},
                   {"first_relevant_rank", first_hit + 1},
                   {"ap", pq.average_precision},
                   {"inp", pq.inverse_negative_penalty}});
    }
    j["per_query"] = q;
  }
  return j;
}

json to_json(const StepRecord& r) {
  json j = {{"type", "step"},         {"epoch", r.epoch},
            {"step", r.step},         {"encoder_lr", r.encoder_lr},
            {"new_module_lr", r.new_module_lr}, {"total", r.total},
            {"seconds", r.seconds}};
  const auto put = [&](const char* name, const std::optional<double>& v) {
    j[name] = v ? json(*v) : json(nullptr);
  };
  put("irr", r.irr);
  put("sdm", r.sdm);
  put("id", r.id);
  put("infonce", r.infonce);
  return j;
}

json to_json(const EpochRecord& r) {
  return {{"type", "epoch"}, {"epoch", r.epoch}, {"report", report_to_json(r.report)}};
}

std::string run_log_jsonl(const RunLog& log) {
  std::ostringstream out;
  std::size_t e = 0;
  for (const auto& s : log.steps) {
    while (e < log.epochs.size() && log.epochs[e].epoch < s.epoch) out << to_json(log.epochs[e++]).dump() << "\n";
    out << to_json(s).dump() << "\n";
  }
  while (e < log.epochs.size()) out << to_json(log.epochs[e++]).dump() << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Training

TrainResult train_run(const Dataset& dataset, const TrainConfig& config,
                      const TrainCallbacks& callbacks) {
  config.validate();
  std::vector<AnnotationRecord> train;
  for (const auto& r : dataset.records) {
    if (r.split == "train") train.push_back(r);
  }
  if (train.empty()) throw ContractError("dataset has no records in the 'train' split");

  std::vector<std::string> captions;
  for (const auto& r : train) captions.insert(captions.end(), r.captions.begin(), r.captions.end());
  TrainResult result;
  result.vocab = Vocab::build(captions);
  result.classes = identity_classes(train);
  result.model = std::make_unique<IrraModel>(config, result.vocab.size(), result.classes.size());
  IrraModel& model = *result.model;
  const auto& cfg = model.config;

  struct Sample {
    std::size_t record;
    std::vector<TokenId> ids;
  };
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (const auto& c : train[i].captions) {
      samples.push_back({i, tokenize(c, result.vocab, cfg.text.max_len)});
    }
  }
  const std::size_t batch = cfg.schedule.batch_size;
  const std::size_t steps_per_epoch = (samples.size() + batch - 1) / batch;
  const LrSchedule schedule = make_schedule(cfg.schedule, steps_per_epoch);
  const double new_module_scale = cfg.schedule.new_module_lr / cfg.schedule.base_lr;
  const bool has_val = std::any_of(dataset.records.begin(), dataset.records.end(),
                                   [](const auto& r) { return r.split == "val"; });

  Adam optimiser(model.store);
  Rng shuffle_rng(substream_seed(cfg.seed, kShuffle));
  std::vector<std::size_t> order(samples.size());
  std::size_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const auto epoch_seed = substream_seed(cfg.seed, kSampleBase + epoch);

    for (std::size_t begin = 0; begin < order.size(); begin += batch, ++global_step) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t end = std::min(order.size(), begin + batch);
      const std::size_t n = end - begin;
      std::vector<Image> images(n);
      std::vector<std::vector<TokenId>> clean_ids(n), masked_ids(n);
      std::vector<MaskedPositions> masked(n);
      std::vector<std::size_t> identities(n), class_labels(n);
      // Each sample draws from its own substream, so workers may run in any order.
      parallel_for(n, [&](std::size_t i) {
        const std::size_t k = begin + i;
        const Sample& s = samples[order[k]];
        const AnnotationRecord& rec = train[s.record];
        Rng rng(substream_seed(epoch_seed, k));
        images[i] = augment_image(dataset.image_for(rec), rng, cfg.augment);
        auto mc = mask_tokens(s.ids, result.vocab.size(), rng, cfg.masking);
        clean_ids[i] = s.ids;
        masked_ids[i] = std::move(mc.input_ids);
        masked[i] = std::move(mc.masked);
        identities[i] = rec.identity_id;
        class_labels[i] = result.classes.at(rec.identity_id);
      });

      const auto& toggles = cfg.loss.toggles;
      const EncodedImage img = model.image.encode(images);
      const EncodedText txt = model.text.encode(clean_ids);
      const PairBatch pairs{img.global_embed, txt.global_embed, identities};
      LossComponents parts;
      if (toggles.irr) {
        const EncodedText masked_txt = model.text.encode(masked_ids);
        const FusedStates fused = model.fusion.fuse(masked_txt.token_states, img.token_states);
        parts.irr = irr_loss(fused, masked, model.mlm, cfg.loss.irr_literal_vocab_scaling);
      }
      if (toggles.sdm) parts.sdm = sdm_loss(pairs, cfg.loss.sdm);
      if (toggles.id) {
        parts.id = id_loss(PairBatch{img.global_embed, txt.global_embed, class_labels},
                           model.id_classifier);
      }
      if (toggles.infonce) parts.infonce = infonce_loss(pairs, cfg.loss.infonce_temperature);

      StepRecord rec;
      rec.epoch = epoch;
      rec.step = global_step;
      const auto take = [&](const char* name, const Tensor& t) -> std::optional<double> {
        if (!t.defined()) return std::nullopt;
        const double v = t.item();
        if (!std::isfinite(v)) {
          throw NumericalError(std::string("non-finite ") + name + " loss at epoch " +
                               std::to_string(epoch) + ", step " + std::to_string(global_step));
        }
        return v;
      };
      rec.irr = take("irr", parts.irr);
      rec.sdm = take("sdm", parts.sdm);
      rec.id = take("id", parts.id);
      rec.infonce = take("infonce", parts.infonce);
      const Tensor total = total_loss(parts, toggles);
      rec.total = *take("total", total);

      model.store.zero_grad();
      backward(total);
      rec.encoder_lr = lr_at(global_step, schedule);
      rec.new_module_lr = rec.encoder_lr * new_module_scale;
      optimiser.step(rec.encoder_lr, rec.new_module_lr);
      rec.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (callbacks.on_step) callbacks.on_step(rec);
      result.log.steps.push_back(std::move(rec));
    }

    if (cfg.schedule.eval_every_epoch && has_val) {
      EpochRecord er{epoch, evaluate_split(model, result.vocab, dataset, "val").report};
      if (callbacks.on_epoch) callbacks.on_epoch(er);
      result.log.epochs.push_back(std::move(er));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference

namespace {

RowMatrix normalized_rows(const Tensor& embeds) {
  RowMatrix m = embeds.matrix();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n == 0.0) throw DegenerateInputError("zero-norm embedding at row " + std::to_string(i));
    m.row(i) /= n;
  }
  return m;
}

}  // namespace

RowMatrix embed_images(const IrraModel& model, std::span<const Image> images) {
  RowMatrix out(static_cast<Eigen::Index>(images.size()),
                static_cast<Eigen::Index>(model.config.image.joint_dim));
  for (std::size_t b = 0; b < images.size(); b += kEmbedChunk) {
    const auto n = std::min(kEmbedChunk, images.size() - b);
    const auto enc = model.image.encode(images.subspan(b, n)).global_embed.detach();
    out.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(n)) = normalized_rows(enc);
  }
  return out;
}

RowMatrix embed_texts(const IrraModel& model, const Vocab& vocab,
                      std::span<const std::string> captions) {
  RowMatrix out(static_cast<Eigen::Index>(captions.size()),
                static_cast<Eigen::Index>(model.config.text.joint_dim));
  for (std::size_t b = 0; b < captions.size(); b += kEmbedChunk) {
    const auto n = std::min(kEmbedChunk, captions.size() - b);
    std::vector<std::vector<TokenId>> ids;
    for (std::size_t i = b; i < b + n; ++i) {
      ids.push_back(tokenize(captions[i], vocab, model.config.text.max_len));
    }
    const auto enc = model.text.encode(ids).global_embed.detach();
    out.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(n)) = normalized_rows(enc);
  }
  return out;
}

EvalResult evaluate_split(const IrraModel& model, const Vocab& vocab, const Dataset& dataset,
                          const std::string& split, std::span<const std::size_t> ks) {
  const auto records = records_of_split(dataset, split);
  if (records.empty()) throw ContractError("split '" + split + "' has no records");
  const auto before = FusionEncoder::forward_count();

  EvalResult out;
  std::vector<Image> images;
  std::vector<std::string> captions;
  for (const auto* r : records) {
    images.push_back(dataset.image_for(*r));
    out.gallery_ids.push_back(r->identity_id);
    for (const auto& c : r->captions) {
      captions.push_back(c);
      out.query_ids.push_back(r->identity_id);
    }
  }
  out.gallery_embeddings = embed_images(model, images);
  out.query_embeddings = embed_texts(model, vocab, captions);
  out.similarity = out.query_embeddings * out.gallery_embeddings.transpose();
  out.fusion_forwards = FusionEncoder::forward_count() - before;
  if (out.fusion_forwards != 0) {
    throw ContractError("evaluation ran " + std::to_string(out.fusion_forwards) +
                        " fusion forward passes");
  }
  out.report = evaluate(out.similarity, out.query_ids, out.gallery_ids, ks);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const IrraModel& model,
                     const Vocab& vocab) {
  ArrayFile file;
  file.metadata = {{"kind", "checkpoint"},
                   {"config", config_to_json(model.config)},
                   {"num_classes", model.num_classes},
                   {"vocab", vocab.words()}};
  for (const auto& p : model.store.params()) {
    const auto v = p.tensor.values();
    file.arrays.push_back({p.name, p.tensor.shape(), {v.begin(), v.end()}});
  }
  save_array_file(path, file);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const ArrayFile file = load_array_file(path);
  const auto& meta = file.metadata;
  LoadedCheckpoint out;
  TrainConfig config;
  std::size_t num_classes = 0;
  try {
    if (meta.value("kind", "") != "checkpoint") throw ParseError("not a checkpoint");
    config = config_from_json(meta.at("config"));
    num_classes = meta.at("num_classes").get<std::size_t>();
    out.vocab = Vocab::from_words(meta.at("vocab").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw ParseError("'" + path.string() + "': bad checkpoint metadata: " + e.what());
  } catch (const ContractError& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
  out.model = std::make_unique<IrraModel>(config, out.vocab.size(), num_classes);
  for (auto& p : out.model->store.params()) {
    const NamedArray* a = file.find(p.name);
    if (!a) throw ParseError("'" + path.string() + "': missing array '" + p.name + "'");
    if (a->shape != p.tensor.shape()) {
      throw ParseError("'" + path.string() + "': array '" + p.name + "' has shape " +
                       shape_str(a->shape) + ", expected " + shape_str(p.tensor.shape()));
    }
    std::copy(a->values.begin(), a->values.end(), p.tensor.mutable_values().begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Harnesses

std::vector<FusionComparisonRow> compare_fusion_variants(const TrainConfig& config,
                                                         const FusionComparisonOptions& options) {
  config.validate();
  const std::vector<FusionVariant> variants = {FusionVariant::Ours, FusionVariant::CoAttention,
                                               FusionVariant::MergedAttention};
  std::vector<FusionComparisonRow> rows;
  std::vector<std::unique_ptr<ParamStore>> stores;
  std::vector<FusionEncoder> encoders;
  for (auto v : variants) {
    TrainConfig c = config;
    c.fusion.variant = v;
    const FusionConfig fc = fusion_config(c);
    rows.push_back({v, fusion_parameter_count(fc), 0.0, std::nullopt});
    stores.push_back(std::make_unique<ParamStore>());
    Rng rng(substream_seed(config.seed, kInitFusion));
    encoders.emplace_back(ParamFactory(*stores.back(), rng, "fusion", ParamGroup::NewModule), fc);
  }

  Rng rng(substream_seed(config.seed, kShuffle));
  std::normal_distribution<double> normal;
  const auto random_tensor = [&](Shape shape) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = normal(rng);
    return Tensor::from_values(std::move(shape), std::move(v));
  };
  const std::size_t b = config.schedule.batch_size;
  const Tensor text = random_tensor({b, config.text.max_len, config.text.embed_dim});
  const Tensor image = random_tensor({b, config.image.num_patches(), config.image.embed_dim});

  // Variants are timed round-robin so drift affects all of them alike.
  std::vector<std::vector<double>> times(variants.size());
  const std::size_t warmup = 2;
  for (std::size_t r = 0; r < options.latency_repeats + warmup; ++r) {
    for (std::size_t i = 0; i < variants.size(); ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto fused = encoders[i].fuse(text, image);
      const auto t1 = std::chrono::steady_clock::now();
      if (r >= warmup) times[i].push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  }
  for (std::size_t i = 0; i < variants.size(); ++i) {
    auto& t = times[i];
    if (!t.empty()) {
      std::sort(t.begin(), t.end());
      rows[i].latency_ms = t.size() % 2 ? t[t.size() / 2] : (t[t.size() / 2 - 1] + t[t.size() / 2]) / 2.0;
    }
    if (options.dataset) {
      TrainConfig c = config;
      c.fusion.variant = variants[i];
      c.schedule.eval_every_epoch = false;
      const auto trained = train_run(*options.dataset, c);
      rows[i].report = evaluate_split(*trained.model, trained.vocab, *options.dataset, "val").report;
    }
  }
  return rows;
}

std::vector<LossToggles> ablation_grid_toggles() {
  return {
      {false, false, false, true},  // 0 baseline
      {false, false, false, false},  // 1 projection matching, not provided
      {true, false, false, false},  // 2
      {false, true, false, true},  // 3
      {false, false, true, true},  // 4
      {true, true, false, false},  // 5
      {true, false, true, false},  // 6
      {true, true, true, false},  // 7
  };
}

std::vector<AblationRow> run_ablation(const Dataset& dataset, const TrainConfig& base,
                                      std::span<const std::uint64_t> seeds) {
  static const char* const kNames[] = {"Baseline (InfoNCE)", "+CMPM", "+SDM", "+ID",
                                       "+IRR", "+SDM+ID", "+SDM+IRR", "IRRA"};
  const auto grid = ablation_grid_toggles();
  std::vector<AblationRow> rows;
  for (std::size_t n = 0; n < grid.size(); ++n) {
    AblationRow row;
    row.number = n;
    row.name = kNames[n];
    row.toggles = grid[n];
    row.implemented = grid[n].any();
    if (row.implemented && !seeds.empty()) {
      std::vector<double> rank_sum;
      for (auto seed : seeds) {
        TrainConfig c = base;
        c.seed = seed;
        c.loss.toggles = grid[n];
        c.schedule.eval_every_epoch = false;
        const auto trained = train_run(dataset, c);
        const auto report = evaluate_split(*trained.model, trained.vocab, dataset, "val").report;
        if (rank_sum.empty()) rank_sum.assign(report.rank_k.size(), 0.0);
        for (std::size_t i = 0; i < rank_sum.size(); ++i) rank_sum[i] += report.rank_k[i];
        row.mean_ap += report.mean_ap;
        row.mean_inp += report.mean_inp;
        row.per_seed_rank1.push_back(report.rank(1));
      }
      const double s = static_cast<double>(seeds.size());
      for (auto& r : rank_sum) r /= s;
      row.rank_k = rank_sum;
      row.mean_ap /= s;
      row.mean_inp /= s;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace irra
