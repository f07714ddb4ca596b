#pragma once

#include "irra/array_io.hpp"
#include "irra/data.hpp"
#include "irra/encoders.hpp"
#include "irra/fusion.hpp"
#include "irra/losses.hpp"
#include "irra/metrics.hpp"
#include "irra/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace irra {

// ---------------------------------------------------------------------------
// Configuration

struct LossConfig {
  LossToggles toggles;
  SdmConfig sdm;
  double infonce_temperature = 0.02;
  bool irr_literal_vocab_scaling = false;
};

struct ScheduleConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double base_lr = 1e-3;
  double warmup_start_lr = 1e-4;
  std::size_t warmup_epochs = 5;
  double new_module_lr = 5e-3;
  /// Evaluate the validation split after every epoch.
  bool eval_every_epoch = true;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  ImageEncoderConfig image;
  /// vocab_size is replaced by the size of the vocabulary built at training.
  TextEncoderConfig text;
  /// text_dim and image_dim follow the encoder widths.
  FusionConfig fusion;
  LossConfig loss;
  ScheduleConfig schedule;
  AugmentConfig augment;
  MaskingConfig masking;

  /// Throws ConfigError on inconsistent or out-of-range settings.
  void validate() const;
};

/// Nested JSON form; every field appears under its dotted key
/// (e.g. "loss.sdm", "train.epochs").
nlohmann::json config_to_json(const TrainConfig& config);
/// Overlays `j` onto the defaults. Unknown keys and type mismatches throw
/// ParseError; the result is validated.
TrainConfig config_from_json(const nlohmann::json& j);
/// Reads a .json or .toml file.
TrainConfig load_config(const std::filesystem::path& path);

/// Sets the leaf at `dotted_key` of a config JSON from its textual form,
/// converting to the type of the existing value.
void apply_override(nlohmann::json& config, const std::string& dotted_key, const std::string& value);
/// Dotted keys of every leaf, in document order.
std::vector<std::string> config_leaf_keys(const nlohmann::json& config);

// ---------------------------------------------------------------------------
// Learning-rate schedule and optimiser

struct LrSchedule {
  double base_lr = 1e-5;
  double warmup_start_lr = 1e-6;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
};

/// Linear ramp warmup_start_lr -> base_lr over the warmup steps, then half
/// cosine decay to zero at total_steps.
double lr_at(std::size_t step, const LrSchedule& schedule);

/// Encoder-group schedule of a run with `steps_per_epoch` optimiser steps.
LrSchedule make_schedule(const ScheduleConfig& config, std::size_t steps_per_epoch);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update in place. Throws ShapeError when the
/// spans or state disagree in length.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const AdamConfig& config = {});

/// Adam over a ParamStore with one learning rate per parameter group.
class Adam {
 public:
  explicit Adam(ParamStore& store, AdamConfig config = {});
  void step(double encoder_lr, double new_module_lr);

 private:
  ParamStore& store_;
  AdamConfig config_;
  std::vector<AdamState> states_;
};

// ---------------------------------------------------------------------------
// Model

/// Every learnable module of the framework. The fusion encoder and MLM head
/// are built regardless of toggles so checkpoints share one layout.
struct IrraModel {
  IrraModel(const TrainConfig& config, std::size_t vocab_size, std::size_t num_classes);

  TrainConfig config;
  std::size_t num_classes;
  /// Per-module initialisation generators, seeded from config.seed.
  std::vector<Rng> init_rngs;
  ParamStore store;
  ImageEncoder image;
  TextEncoder text;
  FusionEncoder fusion;
  MlmHead mlm;
  Linear id_classifier;
};

/// Contiguous class indices for the distinct identities of `records`.
std::map<std::size_t, std::size_t> identity_classes(std::span<const AnnotationRecord> records);

// ---------------------------------------------------------------------------
// Training

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double encoder_lr = 0.0;
  double new_module_lr = 0.0;
  std::optional<double> irr, sdm, id, infonce;
  double total = 0.0;
  double seconds = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  RetrievalReport report;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

nlohmann::json to_json(const StepRecord& r);
nlohmann::json to_json(const EpochRecord& r);
nlohmann::json report_to_json(const RetrievalReport& r, bool per_query = false);
/// One JSON object per line: step records, and epoch records after the
/// steps of their epoch.
std::string run_log_jsonl(const RunLog& log);

struct TrainResult {
  std::unique_ptr<IrraModel> model;
  Vocab vocab;
  std::map<std::size_t, std::size_t> classes;
  RunLog log;
};

/// Called after each step and each epoch evaluation; may be empty.
struct TrainCallbacks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains on the "train" split and evaluates on "val" when present.
/// Deterministic for a fixed config.seed apart from the wall-clock field.
/// A non-finite loss throws NumericalError naming the component and step.
TrainResult train_run(const Dataset& dataset, const TrainConfig& config,
                      const TrainCallbacks& callbacks = {});

// ---------------------------------------------------------------------------
// Inference and evaluation

/// L2-normalised global embeddings, one row per input.
RowMatrix embed_images(const IrraModel& model, std::span<const Image> images);
RowMatrix embed_texts(const IrraModel& model, const Vocab& vocab,
                      std::span<const std::string> captions);

struct EvalResult {
  RowMatrix similarity;  // [captions x images]
  std::vector<std::size_t> query_ids;
  std::vector<std::size_t> gallery_ids;
  RowMatrix query_embeddings;    // L2-normalised, one row per caption
  RowMatrix gallery_embeddings;  // L2-normalised, one row per image
  RetrievalReport report;
  /// Fusion forward passes executed while evaluating; always zero.
  std::uint64_t fusion_forwards = 0;
};

/// Text-to-image retrieval over the records of `split`: every caption is a
/// query and every image a gallery item. Throws ContractError when the split
/// is empty or when evaluation touched the fusion encoder.
EvalResult evaluate_split(const IrraModel& model, const Vocab& vocab, const Dataset& dataset,
                          const std::string& split,
                          std::span<const std::size_t> ks = kDefaultKs);

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const IrraModel& model,
                     const Vocab& vocab);

struct LoadedCheckpoint {
  std::unique_ptr<IrraModel> model;
  Vocab vocab;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Experiment harnesses

struct FusionComparisonRow {
  FusionVariant variant = FusionVariant::Ours;
  std::size_t param_count = 0;
  /// Median wall-clock of one fusion forward pass on a training-sized batch.
  double latency_ms = 0.0;
  /// Validation Rank-k after training, when a dataset was supplied.
  std::optional<RetrievalReport> report;
};

struct FusionComparisonOptions {
  std::size_t latency_repeats = 30;
  /// When set, each variant is also trained with the full objective.
  const Dataset* dataset = nullptr;
};

/// One row per variant in the order ours, co_attention, merged_attention.
std::vector<FusionComparisonRow> compare_fusion_variants(const TrainConfig& config,
                                                         const FusionComparisonOptions& options = {});

struct AblationRow {
  std::size_t number = 0;
  std::string name;
  LossToggles toggles;
  bool implemented = true;
  /// Mean over seeds of the final validation report.
  std::vector<double> rank_k;
  double mean_ap = 0.0;
  double mean_inp = 0.0;
  std::vector<double> per_seed_rank1;
};

/// The eight-row component grid: InfoNCE baseline, an unimplemented
/// projection-matching row, then SDM / ID / IRR combinations.
std::vector<LossToggles> ablation_grid_toggles();
std::vector<AblationRow> run_ablation(const Dataset& dataset, const TrainConfig& base,
                                      std::span<const std::uint64_t> seeds);

}  // namespace irra
