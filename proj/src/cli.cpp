#include "irra/cli.hpp"

#include "irra/data.hpp"
#include "irra/errors.hpp"
#include "irra/gradient_suite.hpp"
#include "irra/metrics.hpp"
#include "irra/parallel.hpp"
#include "irra/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <deque>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace irra {

using nlohmann::json;

namespace {

// Dotted-key flags generated from the config defaults. Values are applied
// on top of the config file after parsing.
class ConfigFlags {
 public:
  void attach(CLI::App* app) {
    const json defaults = config_to_json(TrainConfig{});
    for (const auto& key : config_leaf_keys(defaults)) {
      const json* leaf = &defaults;
      for (std::size_t start = 0;;) {
        const auto dot = key.find('.', start);
        leaf = &(*leaf)[key.substr(start, dot - start)];
        if (dot == std::string::npos) break;
        start = dot + 1;
      }
      Entry e{key, nullptr, nullptr, nullptr};
      if (leaf->is_boolean()) {
        e.flag = &bools_.emplace_back(false);
        e.option = app->add_flag("--" + key, *e.flag, "config override (true/false)");
      } else {
        e.text = &texts_.emplace_back();
        e.option = app->add_option("--" + key, *e.text, "config override, default " + leaf->dump());
      }
      entries_.push_back(e);
    }
    epochs_ = app->add_option("--epochs", epochs_value_, "alias of --train.epochs");
  }

  CLI::Option* option(const std::string& key) const {
    for (const auto& e : entries_) {
      if (e.key == key) return e.option;
    }
    return nullptr;
  }

  TrainConfig resolve(const std::string& config_path) const {
    json merged = config_to_json(config_path.empty() ? TrainConfig{} : load_config(config_path));
    for (const auto& e : entries_) {
      if (e.option->count() == 0) continue;
      apply_override(merged, e.key, e.flag ? (*e.flag ? "true" : "false") : *e.text);
    }
    if (epochs_->count() > 0) apply_override(merged, "train.epochs", epochs_value_);
    return config_from_json(merged);
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* option;
    bool* flag;
    std::string* text;
  };
  std::vector<Entry> entries_;
  std::deque<bool> bools_;
  std::deque<std::string> texts_;
  CLI::Option* epochs_ = nullptr;
  std::string epochs_value_;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

bool reports_identical(const RetrievalReport& a, const RetrievalReport& b) {
  return a.ks == b.ks && a.rank_k == b.rank_k && a.mean_ap == b.mean_ap && a.mean_inp == b.mean_inp;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ParseError("bad seed '" + item + "' in --seeds");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds needs at least one seed");
  return seeds;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::uint64_t seed = 0;
  SyntheticConfig synth;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  Rng rng(a.seed);
  const Dataset ds = generate_synthetic(a.synth, rng);
  validate_synthetic(ds);
  save_dataset(a.out, ds);
  std::size_t captions = 0;
  json splits = json::object();
  for (const auto& r : ds.records) {
    captions += r.captions.size();
    splits[r.split] = splits.value(r.split, 0) + 1;
  }
  out << json{{"records", ds.records.size()},
              {"identities", a.synth.num_identities},
              {"images", ds.images.size()},
              {"captions", captions},
              {"splits", splits},
              {"annotations", (std::filesystem::path(a.out) / "annotations.json").string()}}
             .dump(2)
      << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data, config, out, log;
};

int cmd_train(const TrainArgs& a, const ConfigFlags& flags, std::ostream& out, std::ostream& err) {
  const TrainConfig cfg = flags.resolve(a.config);
  const Dataset ds = load_dataset(a.data);
  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, std::ios::trunc);
    if (!log) throw IoError("cannot open '" + a.log + "' for writing");
  }
  TrainCallbacks cb;
  cb.on_step = [&](const StepRecord& r) {
    if (log) log << to_json(r).dump() << "\n";
  };
  cb.on_epoch = [&](const EpochRecord& r) {
    if (log) log << to_json(r).dump() << "\n";
    err << "epoch " << r.epoch << ": R1 " << fmt(r.report.rank(1)) << " mAP "
        << fmt(r.report.mean_ap) << " mINP " << fmt(r.report.mean_inp) << "\n";
  };
  const TrainResult result = train_run(ds, cfg, cb);
  save_checkpoint(a.out, *result.model, result.vocab);
  json summary = {{"checkpoint", a.out},
                  {"steps", result.log.steps.size()},
                  {"parameters", result.model->store.scalar_count()},
                  {"vocab_size", result.vocab.size()}};
  if (!result.log.steps.empty()) summary["final_total_loss"] = result.log.steps.back().total;
  if (!result.log.epochs.empty()) summary["final_report"] = report_to_json(result.log.epochs.back().report);
  out << summary.dump(2) << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, split = "val", sim, query_embeds, gallery_embeds, out;
  bool oracle = false;
  bool per_query = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  SimilarityTable table;
  json report;
  std::uint64_t fusion_forwards = 0;
  if (!a.sim.empty()) {
    table = load_similarity_csv(a.sim);
    report["source"] = a.sim;
  } else if (!a.query_embeds.empty() || !a.gallery_embeds.empty()) {
    if (a.query_embeds.empty() || a.gallery_embeds.empty()) {
      throw ConfigError("--query-embeds and --gallery-embeds go together");
    }
    table = similarity_from_embeddings(load_embeddings(a.query_embeds), load_embeddings(a.gallery_embeds));
    report["source"] = a.query_embeds;
  } else {
    if (a.checkpoint.empty() || a.data.empty()) {
      throw ConfigError("eval needs --checkpoint and --data, --sim, or embedding files");
    }
    const auto ckpt = load_checkpoint(a.checkpoint);
    const Dataset ds = load_dataset(a.data);
    auto r = evaluate_split(*ckpt.model, ckpt.vocab, ds, a.split);
    table = {std::move(r.similarity), std::move(r.query_ids), std::move(r.gallery_ids)};
    fusion_forwards = r.fusion_forwards;
    report["source"] = a.checkpoint;
    report["split"] = a.split;
  }
  const RetrievalReport metrics = evaluate(table.scores, table.query_ids, table.gallery_ids);
  report["num_queries"] = table.query_ids.size();
  report["num_gallery"] = table.gallery_ids.size();
  report["fusion_forwards"] = fusion_forwards;
  report["metrics"] = report_to_json(metrics, a.per_query);
  bool agree = true;
  if (a.oracle) {
    const RetrievalReport ref = evaluate_reference(table.scores, table.query_ids, table.gallery_ids);
    agree = reports_identical(metrics, ref);
    report["oracle"] = {{"agrees", agree}, {"metrics", report_to_json(ref)}};
  }
  const std::string text = report.dump(2) + "\n";
  if (!a.out.empty()) write_text(a.out, text);
  out << text;
  if (!agree) {
    err << "error: metrics disagree with the brute-force reference\n";
    return kExitContract;
  }
  return kExitOk;
}

struct ExportArgs {
  std::string checkpoint, data, split = "val", out, query_embeds, gallery_embeds;
};

int cmd_export_sim(const ExportArgs& a, std::ostream& out) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  const Dataset ds = load_dataset(a.data);
  auto r = evaluate_split(*ckpt.model, ckpt.vocab, ds, a.split);
  save_similarity_csv(a.out, {r.similarity, r.query_ids, r.gallery_ids});
  if (!a.query_embeds.empty()) save_embeddings(a.query_embeds, {r.query_embeddings, r.query_ids});
  if (!a.gallery_embeds.empty()) {
    save_embeddings(a.gallery_embeds, {r.gallery_embeddings, r.gallery_ids});
  }
  out << json{{"out", a.out},
              {"num_queries", r.query_ids.size()},
              {"num_gallery", r.gallery_ids.size()}}
             .dump(2)
      << "\n";
  return kExitOk;
}

struct AblateArgs {
  std::string data, config, seeds, out, format = "markdown";
};

int cmd_ablate(const AblateArgs& a, const ConfigFlags& flags, std::ostream& out) {
  const TrainConfig cfg = flags.resolve(a.config);
  const auto seeds = parse_seed_list(a.seeds);
  const Dataset ds = load_dataset(a.data);
  const auto rows = run_ablation(ds, cfg, seeds);
  json table = json::array();
  for (const auto& r : rows) {
    json row = {{"no", r.number},
                {"method", r.name},
                {"sdm", r.toggles.sdm},
                {"id", r.toggles.id},
                {"irr", r.toggles.irr},
                {"infonce", r.toggles.infonce},
                {"implemented", r.implemented}};
    if (r.implemented) {
      row["R1"] = r.rank_k.at(0);
      row["R5"] = r.rank_k.at(1);
      row["R10"] = r.rank_k.at(2);
      row["mAP"] = r.mean_ap;
      row["mINP"] = r.mean_inp;
      row["per_seed_R1"] = r.per_seed_rank1;
    }
    table.push_back(row);
  }
  const json doc = {{"seeds", seeds}, {"rows", table}};
  if (!a.out.empty()) write_text(a.out, doc.dump(2) + "\n");
  if (a.format == "json") {
    out << doc.dump(2) << "\n";
    return kExitOk;
  }
  out << "| No. | Method | SDM | ID | IRR | R1 | R5 | R10 | mAP | mINP |\n"
      << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    const auto mark = [](bool on) { return on ? "x" : ""; };
    out << "| " << r.number << " | " << r.name << " | " << mark(r.toggles.sdm) << " | "
        << mark(r.toggles.id) << " | " << mark(r.toggles.irr) << " | ";
    if (r.implemented) {
      out << fmt(r.rank_k[0]) << " | " << fmt(r.rank_k[1]) << " | " << fmt(r.rank_k[2]) << " | "
          << fmt(r.mean_ap) << " | " << fmt(r.mean_inp) << " |\n";
    } else {
      out << "n/a | n/a | n/a | n/a | n/a |\n";
    }
  }
  return kExitOk;
}

struct CompareArgs {
  std::string config, data, format = "markdown";
  std::size_t repeats = 30;
};

int cmd_compare_fusion(const CompareArgs& a, const ConfigFlags& flags, std::ostream& out,
                       std::ostream& err) {
  const TrainConfig cfg = flags.resolve(a.config);
  std::optional<Dataset> ds;
  FusionComparisonOptions opts;
  opts.latency_repeats = a.repeats;
  if (!a.data.empty()) {
    ds = load_dataset(a.data);
    opts.dataset = &*ds;
  }
  const auto rows = compare_fusion_variants(cfg, opts);
  const auto& ours = rows[0];
  const auto& co = rows[1];
  const auto& merged = rows[2];
  const bool param_order = co.param_count > ours.param_count && ours.param_count > merged.param_count;
  const bool ours_fastest = ours.latency_ms < co.latency_ms && ours.latency_ms < merged.latency_ms;
  json table = json::array();
  for (const auto& r : rows) {
    json row = {{"variant", to_string(r.variant)},
                {"param_count", r.param_count},
                {"latency_ms", r.latency_ms}};
    if (r.report) row["report"] = report_to_json(*r.report);
    table.push_back(row);
  }
  const json doc = {{"rows", table},
                    {"param_order_holds", param_order},
                    {"ours_fastest", ours_fastest}};
  if (a.format == "json") {
    out << doc.dump(2) << "\n";
  } else {
    out << "| Variant | Params | Time (ms) | R1 |\n|---|---|---|---|\n";
    for (const auto& r : rows) {
      out << "| " << to_string(r.variant) << " | " << r.param_count << " | " << fmt(r.latency_ms, 3)
          << " | " << (r.report ? fmt(r.report->rank(1)) : std::string("n/a")) << " |\n";
    }
  }
  if (!param_order) {
    err << "error: parameter counts violate co_attention > ours > merged_attention\n";
    return kExitContract;
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t cases = 100;
  double tolerance = 1e-4;
  std::vector<std::string> ops;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  GradientSuiteOptions opts;
  opts.seed = a.seed;
  opts.cases_per_op = a.cases;
  opts.tolerance = a.tolerance;
  opts.only = a.ops;
  const auto rows = run_gradient_suite(opts);
  bool ok = true;
  json table = json::array();
  for (const auto& r : rows) {
    ok = ok && r.passed();
    table.push_back({{"op", r.op},
                     {"cases", r.cases},
                     {"failures", r.failures},
                     {"coords_checked", r.coords_checked},
                     {"max_rel_error", r.max_rel_error},
                     {"worst_case", r.worst_case}});
  }
  out << json{{"seed", a.seed}, {"tolerance", a.tolerance}, {"passed", ok}, {"ops", table}}.dump(2)
      << "\n";
  if (!ok) {
    for (const auto& r : rows) {
      if (!r.passed()) {
        err << "error: " << r.op << " failed " << r.failures << "/" << r.cases
            << " cases (max rel error " << r.max_rel_error << ")\n";
      }
    }
    return kExitContract;
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Text-to-image person retrieval toolkit", "irra_kit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic identity/caption dataset");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--seed", gen.seed)->required();
  gen_cmd->add_option("--identities", gen.synth.num_identities)->capture_default_str();
  gen_cmd->add_option("--images-per-id", gen.synth.images_per_id)->capture_default_str();
  gen_cmd->add_option("--captions-per-image", gen.synth.captions_per_image)->capture_default_str();
  gen_cmd->add_option("--val-per-id", gen.synth.val_images_per_id)->capture_default_str();
  gen_cmd->add_option("--height", gen.synth.height)->capture_default_str();
  gen_cmd->add_option("--width", gen.synth.width)->capture_default_str();
  gen_cmd->add_option("--channels", gen.synth.channels)->capture_default_str();
  gen_cmd->add_option("--noise", gen.synth.noise_std)->capture_default_str();

  TrainArgs train;
  ConfigFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  train_cmd->add_option("--data", train.data, "annotations.json")->required();
  train_cmd->add_option("--config", train.config, "JSON or TOML config");
  train_cmd->add_option("--out", train.out, "checkpoint path")->required();
  train_cmd->add_option("--log", train.log, "JSON-lines run log");
  train_flags.attach(train_cmd);
  train_flags.option("seed")->required();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "retrieval metrics for a checkpoint or similarity CSV");
  eval_cmd->add_option("--checkpoint", eval.checkpoint);
  eval_cmd->add_option("--data", eval.data, "annotations.json");
  eval_cmd->add_option("--split", eval.split)->capture_default_str();
  eval_cmd->add_option("--sim", eval.sim, "similarity CSV from export-sim")
      ->excludes(eval_cmd->get_option("--checkpoint"));
  eval_cmd->add_option("--query-embeds", eval.query_embeds, "caption embeddings file")
      ->excludes(eval_cmd->get_option("--checkpoint"))
      ->excludes(eval_cmd->get_option("--sim"));
  eval_cmd->add_option("--gallery-embeds", eval.gallery_embeds, "image embeddings file")
      ->excludes(eval_cmd->get_option("--checkpoint"))
      ->excludes(eval_cmd->get_option("--sim"));
  eval_cmd->add_option("--out", eval.out, "also write the report here");
  eval_cmd->add_flag("--oracle", eval.oracle, "cross-check against the brute-force reference");
  eval_cmd->add_flag("--per-query", eval.per_query);

  ExportArgs exp;
  auto* exp_cmd = app.add_subcommand("export-sim", "write the query x gallery similarity CSV");
  exp_cmd->add_option("--checkpoint", exp.checkpoint)->required();
  exp_cmd->add_option("--data", exp.data)->required();
  exp_cmd->add_option("--split", exp.split)->capture_default_str();
  exp_cmd->add_option("--out", exp.out)->required();
  exp_cmd->add_option("--query-embeds", exp.query_embeds, "also write caption embeddings");
  exp_cmd->add_option("--gallery-embeds", exp.gallery_embeds, "also write image embeddings");

  AblateArgs abl;
  ConfigFlags abl_flags;
  auto* abl_cmd = app.add_subcommand("ablate", "run the eight-row loss ablation grid");
  abl_cmd->add_option("--data", abl.data)->required();
  abl_cmd->add_option("--config", abl.config);
  abl_cmd->add_option("--seeds", abl.seeds, "comma-separated seeds")->required();
  abl_cmd->add_option("--out", abl.out, "JSON table path");
  abl_cmd->add_option("--format", abl.format)->check(CLI::IsMember({"markdown", "json"}));
  abl_flags.attach(abl_cmd);

  CompareArgs cmp;
  ConfigFlags cmp_flags;
  auto* cmp_cmd = app.add_subcommand("compare-fusion", "parameter count and latency per fusion variant");
  cmp_cmd->add_option("--config", cmp.config);
  cmp_cmd->add_option("--data", cmp.data, "also train each variant on this dataset");
  cmp_cmd->add_option("--repeats", cmp.repeats)->capture_default_str();
  cmp_cmd->add_option("--format", cmp.format)->check(CLI::IsMember({"markdown", "json"}));
  cmp_flags.attach(cmp_cmd);
  cmp_flags.option("seed")->required();

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every operation");
  gc_cmd->add_option("--seed", gc.seed)->required();
  gc_cmd->add_option("--cases", gc.cases)->capture_default_str();
  gc_cmd->add_option("--tol", gc.tolerance)->capture_default_str();
  gc_cmd->add_option("--op", gc.ops, "restrict to these operations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitIo;
  }

  try {
    (void)worker_threads();
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(train, train_flags, out, err);
    if (*eval_cmd) return cmd_eval(eval, out, err);
    if (*exp_cmd) return cmd_export_sim(exp, out);
    if (*abl_cmd) return cmd_ablate(abl, abl_flags, out);
    if (*cmp_cmd) return cmd_compare_fusion(cmp, cmp_flags, out, err);
    if (*gc_cmd) return cmd_gradcheck(gc, out, err);
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitContract;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitContract;
}

}  // namespace irra
