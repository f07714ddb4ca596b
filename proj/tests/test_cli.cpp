#include "irra/cli.hpp"
#include "irra/data.hpp"
#include "irra/metrics.hpp"
#include "irra/train.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace irra;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "irra_kit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

class Workspace {
 public:
  explicit Workspace(const std::string& name) : dir_(fs::temp_directory_path() / ("irra_cli_" + name)) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Workspace() { fs::remove_all(dir_); }
  std::string operator/(const std::string& leaf) const { return (dir_ / leaf).string(); }

 private:
  fs::path dir_;
};

// Small dataset and model so each train call finishes quickly.
std::string write_small_setup(const Workspace& ws) {
  REQUIRE(cli({"gen-data", "--out", ws / "data", "--seed", "3", "--identities", "4", "--images-per-id", "3",
               "--height", "16", "--width", "8"})
              .code == 0);
  std::ofstream cfg(ws / "small.toml");
  cfg << "[image_encoder]\nheight = 16\nwidth = 8\nembed_dim = 16\nnum_layers = 1\nnum_heads = 2\njoint_dim = 16\n"
         "[text_encoder]\nembed_dim = 16\nnum_layers = 1\nnum_heads = 2\njoint_dim = 16\n"
         "[fusion]\nhidden_dim = 16\nnum_heads = 2\nnum_blocks = 1\n"
         "[train]\nepochs = 2\nwarmup_epochs = 1\nbatch_size = 8\n";
  return ws / "small.toml";
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) { setenv(name, value, 1); }
  ~ScopedEnv() { unsetenv(name_); }

 private:
  const char* name_;
};

}  // namespace

TEST_CASE("help exits zero and a missing subcommand is a usage error") {
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({"train", "--help"}).code == 0);
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
}

TEST_CASE("gen-data writes a validator-clean dataset and reports counts") {
  Workspace ws("gen");
  const auto r = cli({"gen-data", "--out", ws / "d", "--seed", "7", "--identities", "32", "--images-per-id", "4"});
  REQUIRE(r.code == 0);
  const auto summary = json::parse(r.out);
  CHECK(summary.at("records") == 128);
  const Dataset ds = load_dataset(ws / "d/annotations.json");
  CHECK(ds.records.size() == 128);
  CHECK_NOTHROW(validate_synthetic(ds));
}

TEST_CASE("gen-data with one identity is a minimal valid dataset") {
  Workspace ws("gen1");
  REQUIRE(cli({"gen-data", "--out", ws / "d", "--seed", "1", "--identities", "1"}).code == 0);
  CHECK_NOTHROW(validate_synthetic(load_dataset(ws / "d/annotations.json")));
}

TEST_CASE("gen-data output is byte-identical for the same flags") {
  Workspace ws("gen2");
  REQUIRE(cli({"gen-data", "--out", ws / "a", "--seed", "5", "--identities", "6"}).code == 0);
  REQUIRE(cli({"gen-data", "--out", ws / "b", "--seed", "5", "--identities", "6"}).code == 0);
  REQUIRE(cli({"gen-data", "--out", ws / "c", "--seed", "6", "--identities", "6"}).code == 0);
  for (const char* f : {"annotations.json", "images.bin"}) {
    CHECK(slurp(ws / (std::string("a/") + f)) == slurp(ws / (std::string("b/") + f)));
  }
  CHECK(slurp(ws / "a/images.bin") != slurp(ws / "c/images.bin"));
}

TEST_CASE("seed is mandatory for stochastic commands") {
  Workspace ws("seed");
  CHECK(cli({"gen-data", "--out", ws / "d"}).code == 2);
  CHECK(cli({"train", "--data", ws / "d/annotations.json", "--out", ws / "m.bin"}).code == 2);
  CHECK(cli({"gradcheck"}).code == 2);
  CHECK(cli({"compare-fusion"}).code == 2);
}

TEST_CASE("unwritable or missing paths exit with the IO code") {
  Workspace ws("io");
  CHECK(cli({"gen-data", "--out", "/proc/irra_cannot_write", "--seed", "1"}).code == 2);
  CHECK(cli({"train", "--data", ws / "missing.json", "--out", ws / "m.bin", "--seed", "1"}).code == 2);
  CHECK(cli({"eval", "--sim", ws / "missing.csv"}).code == 2);
  {
    std::ofstream bad(ws / "bad.csv");
    bad << "query_id,0\n0,zz\n";
  }
  CHECK(cli({"eval", "--sim", ws / "bad.csv"}).code == 2);
}

TEST_CASE("invalid settings exit with the contract code") {
  Workspace ws("contract");
  const auto cfg = write_small_setup(ws);
  CHECK(cli({"train", "--data", ws / "data/annotations.json", "--config", cfg, "--out", ws / "m.bin", "--seed", "1",
             "--train.warmup_epochs", "5"})
            .code == 1);
  CHECK(cli({"gen-data", "--out", ws / "z", "--seed", "1", "--identities", "0"}).code == 1);
  {
    std::ofstream csv(ws / "norel.csv");
    csv << "query_id,0,1\n9,0.5,0.25\n";
  }
  CHECK(cli({"eval", "--sim", ws / "norel.csv"}).code == 1);
}

TEST_CASE("an invalid thread count is a configuration error") {
  Workspace ws("threads");
  ScopedEnv env("IRRA_KIT_THREADS", "zero");
  CHECK(cli({"gen-data", "--out", ws / "d", "--seed", "1"}).code == 1);
}

TEST_CASE("zero epochs writes the initial parameters") {
  Workspace ws("epochs0");
  const auto cfg = write_small_setup(ws);
  const auto r = cli({"train", "--data", ws / "data/annotations.json", "--config", cfg, "--out", ws / "m.bin",
                      "--seed", "2", "--epochs", "0", "--log", ws / "log.jsonl"});
  REQUIRE(r.code == 0);
  const auto ck = load_checkpoint(ws / "m.bin");
  const IrraModel fresh(ck.model->config, ck.vocab.size(), ck.model->num_classes);
  REQUIRE(ck.model->store.params().size() == fresh.store.params().size());
  for (std::size_t i = 0; i < fresh.store.params().size(); ++i) {
    const auto a = ck.model->store.params()[i].tensor.values();
    const auto b = fresh.store.params()[i].tensor.values();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  CHECK(slurp(ws / "log.jsonl").empty());
}

TEST_CASE("training twice with one seed gives identical checkpoints") {
  Workspace ws("twice");
  const auto cfg = write_small_setup(ws);
  for (const char* out : {"a.bin", "b.bin"}) {
    REQUIRE(cli({"train", "--data", ws / "data/annotations.json", "--config", cfg, "--out", ws / out, "--seed",
                 "1", "--loss.sdm", "--loss.id", "--loss.irr"})
                .code == 0);
  }
  CHECK(slurp(ws / "a.bin") == slurp(ws / "b.bin"));
}

TEST_CASE("dotted overrides reach the trained config") {
  Workspace ws("override");
  const auto cfg = write_small_setup(ws);
  REQUIRE(cli({"train", "--data", ws / "data/annotations.json", "--config", cfg, "--out", ws / "m.bin", "--seed",
               "4", "--loss.irr=false", "--fusion.variant", "co_attention", "--train.epochs", "1",
               "--train.warmup_epochs", "0"})
              .code == 0);
  const auto ck = load_checkpoint(ws / "m.bin");
  CHECK(!ck.model->config.loss.toggles.irr);
  CHECK(ck.model->config.fusion.variant == FusionVariant::CoAttention);
  CHECK(ck.model->config.schedule.epochs == 1);
  CHECK(ck.model->config.seed == 4);
}

TEST_CASE("eval agrees with the oracle and with exported similarities") {
  Workspace ws("eval");
  const auto cfg = write_small_setup(ws);
  REQUIRE(cli({"train", "--data", ws / "data/annotations.json", "--config", cfg, "--out", ws / "m.bin", "--seed",
               "0", "--epochs", "0"})
              .code == 0);
  const auto direct = cli({"eval", "--checkpoint", ws / "m.bin", "--data", ws / "data/annotations.json", "--oracle"});
  REQUIRE(direct.code == 0);
  const auto report = json::parse(direct.out);
  CHECK(report.at("oracle").at("agrees") == true);
  CHECK(report.at("fusion_forwards") == 0);
  CHECK(report.at("num_queries") == 8);
  CHECK(report.at("num_gallery") == 4);

  REQUIRE(cli({"export-sim", "--checkpoint", ws / "m.bin", "--data", ws / "data/annotations.json", "--out",
               ws / "sim.csv", "--query-embeds", ws / "q.bin", "--gallery-embeds", ws / "g.bin"})
              .code == 0);
  const auto via_csv = json::parse(cli({"eval", "--sim", ws / "sim.csv", "--oracle"}).out);
  CHECK(via_csv.at("metrics") == report.at("metrics"));
  const auto via_embeds =
      cli({"eval", "--query-embeds", ws / "q.bin", "--gallery-embeds", ws / "g.bin", "--per-query"});
  REQUIRE(via_embeds.code == 0);
  const auto m = json::parse(via_embeds.out).at("metrics");
  CHECK(m.at("per_query").size() == 8);
  CHECK(m.at("mAP").get<double>() == doctest::Approx(report.at("metrics").at("mAP").get<double>()).epsilon(1e-12));
}

TEST_CASE("a memorised split is retrieved perfectly") {
  Workspace ws("perfect");
  // Noise-free images: validation images repeat the training images exactly.
  REQUIRE(cli({"gen-data", "--out", ws / "d", "--seed", "2", "--identities", "4", "--images-per-id", "2",
               "--noise", "0"})
              .code == 0);
  REQUIRE(cli({"train", "--data", ws / "d/annotations.json", "--out", ws / "m.bin", "--seed", "0", "--train.epochs",
               "40", "--train.warmup_epochs", "2", "--train.batch_size", "4", "--augment.flip_prob", "0",
               "--augment.crop_prob", "0", "--augment.erase_prob", "0"})
              .code == 0);
  const auto r = cli({"eval", "--checkpoint", ws / "m.bin", "--data", ws / "d/annotations.json", "--oracle"});
  REQUIRE(r.code == 0);
  const auto m = json::parse(r.out).at("metrics");
  CHECK(m.at("rank").at("R1") == 1.0);
  CHECK(m.at("mAP") == 1.0);
}

TEST_CASE("ablate emits eight rows") {
  Workspace ws("ablate");
  const auto cfg = write_small_setup(ws);
  const auto r = cli({"ablate", "--data", ws / "data/annotations.json", "--config", cfg, "--seeds", "0,1",
                      "--train.epochs", "1", "--train.warmup_epochs", "0", "--format", "json"});
  REQUIRE(r.code == 0);
  const auto rows = json::parse(r.out).at("rows");
  REQUIRE(rows.size() == 8);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].at("no") == i);
  const auto md = cli({"ablate", "--data", ws / "data/annotations.json", "--config", cfg, "--seeds", "0",
                       "--train.epochs", "1", "--train.warmup_epochs", "0", "--format", "markdown"});
  REQUIRE(md.code == 0);
  CHECK(std::count(md.out.begin(), md.out.end(), '\n') >= 10);
}

TEST_CASE("compare-fusion emits three rows in parameter order") {
  const auto r = cli({"compare-fusion", "--seed", "0", "--repeats", "3", "--format", "json"});
  REQUIRE(r.code == 0);
  const auto rows = json::parse(r.out).at("rows");
  REQUIRE(rows.size() == 3);
  std::map<std::string, std::size_t> params;
  for (const auto& row : rows) params[row.at("variant")] = row.at("param_count");
  CHECK(params.at("co_attention") > params.at("ours"));
  CHECK(params.at("ours") > params.at("merged_attention"));
  CHECK(json::parse(r.out).at("param_order_holds") == true);
}

TEST_CASE("gradcheck passes on a fresh seed and fails on an impossible tolerance") {
  const auto ok = cli({"gradcheck", "--seed", "11", "--cases", "2"});
  CHECK(ok.code == 0);
  CHECK(json::parse(ok.out).at("passed") == true);
  CHECK(cli({"gradcheck", "--seed", "11", "--cases", "2", "--op", "matmul", "--tol", "0"}).code == 1);
}
