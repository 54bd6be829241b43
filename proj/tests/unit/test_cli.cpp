#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <functional>

#include "tabformer/checkpoint.hpp"
#include "tabformer/cli.hpp"
#include "tabformer/hash.hpp"
#include "tabformer/json_util.hpp"

using namespace tabformer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const json kEncoder = {{"layers", 1},         {"heads", 2},  {"hidden_dim", 16},    {"ffn_dim", 32},
                       {"max_positions", 16}, {"causal", false}, {"dropout", 0.0}, {"positional", true}};

struct Pipeline {
  fs::path root;
  std::string data() const { return (root / "data" / "data.csv").string(); }
  std::string vocab() const { return (root / "vocab").string(); }
  std::string bert() const { return (root / "bert" / "tabbert.ckpt").string(); }

  explicit Pipeline(const fs::path& dir) : root(dir) {
    setenv("TABFORMER_LOG", "quiet", 1);
    fs::remove_all(root);
    run("gen-data", {{"transactions", {{"n_users", 3}, {"rows_per_user", 60}}}}, 1, "data");
    run("build-vocab", {{"data", data()}, {"default_bins", 6}}, std::nullopt, "vocab");
    json pt = {{"steps", 6}, {"batch_size", 4}, {"model", {{"field", kEncoder}, {"sequence", kEncoder}}}};
    run("pretrain-bert", {{"data", data()}, {"vocab", vocab()}, {"window", 5}, {"stride", 5}, {"pretrain", pt}}, 2,
        "bert");
  }

  json run(const std::string& command, json config, std::optional<std::uint64_t> seed, const std::string& out) const {
    cli::RunContext ctx;
    ctx.config = std::move(config);
    ctx.seed = seed;
    ctx.out = root / out;
    return cli::run_command(command, ctx);
  }

  std::string hash(const std::string& rel) const { return sha256_file(root / rel); }
};

int exit_code(const std::function<void()>& f) {
  try {
    f();
  } catch (...) {
    return cli::report_error(std::current_exception());
  }
  return cli::kOk;
}

json gpt_config() {
  json model = kEncoder;
  model["causal"] = true;
  model["max_positions"] = 80;
  return {{"steps", 5}, {"batch_size", 2}, {"window", 5}, {"stride", 5}, {"model", model}};
}

}  // namespace

TEST_CASE("every command has a default config and unknown commands are rejected") {
  for (const auto& name : cli::command_names()) CHECK(cli::default_config(name).is_object());
  CHECK_THROWS_AS(cli::default_config("nope"), ConfigError);
}

TEST_CASE("end-to-end pipeline is reproducible and self-consistent") {
  const auto tmp = fs::temp_directory_path();
  Pipeline a(tmp / "tabformer_cli_a"), b(tmp / "tabformer_cli_b");

  for (const char* rel : {"data/data.csv", "vocab/vocab.tsv", "vocab/quantizers.json", "bert/tabbert.ckpt"}) {
    CHECK_MESSAGE(a.hash(rel) == b.hash(rel), std::string(rel));
  }
  auto ck = load_checkpoint(a.bert());
  CHECK(ck.metadata.at("upstream").at("data_sha256") == sha256_file(a.data()));

  for (const Pipeline* p : {&a, &b}) {
    p->run("extract-features", {{"data", p->data()}, {"vocab", p->vocab()}, {"checkpoint", p->bert()}, {"window", 5},
                                {"stride", 5}},
           std::nullopt, "features");
    json ds = {{"data", p->data()},  {"vocab", p->vocab()}, {"checkpoint", p->bert()},
               {"window", 5},        {"stride", 5},         {"split_seed", 3},
               {"downstream", {{"feature_source", "tabbert"}, {"head", "lstm"}, {"epochs", 2}}}};
    p->run("downstream", ds, 4, "downstream");
    p->run("train-gpt", {{"data", p->data()}, {"vocab", p->vocab()}, {"user", "u1"}, {"gpt", gpt_config()}}, 5, "gpt");
    p->run("generate",
           {{"data", p->data()}, {"vocab", p->vocab()}, {"checkpoint", (p->root / "gpt" / "tabgpt_u1.ckpt").string()},
            {"window", 5}},
           6, "gen");
  }
  for (const char* rel : {"features/features.tsv", "gpt/tabgpt_u1.ckpt",
                          "gen/generated.tokens.json", "gen/generated.csv"}) {
    CHECK_MESSAGE(a.hash(rel) == b.hash(rel), std::string(rel));
  }

  // metrics.json records input paths, which differ between the two roots.
  json metrics = json::parse(read_file(a.root / "downstream" / "metrics.json"));
  CHECK(metrics.at("metrics") == json::parse(read_file(b.root / "downstream" / "metrics.json")).at("metrics"));
  CHECK(metrics.at("metrics").contains("f1"));
  json resolved = json::parse(read_file(a.root / "gpt" / "train-gpt.config.json"));
  CHECK(resolved.at("seed") == 5);

  // Real data compared against itself: every chi-square is zero.
  json ev = {{"vocab", a.vocab()},
             {"checkpoint", a.bert()},
             {"window", 5},
             {"real", {{"data", a.data()}, {"user", "u1"}}},
             {"generated", {{"data", a.data()}, {"user", "u1"}, {"name", "copy"}}},
             {"extra", json::array({{{"tokens", (a.root / "gen" / "generated.tokens.json").string()}}})}};
  a.run("evaluate", ev, std::nullopt, "eval");
  json report = json::parse(read_file(a.root / "eval" / "report.json"));
  for (const auto& f : report.at("fields")) CHECK(f.at("chi2").get<double>() == 0.0);
  CHECK(report.at("fid").at("matrix")[0][1].get<double>() < 1e-6);
  CHECK(report.at("fid").at("datasets").size() == 3);

  json prov = json::parse(read_file(a.root / "eval" / "provenance.json"));
  CHECK(prov.at("outputs").at("report.json") == a.hash("eval/report.json"));
}

TEST_CASE("errors map to exit codes") {
  const auto tmp = fs::temp_directory_path();
  Pipeline p(tmp / "tabformer_cli_err");

  // Missing seed, unknown key, bad value.
  CHECK(exit_code([&] { p.run("gen-data", json::object(), std::nullopt, "x"); }) == cli::kConfigError);
  CHECK(exit_code([&] { p.run("build-vocab", {{"data", p.data()}, {"bogus", 1}}, std::nullopt, "x"); }) ==
        cli::kConfigError);
  CHECK(exit_code([&] { p.run("gen-data", {{"kind", "weather"}}, 1, "x"); }) == cli::kConfigError);

  CHECK(exit_code([&] { p.run("build-vocab", {{"data", (p.root / "nope.csv").string()}}, std::nullopt, "x"); }) ==
        cli::kMissingFile);

  // A vocabulary built from different data does not match the checkpoint.
  p.run("gen-data", {{"transactions", {{"n_users", 2}, {"rows_per_user", 40}}}, {"stem", "other"}}, 9, "other");
  p.run("build-vocab", {{"data", (p.root / "other" / "other.csv").string()}, {"default_bins", 4}}, std::nullopt,
        "vocab2");
  CHECK(exit_code([&] {
          p.run("extract-features",
                {{"data", p.data()}, {"vocab", (p.root / "vocab2").string()}, {"checkpoint", p.bert()}},
                std::nullopt, "x");
        }) == cli::kFingerprintMismatch);

  CHECK(exit_code([&] {
          p.run("train-gpt", {{"data", p.data()}, {"vocab", p.vocab()}, {"user", "nobody"}, {"gpt", gpt_config()}}, 1,
                "x");
        }) == cli::kDataError);
}

TEST_CASE("argument parsing") {
  const char* none[] = {"tabformer"};
  CHECK(cli::main(1, none) == cli::kUsageError);
  const char* unknown[] = {"tabformer", "frobnicate"};
  CHECK(cli::main(2, unknown) == cli::kUsageError);
  const char* no_out[] = {"tabformer", "gen-data", "--seed", "1"};
  CHECK(cli::main(4, no_out) == cli::kUsageError);
  const char* bad_seed[] = {"tabformer", "gen-data", "--seed", "minus", "--out", "x"};
  CHECK(cli::main(6, bad_seed) == cli::kUsageError);
  const char* missing_config[] = {"tabformer", "gen-data", "--config", "/nonexistent/c.json", "--out", "x"};
  CHECK(cli::main(6, missing_config) == cli::kUsageError);
}
