#include "tabformer/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "tabformer/checkpoint.hpp"
#include "tabformer/csv.hpp"
#include "tabformer/datapipe.hpp"
#include "tabformer/eval.hpp"
#include "tabformer/hash.hpp"
#include "tabformer/heads.hpp"
#include "tabformer/json_util.hpp"
#include "tabformer/synthgen.hpp"
#include "tabformer/tabbert.hpp"
#include "tabformer/tabgpt.hpp"

namespace tabformer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// 0 quiet, 1 info (default), 2 debug. Set through TABFORMER_LOG.
int log_level() {
  static const int level = [] {
    const char* env = std::getenv("TABFORMER_LOG");
    if (!env) return 1;
    const std::string v(env);
    if (v == "quiet" || v == "0") return 0;
    if (v == "debug" || v == "2") return 2;
    return 1;
  }();
  return level;
}

void log(int level, const std::string& message) {
  if (log_level() >= level) std::cerr << message << '\n';
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void write_json(const fs::path& path, const json& j) { write_file(path, dump(j)); }

std::string fixed(double v, const char* format = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

// Merges the user config over the defaults, rejecting unknown keys.
json resolve(const json& user, const json& defaults, const std::string& where) {
  if (!user.is_object()) throw ConfigError(where + ": config must be a JSON object");
  check_keys(user, defaults, where);
  json out = defaults;
  for (auto it = user.begin(); it != user.end(); ++it) out[it.key()] = it.value();
  return out;
}

std::uint64_t require_seed(json& config, const RunContext& context) {
  if (context.seed) config["seed"] = *context.seed;
  if (config.at("seed").is_null()) throw ConfigError("seed is required: pass --seed or set \"seed\" in the config");
  try {
    return config.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    throw ConfigError("seed must be a non-negative integer");
  }
}

template <typename T>
T get(const json& config, const std::string& key) {
  try {
    return config.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::string require_path(const json& config, const std::string& key) {
  auto p = get<std::string>(config, key);
  if (p.empty()) throw ConfigError("config key '" + key + "' must name a path");
  if (!fs::exists(p)) throw FileError("'" + key + "' not found: " + p);
  return p;
}

TypeHints hints_for(const std::string& kind) {
  if (kind == "transactions") return transaction_hints();
  if (kind == "pollution") return pollution_hints();
  throw ConfigError("unknown data kind '" + kind + "' (transactions, pollution)");
}

TargetAggregation aggregation_from(const std::string& text) {
  if (text == "last_row") return TargetAggregation::last_row;
  if (text == "mean") return TargetAggregation::mean;
  throw ConfigError("unknown aggregation '" + text + "' (last_row, mean)");
}

struct Corpus {
  Vocabulary vocab;
  std::vector<EntityRows> entities;
  std::string data_sha256;
};

Corpus load_corpus(const json& config) {
  const auto data = require_path(config, "data");
  const auto vocab_dir = require_path(config, "vocab");
  Corpus c{load_vocabulary(vocab_dir), {}, sha256_file(data)};
  c.entities = encode_table(read_csv(data), c.vocab);
  return c;
}

const EntityRows& find_entity(const std::vector<EntityRows>& entities, const std::string& id) {
  for (const auto& e : entities) {
    if (e.entity_id == id) return e;
  }
  throw std::invalid_argument("no entity named '" + id + "' in the data");
}

std::vector<WindowSample> corpus_windows(const Corpus& c, const json& config) {
  auto windows = build_windows(c.entities, c.vocab.schema(), get<std::size_t>(config, "window"),
                               get<std::size_t>(config, "stride"),
                               aggregation_from(config.value("aggregation", std::string("last_row"))));
  if (windows.empty()) throw std::invalid_argument("the data yields no windows of the configured length");
  return windows;
}

std::string jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

// Records inputs and output hashes next to the artifacts.
void write_provenance(const fs::path& out, const std::string& command, const json& config, const json& inputs,
                      const std::vector<std::string>& outputs) {
  json hashes = json::object();
  for (const auto& name : outputs) hashes[name] = sha256_file(out / name);
  write_json(out / "provenance.json",
             {{"command", command}, {"config", config}, {"inputs", inputs}, {"outputs", hashes}});
}

json file_input(const std::string& path) { return {{"path", path}, {"sha256", sha256_file(path)}}; }

// ---------------------------------------------------------------------------

json cmd_gen_data(const RunContext& ctx) {
  json config = resolve(ctx.config, default_config("gen-data"), "gen-data config");
  const auto seed = require_seed(config, ctx);
  const auto kind = get<std::string>(config, "kind");
  const auto stem = get<std::string>(config, "stem");
  GeneratedCorpus corpus;
  if (kind == "transactions") {
    auto tc = TransactionConfig::from_json(config.at("transactions"));
    config["transactions"] = tc.to_json();
    corpus = gen_transactions(tc, seed);
  } else if (kind == "pollution") {
    auto pc = PollutionConfig::from_json(config.at("pollution"));
    config["pollution"] = pc.to_json();
    corpus = gen_pollution(pc, seed);
  } else {
    throw ConfigError("unknown data kind '" + kind + "' (transactions, pollution)");
  }
  write_corpus(corpus, ctx.out, stem);
  log(1, "gen-data: wrote " + std::to_string(corpus.table.rows.size()) + " rows to " + (ctx.out / (stem + ".csv")).string());
  write_provenance(ctx.out, "gen-data", config, json::object(), {stem + ".csv", stem + ".spec.json"});
  return config;
}

json cmd_build_vocab(const RunContext& ctx) {
  json config = resolve(ctx.config, default_config("build-vocab"), "build-vocab config");
  const auto data = require_path(config, "data");
  auto table = read_csv(data);
  auto schema = infer_schema(table.header, hints_for(get<std::string>(config, "kind")));
  VocabConfig vc{get<std::size_t>(config, "default_bins"), get<std::map<std::string, std::size_t>>(config, "bins_per_field")};
  auto vocab = build_vocabulary(table, schema, vc);
  save_vocabulary(vocab, ctx.out.string());
  log(1, "build-vocab: " + std::to_string(vocab.field_count()) + " fields, " + std::to_string(vocab.total_size()) +
             " tokens, fingerprint " + vocab.fingerprint());
  json inputs = {{"data", file_input(data)}};
  write_json(ctx.out / "fingerprint.json", {{"vocab_fingerprint", vocab.fingerprint()}, {"upstream", inputs}});
  write_provenance(ctx.out, "build-vocab", config, inputs,
                   {"schema.json", "vocab.tsv", "quantizers.json", "fingerprint.json"});
  return config;
}

json cmd_pretrain_bert(const RunContext& ctx) {
  json config = resolve(ctx.config, default_config("pretrain-bert"), "pretrain-bert config");
  const auto seed = require_seed(config, ctx);
  auto pc = PretrainConfig::from_json(config.at("pretrain"));
  config["pretrain"] = pc.to_json();
  auto corpus = load_corpus(config);
  auto windows = corpus_windows(corpus, config);
  log(1, "pretrain-bert: " + std::to_string(windows.size()) + " windows, " + std::to_string(pc.steps) + " steps");
  std::vector<json> log_rows;
  auto result = pretrain(windows, corpus.vocab, pc, seed, [&](const PretrainLogEntry& e) {
    log_rows.push_back(e.to_json());
    if (e.step % 100 == 0 || e.step == pc.steps) {
      log(2, "step " + std::to_string(e.step) + " loss " + fixed(e.loss, "%.4f") + " acc " +
                 fixed(e.masked_accuracy, "%.4f"));
    }
  });
  json upstream = {{"data_sha256", corpus.data_sha256},
                   {"window", config.at("window")},
                   {"stride", config.at("stride")},
                   {"seed", seed}};
  save_checkpoint(ctx.out / "tabbert.ckpt", tabbert_checkpoint(result.model, corpus.vocab, {{"upstream", upstream}}));
  // The log carries wall-clock times and is not part of the reproducible set.
  write_file(ctx.out / "pretrain_log.jsonl", jsonl(log_rows));
  if (!result.log.empty()) {
    log(1, "pretrain-bert: final loss " + fixed(result.log.back().loss, "%.4f") + ", masked accuracy " +
               fixed(result.log.back().masked_accuracy, "%.4f"));
  }
  write_provenance(ctx.out, "pretrain-bert", config,
                   {{"data", file_input(config.at("data"))}, {"vocab_fingerprint", corpus.vocab.fingerprint()}},
                   {"tabbert.ckpt"});
  return config;
}

json cmd_extract_features(const RunContext& ctx) {
  json config = resolve(ctx.config, default_config("extract-features"), "extract-features config");
  auto corpus = load_corpus(config);
  const auto ckpt_path = require_path(config, "checkpoint");
  auto model = load_tabbert(load_checkpoint(ckpt_path, corpus.vocab.fingerprint()), corpus.vocab);
  auto windows = corpus_windows(corpus, config);
  const auto pooling = get<std::string>(config, "pooling");
  std::ostringstream out;
  if (pooling == "mean") {
    auto v = extract_features(model, windows);
    const std::size_t d = v.shape()[1];
    out << "entity\tstart_index\tlabel";
    for (std::size_t j = 0; j < d; ++j) out << "\tv" << j;
    out << '\n';
    for (std::size_t i = 0; i < windows.size(); ++i) {
      out << windows[i].entity_id << '\t' << windows[i].start_index << '\t'
          << (windows[i].label ? std::to_string(*windows[i].label) : "");
      for (std::size_t j = 0; j < d; ++j) out << '\t' << fixed(v.data()[i * d + j], "%.9g");
      out << '\n';
    }
  } else if (pooling == "rows") {
    auto s = extract_sequence(model, windows);
    const std::size_t t = s.shape()[1], d = s.shape()[2];
    out << "entity\tstart_index\trow";
    for (std::size_t j = 0; j < d; ++j) out << "\tse" << j;
    out << '\n';
    for (std::size_t i = 0; i < windows.size(); ++i) {
      for (std::size_t r = 0; r < t; ++r) {
        out << windows[i].entity_id << '\t' << windows[i].start_index << '\t' << r;
        for (std::size_t j = 0; j < d; ++j) out << '\t' << fixed(s.data()[(i * t + r) * d + j], "%.9g");
        out << '\n';
      }
    }
  } else {
    throw ConfigError("unknown pooling '" + pooling + "' (mean, rows)");
  }
  write_file(ctx.out / "features.tsv", out.str());
  log(1, "extract-features: " + std::to_string(windows.size()) + " windows");
  write_provenance(ctx.out, "extract-features", config,
                   {{"data", file_input(config.at("data"))}, {"checkpoint", file_input(ckpt_path)}},
                   {"features.tsv"});
  return config;
}

json cmd_downstream(const RunContext& ctx) {
  json config = resolve(ctx.config, default_config("downstream"), "downstream config");
  const auto seed = require_seed(config, ctx);
  auto dc = DownstreamConfig::from_json(config.at("downstream"));
  config["downstream"] = dc.to_json();
  auto corpus = load_corpus(config);
  auto windows = corpus_windows(corpus, config);
  json inputs = {{"data", file_input(config.at("data"))}, {"vocab_fingerprint", corpus.vocab.fingerprint()}};

  DownstreamData data;
  if (dc.feature_source == FeatureSource::tabbert) {
    const auto ckpt_path = require_path(config, "checkpoint");
    auto backbone = load_tabbert(load_checkpoint(ckpt_path, corpus.vocab.fingerprint()), corpus.vocab);
    inputs["checkpoint"] = file_input(ckpt_path);
    data = tabbert_data(backbone, std::move(windows));
  } else {
    data = raw_data(std::move(windows));
  }
  auto split = split_indices(data.windows.size(), dc.test_fraction, get<std::uint64_t>(config, "split_seed"));
  std::vector<json> log_rows;
  auto result = train_downstream(dc, subset(data, split.train), subset(data, split.test), corpus.vocab.total_size(),
                                 seed, [&](const DownstreamEpoch& e) {
                                   log_rows.push_back(e.to_json());
                                   log(2, "epoch " + std::to_string(e.epoch) + " loss " + fixed(e.loss, "%.5f"));
                                 });
  json report = {{"config", config}, {"seed", seed}, {"metrics", result.metrics.to_json()}, {"inputs", inputs}};
  write_json(ctx.out / "metrics.json", report);
  write_file(ctx.out / "downstream_log.jsonl", jsonl(log_rows));
  if (result.metrics.f1) log(1, "downstream: F1 " + fixed(*result.metrics.f1, "%.4f"));
  if (result.metrics.rmse) log(1, "downstream: combined RMSE " + fixed(*result.metrics.rmse, "%.4f"));
  write_provenance(ctx.out, "downstream", config, inputs, {"metrics.json", "downstream_log.jsonl"});
  return config;
}

json cmd_train_gpt(const RunContext& ctx) {
  json config = resolve(ctx.config, default_config("train-gpt"), "train-gpt config");
  const auto seed = require_seed(config, ctx);
  auto gc = GptTrainConfig::from_json(config.at("gpt"));
  config["gpt"] = gc.to_json();
  auto corpus = load_corpus(config);
  const auto user = get<std::string>(config, "user");
  const auto& rows = find_entity(corpus.entities, user);
  log(1, "train-gpt: user " + user + ", " + std::to_string(rows.tokens.size()) + " rows, " + std::to_string(gc.steps) +
             " steps");
  std::vector<json> log_rows;
  auto result = train_per_user(rows, corpus.vocab, gc, seed, [&](const GptLogEntry& e) {
    log_rows.push_back(e.to_json());
    if (e.step % 50 == 0) log(2, "step " + std::to_string(e.step) + " loss " + fixed(e.loss, "%.4f"));
  });
  const double ppl = perplexity(result.model, result.windows);
  json upstream = {{"data_sha256", corpus.data_sha256}, {"seed", seed}, {"train_perplexity", ppl}};
  const std::string name = "tabgpt_" + user + ".ckpt";
  save_checkpoint(ctx.out / name, tabgpt_checkpoint(result.model, corpus.vocab, user, {{"upstream", upstream}}));
  write_file(ctx.out / "gpt_log.jsonl", jsonl(log_rows));
  log(1, "train-gpt: training-window perplexity " + fixed(ppl, "%.4f"));
  write_provenance(ctx.out, "train-gpt", config,
                   {{"data", file_input(config.at("data"))}, {"vocab_fingerprint", corpus.vocab.fingerprint()}},
                   {name});
  return config;
}

json cmd_generate(const RunContext& ctx) {
  json config = resolve(ctx.config, default_config("generate"), "generate config");
  const auto seed = require_seed(config, ctx);
  auto sampling = SamplingConfig::from_json(config.at("sampling"));
  config["sampling"] = sampling.to_json();
  auto corpus = load_corpus(config);
  const auto ckpt_path = require_path(config, "checkpoint");
  auto ck = load_checkpoint(ckpt_path, corpus.vocab.fingerprint());
  auto model = load_tabgpt(ck, corpus.vocab);
  std::string user = get<std::string>(config, "user");
  if (user.empty()) user = ck.metadata.at("user_id").get<std::string>();
  config["user"] = user;
  const auto window = get<std::size_t>(config, "window");
  if (window < 2) throw ConfigError("generate: window must be at least 2");
  auto prefixes_src = make_windows(find_entity(corpus.entities, user), window, window);
  if (prefixes_src.empty()) throw std::invalid_argument("generate: user '" + user + "' has fewer rows than one window");
  std::vector<std::vector<std::int32_t>> prefixes;
  for (const auto& w : prefixes_src) prefixes.emplace_back(w.tokens.begin(), w.tokens.begin() + std::ptrdiff_t(w.fields));
  auto generated = generate(model, corpus.vocab, prefixes, window - 1, sampling, seed);
  for (std::size_t i = 0; i < generated.size(); ++i) {
    generated[i].entity_id = user;
    generated[i].start_index = prefixes_src[i].start_index;
  }
  auto tokens = windows_to_json(generated, corpus.vocab);
  tokens["upstream"] = {{"checkpoint_sha256", sha256_file(ckpt_path)}, {"data_sha256", corpus.data_sha256}, {"seed", seed}};
  write_json(ctx.out / "generated.tokens.json", tokens);
  write_csv(ctx.out / "generated.csv", decode_windows(generated, corpus.vocab));
  log(1, "generate: " + std::to_string(generated.size()) + " windows for user " + user);
  write_provenance(ctx.out, "generate", config,
                   {{"data", file_input(config.at("data"))}, {"checkpoint", file_input(ckpt_path)}},
                   {"generated.tokens.json", "generated.csv"});
  return config;
}

json dataset_defaults() { return {{"name", ""}, {"data", ""}, {"user", ""}, {"tokens", ""}}; }

NamedWindows load_dataset(const json& spec, const Vocabulary& vocab, std::size_t window, json& inputs) {
  json d = resolve(spec, dataset_defaults(), "evaluate dataset");
  NamedWindows out;
  out.name = get<std::string>(d, "name");
  const auto tokens = get<std::string>(d, "tokens");
  const auto data = get<std::string>(d, "data");
  if (tokens.empty() == data.empty()) throw ConfigError("evaluate dataset: set exactly one of 'tokens' or 'data'");
  if (!tokens.empty()) {
    if (!fs::exists(tokens)) throw FileError("token grid not found: " + tokens);
    out.windows = windows_from_json(json::parse(read_file(tokens)), vocab);
    if (out.name.empty()) out.name = fs::path(tokens).stem().string();
    inputs[out.name] = file_input(tokens);
  } else {
    if (!fs::exists(data)) throw FileError("data not found: " + data);
    auto entities = encode_table(read_csv(data), vocab);
    const auto user = get<std::string>(d, "user");
    if (user.empty()) {
      out.windows = build_windows(entities, vocab.schema(), window, window);
    } else {
      out.windows = make_windows(find_entity(entities, user), window, window);
    }
    if (out.name.empty()) out.name = user.empty() ? "real" : user;
    inputs[out.name] = file_input(data);
  }
  return out;
}

json cmd_evaluate(const RunContext& ctx) {
  json config = resolve(ctx.config, default_config("evaluate"), "evaluate config");
  const auto vocab = load_vocabulary(require_path(config, "vocab"));
  const auto ckpt_path = require_path(config, "checkpoint");
  auto backbone = load_tabbert(load_checkpoint(ckpt_path, vocab.fingerprint()), vocab);
  const auto window = get<std::size_t>(config, "window");
  json inputs = {{"checkpoint", file_input(ckpt_path)}, {"vocab_fingerprint", vocab.fingerprint()}};
  auto real = load_dataset(config.at("real"), vocab, window, inputs);
  auto generated = load_dataset(config.at("generated"), vocab, window, inputs);
  std::vector<NamedWindows> extra;
  if (!config.at("extra").is_array()) throw ConfigError("evaluate: 'extra' must be a list of datasets");
  for (const auto& e : config.at("extra")) extra.push_back(load_dataset(e, vocab, window, inputs));
  auto report = fidelity_report(real, generated, extra, backbone, vocab);
  json j = report.to_json();
  j["inputs"] = inputs;
  write_json(ctx.out / "report.json", j);
  write_file(ctx.out / "report.tsv", report.to_tsv());
  log(1, "evaluate: FID(" + real.name + ", " + generated.name + ") = " + fixed(report.fid(0, 1), "%.4f"));
  write_provenance(ctx.out, "evaluate", config, inputs, {"report.json", "report.tsv"});
  return config;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"gen-data",   "build-vocab", "pretrain-bert", "extract-features",
                                                 "downstream", "train-gpt",   "generate",      "evaluate"};
  return names;
}

json default_config(const std::string& command) {
  const json windows = {{"window", 10}, {"stride", 10}};
  auto with = [&](json j) {
    j.update(windows);
    return j;
  };
  if (command == "gen-data") {
    return {{"seed", nullptr},
            {"kind", "transactions"},
            {"stem", "data"},
            {"transactions", TransactionConfig{}.to_json()},
            {"pollution", PollutionConfig{}.to_json()}};
  }
  if (command == "build-vocab") {
    return {{"data", ""}, {"kind", "transactions"}, {"default_bins", 32}, {"bins_per_field", json::object()}};
  }
  if (command == "pretrain-bert") {
    return with({{"seed", nullptr},
                 {"data", ""},
                 {"vocab", ""},
                 {"aggregation", "last_row"},
                 {"pretrain", PretrainConfig{}.to_json()}});
  }
  if (command == "extract-features") {
    return with({{"data", ""}, {"vocab", ""}, {"checkpoint", ""}, {"aggregation", "last_row"}, {"pooling", "mean"}});
  }
  if (command == "downstream") {
    return with({{"seed", nullptr},
                 {"data", ""},
                 {"vocab", ""},
                 {"checkpoint", ""},
                 {"aggregation", "last_row"},
                 {"split_seed", 0},
                 {"downstream", DownstreamConfig{}.to_json()}});
  }
  if (command == "train-gpt") {
    return {{"seed", nullptr}, {"data", ""}, {"vocab", ""}, {"user", ""}, {"gpt", GptTrainConfig{}.to_json()}};
  }
  if (command == "generate") {
    return {{"seed", nullptr}, {"data", ""},   {"vocab", ""},
            {"checkpoint", ""}, {"user", ""}, {"window", 10},
            {"sampling", SamplingConfig{}.to_json()}};
  }
  if (command == "evaluate") {
    return {{"vocab", ""},
            {"checkpoint", ""},
            {"window", 10},
            {"real", dataset_defaults()},
            {"generated", dataset_defaults()},
            {"extra", json::array()}};
  }
  throw ConfigError("unknown command '" + command + "'");
}

json run_command(const std::string& command, const RunContext& context) {
  if (context.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(context.out);
  json resolved;
  if (command == "gen-data") resolved = cmd_gen_data(context);
  else if (command == "build-vocab") resolved = cmd_build_vocab(context);
  else if (command == "pretrain-bert") resolved = cmd_pretrain_bert(context);
  else if (command == "extract-features") resolved = cmd_extract_features(context);
  else if (command == "downstream") resolved = cmd_downstream(context);
  else if (command == "train-gpt") resolved = cmd_train_gpt(context);
  else if (command == "generate") resolved = cmd_generate(context);
  else if (command == "evaluate") resolved = cmd_evaluate(context);
  else throw ConfigError("unknown command '" + command + "'");
  write_json(context.out / (command + ".config.json"), resolved);
  return resolved;
}

int report_error(std::exception_ptr error) {
  auto fail = [](int code, const char* category, const std::string& what) {
    std::cerr << "error [" << category << "]: " << what << '\n';
    return code;
  };
  try {
    std::rethrow_exception(error);
  } catch (const ConfigError& e) {
    return fail(kConfigError, "config", e.what());
  } catch (const json::exception& e) {
    return fail(kConfigError, "config", e.what());
  } catch (const FileError& e) {
    return fail(kMissingFile, "file", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kMissingFile, "file", e.what());
  } catch (const FingerprintMismatch& e) {
    return fail(kFingerprintMismatch, "fingerprint", e.what());
  } catch (const SchemaError& e) {
    return fail(kDataError, "data", e.what());
  } catch (const ShapeError& e) {
    return fail(kDataError, "data", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(kDataError, "data", e.what());
  } catch (const std::exception& e) {
    return fail(kInternalError, "internal", e.what());
  }
}

int main(int argc, const char* const* argv) {
  CLI::App app{"Tabular transformers: data generation, pretraining, downstream tasks, generation and evaluation"};
  app.require_subcommand(1);
  struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
  };
  std::map<std::string, Options> options;
  for (const auto& name : command_names()) {
    auto* sub = app.add_subcommand(name);
    auto& o = options[name];
    sub->add_option("--config", o.config, "JSON config file (defaults apply to missing keys)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed; overrides the config value");
    sub->add_option("--out", o.out, "Output directory")->required();
  }
  auto* print = app.add_subcommand("print-config", "Print a command's default config");
  std::string print_name;
  print->add_option("command", print_name)->required()->check(CLI::IsMember(command_names()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }
  try {
    if (print->parsed()) {
      std::cout << dump(default_config(print_name));
      return kOk;
    }
    for (const auto& name : command_names()) {
      auto* sub = app.get_subcommand(name);
      if (!sub->parsed()) continue;
      const auto& o = options[name];
      RunContext ctx;
      if (!o.config.empty()) {
        try {
          ctx.config = json::parse(read_file(o.config));
        } catch (const json::parse_error& e) {
          throw ConfigError("cannot parse " + o.config + ": " + e.what());
        }
      }
      ctx.seed = o.seed;
      ctx.out = o.out;
      run_command(name, ctx);
    }
    return kOk;
  } catch (...) {
    return report_error(std::current_exception());
  }
}

}  // namespace tabformer::cli
