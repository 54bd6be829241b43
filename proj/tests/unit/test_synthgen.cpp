#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "tabformer/hash.hpp"
#include "tabformer/heads.hpp"
#include "tabformer/synthgen.hpp"

using namespace tabformer;

namespace {

const GeneratedCorpus& default_transactions() {
  static const GeneratedCorpus corpus = gen_transactions({}, 7);
  return corpus;
}

double lag1_autocorrelation(const std::vector<double>& x) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= double(x.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    den += (x[i] - mean) * (x[i] - mean);
    if (i > 0) num += (x[i] - mean) * (x[i - 1] - mean);
  }
  return num / den;
}

// Sparse bag-of-tokens sample for the logistic probe.
struct ProbeSample {
  std::map<std::int32_t, double> x;
  int y = 0;
};

// Class-balanced logistic regression by SGD; returns test F1 at p = 0.5.
double probe_f1(const std::vector<ProbeSample>& train, const std::vector<ProbeSample>& test, std::size_t dim) {
  std::vector<double> w(dim, 0.0);
  double b = 0.0, pos = 0.0;
  for (const auto& s : train) pos += s.y;
  const double n = double(train.size());
  const double w_pos = 0.5 * n / pos, w_neg = 0.5 * n / (n - pos);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(5);
  for (int epoch = 0; epoch < 20; ++epoch) {
    rng.shuffle(order);
    for (std::size_t i : order) {
      const auto& s = train[i];
      double z = b;
      for (auto [j, v] : s.x) z += w[std::size_t(j)] * v;
      const double g = (1.0 / (1.0 + std::exp(-z)) - s.y) * (s.y ? w_pos : w_neg);
      for (auto [j, v] : s.x) w[std::size_t(j)] -= 0.05 * (g * v + 1e-4 * w[std::size_t(j)]);
      b -= 0.05 * g;
    }
  }
  double tp = 0, fp = 0, fn = 0;
  for (const auto& s : test) {
    double z = b;
    for (auto [j, v] : s.x) z += w[std::size_t(j)] * v;
    const bool predicted = z > 0.0;
    tp += predicted && s.y;
    fp += predicted && !s.y;
    fn += !predicted && s.y;
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

}  // namespace

TEST_CASE("default transaction corpus: 50 users x 2000 rows, 12 columns") {
  const auto& c = default_transactions();
  CHECK(c.table.header.size() == 12);
  CHECK(c.table.header == transaction_columns());
  CHECK(c.table.rows.size() == 100000);
  std::map<std::string, std::size_t> per_user;
  for (const auto& row : c.table.rows) {
    REQUIRE(row.size() == 12);
    ++per_user[row[0]];
  }
  CHECK(per_user.size() == 50);
  for (const auto& [user, n] : per_user) CHECK(n == 2000);
}

TEST_CASE("fraud row fraction is within 20% of the configured rate") {
  const auto& c = default_transactions();
  const std::size_t label = c.table.column("is_fraud");
  std::size_t fraud = 0;
  for (const auto& row : c.table.rows) fraud += parse_label(row[label]) ? 1 : 0;
  const double rate = double(fraud) / double(c.table.rows.size());
  CHECK(rate > 0.8 * 0.01);
  CHECK(rate < 1.2 * 0.01);

  TransactionConfig none;
  none.fraud_rate = 0.0;
  none.n_users = 3;
  none.rows_per_user = 300;
  for (const auto& row : gen_transactions(none, 1).table.rows) CHECK(row[label] == "No");
}

TEST_CASE("rows are chronological per user and in the expected formats") {
  const auto& c = default_transactions();
  std::string prev_user, prev_time;
  for (const auto& row : c.table.rows) {
    if (row[0] == prev_user) CHECK(row[2] > prev_time);
    prev_user = row[0];
    prev_time = row[2];
    CHECK(parse_time_parts(row[2]).has_value());
    CHECK(std::stod(row[3]) > 0.0);
  }
}

TEST_CASE("same seed gives identical bytes; different seeds differ") {
  TransactionConfig small;
  small.n_users = 5;
  small.rows_per_user = 400;
  auto a = gen_transactions(small, 11);
  auto b = gen_transactions(small, 11);
  auto d = gen_transactions(small, 12);
  CHECK(to_csv(a.table) == to_csv(b.table));
  CHECK(a.spec.dump() == b.spec.dump());
  CHECK(to_csv(a.table) != to_csv(d.table));

  PollutionConfig p;
  p.rows_per_site = 200;
  CHECK(to_csv(gen_pollution(p, 3).table) == to_csv(gen_pollution(p, 3).table));
  CHECK(to_csv(gen_pollution(p, 3).table) != to_csv(gen_pollution(p, 4).table));
}

TEST_CASE("transactions ingest with zero unknown tokens") {
  const auto& c = default_transactions();
  auto schema = infer_schema(c.table.header, transaction_hints());
  auto vocab = build_vocabulary(c.table, schema);
  CHECK(vocab.field_count() == 12);
  for (const auto& row : c.table.rows) {
    for (std::int32_t id : vocab.encode_row(row)) REQUIRE(id != kUnkId);
  }
  for (const auto& f : vocab.fields()) CHECK(f.field_name != "is_fraud");
}

TEST_CASE("contrast users have divergent profiles") {
  const auto& c = default_transactions();
  const auto& users = c.spec.at("users");
  REQUIRE(users.size() == 50);
  auto mean_amount = [&](const std::string& id) {
    double sum = 0;
    int n = 0;
    for (const auto& row : c.table.rows) {
      if (row[0] == id) sum += std::stod(row[3]), ++n;
    }
    return sum / n;
  };
  CHECK(mean_amount("u01") > 10.0 * mean_amount("u00"));
  for (const auto& slot : users[0].at("routine")) CHECK(slot.at("hour").get<int>() <= 16);
  for (const auto& slot : users[1].at("routine")) CHECK(slot.at("hour").get<int>() >= 18);
}

TEST_CASE("config json rejects unknown keys and keeps defaults") {
  auto c = TransactionConfig::from_json({{"n_users", 3}});
  CHECK(c.n_users == 3);
  CHECK(c.rows_per_user == 2000);
  CHECK_THROWS_AS(TransactionConfig::from_json({{"n_user", 3}}), ConfigError);
  CHECK_THROWS_AS(TransactionConfig::from_json({{"n_users", "three"}}), ConfigError);
  CHECK_THROWS_AS(PollutionConfig::from_json({{"sites", 3}}), ConfigError);
  TransactionConfig bad;
  bad.fraud_rate = 0.7;
  CHECK_THROWS_AS(gen_transactions(bad, 1), std::invalid_argument);
}

TEST_CASE("pollution corpus: 4 sites x 3000 rows, 11 columns, autocorrelated targets") {
  auto c = gen_pollution({}, 5);
  CHECK(c.table.header.size() == 11);
  CHECK(c.table.rows.size() == 12000);
  auto schema = infer_schema(c.table.header, pollution_hints());
  CHECK(schema.model_columns().size() == 9);
  CHECK(schema.target_columns().size() == 2);

  for (const char* target : {"PM2.5", "PM10"}) {
    const std::size_t col = c.table.column(target);
    std::map<std::string, std::vector<double>> series;
    for (const auto& row : c.table.rows) series[row[1]].push_back(std::stod(row[col]));
    CHECK(series.size() == 4);
    for (const auto& [site, x] : series) CHECK(lag1_autocorrelation(x) > 0.5);
  }
  auto vocab = build_vocabulary(c.table, schema);
  CHECK(vocab.field_count() == 10);  // timestamp expands to hour + weekday
  for (const auto& row : c.table.rows) {
    for (std::int32_t id : vocab.encode_row(row)) REQUIRE(id != kUnkId);
  }
}

TEST_CASE("write_corpus emits csv and spec sidecar") {
  TransactionConfig small;
  small.n_users = 2;
  small.rows_per_user = 50;
  auto c = gen_transactions(small, 9);
  auto dir = std::filesystem::temp_directory_path() / "tabformer_test_synth";
  std::filesystem::remove_all(dir);
  write_corpus(c, dir, "txn");
  auto back = read_csv(dir / "txn.csv");
  CHECK(back.rows == c.table.rows);
  auto spec = nlohmann::json::parse(read_file(dir / "txn.spec.json"));
  CHECK(spec.at("seed").get<std::uint64_t>() == 9);
  CHECK(spec.at("config").at("n_users").get<int>() == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("fraud signal is temporal: a window probe beats a single-row probe") {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto corpus = gen_transactions({}, seed);
    auto schema = infer_schema(corpus.table.header, transaction_hints());
    auto vocab = build_vocabulary(corpus.table, schema, {8, {}});
    auto entities = encode_table(corpus.table, vocab);
    std::vector<ProbeSample> rows, windows;
    for (const auto& e : entities) {
      for (std::size_t start = 0; start + 10 <= e.tokens.size(); start += 10) {
        ProbeSample window;
        for (std::size_t r = start; r < start + 10; ++r) {
          ProbeSample row;
          row.y = e.labels[r];
          for (std::int32_t id : e.tokens[r]) {
            row.x[id] += 1.0;
            window.x[id] += 0.1;
          }
          window.y = std::max(window.y, row.y);
          rows.push_back(std::move(row));
        }
        windows.push_back(std::move(window));
      }
    }
    auto split = [](const std::vector<ProbeSample>& all, std::vector<ProbeSample>& train,
                    std::vector<ProbeSample>& test) {
      auto s = split_indices(all.size(), 0.3, 9);
      for (auto i : s.train) train.push_back(all[i]);
      for (auto i : s.test) test.push_back(all[i]);
    };
    std::vector<ProbeSample> row_train, row_test, window_train, window_test;
    split(rows, row_train, row_test);
    split(windows, window_train, window_test);
    const auto dim = std::size_t(vocab.total_size());
    const double row_f1 = probe_f1(row_train, row_test, dim), window_f1 = probe_f1(window_train, window_test, dim);
    INFO("seed " << seed << ": row F1 " << row_f1 << ", window F1 " << window_f1);
    CHECK(row_f1 < window_f1);
  }
}
