#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabformer/csv.hpp"
#include "tabformer/datapipe.hpp"
#include "tabformer/json_util.hpp"

namespace tabformer {

/// Knobs for the transaction generator. Every user follows a daily routine
/// of merchant visits; rows stray from it at `deviation_rate`, and fraud
/// arrives as bursts of consecutive out-of-routine rows.
struct TransactionConfig {
  std::size_t n_users = 50;
  std::size_t rows_per_user = 2000;
  double fraud_rate = 0.01;  // target fraction of fraudulent rows
  std::size_t n_merchants = 300;
  double deviation_rate = 0.1;
  std::size_t min_routine = 3;
  std::size_t max_routine = 7;
  std::size_t min_burst = 3;
  std::size_t max_burst = 6;
  double fraud_amount_factor = 2.0;  // multiplies the user's typical amount
  double error_rate = 0.02;
  std::string start_date = "2019-01-01";
  /// Include two users with deliberately divergent profiles (ids of the
  /// first two users).
  bool contrast_users = true;

  nlohmann::json to_json() const;
  /// Keys missing from `j` keep their defaults; unknown keys throw.
  static TransactionConfig from_json(const nlohmann::json& j);
};

struct RoutineSlot {
  std::size_t merchant = 0;
  int hour = 0;
  int minute = 0;
  double amount = 0.0;
  std::size_t card = 0;
};

struct UserProfile {
  std::string user_id;
  std::size_t home_city = 0;
  std::size_t cards = 1;
  std::vector<RoutineSlot> routine;  // sorted by time of day
  double amount_location = 0.0;      // log-normal parameters in currency units
  double amount_scale = 0.0;
  double fraud_rate = 0.0;

  /// Marginal merchant distribution implied by the routine and deviations.
  std::vector<double> merchant_preferences(std::size_t n_merchants, double deviation_rate) const;
  /// Marginal hour-of-day distribution of routine rows.
  std::vector<double> activity_pattern() const;
};

struct Merchant {
  std::string name;
  std::string city;
  std::string state;
  std::string zip;
  std::string mcc;
  std::string use_chip;
};

/// A generated table plus the sidecar describing how it was produced.
struct GeneratedCorpus {
  Table table;
  nlohmann::json spec;
};

inline const std::vector<std::string>& transaction_columns() {
  static const std::vector<std::string> cols = {"user",          "card",           "timestamp", "amount",
                                                "use_chip",      "merchant_name",  "merchant_city",
                                                "merchant_state", "zip",           "mcc",
                                                "errors",        "is_fraud"};
  return cols;
}

TypeHints transaction_hints();

std::vector<Merchant> make_merchants(std::size_t count, std::uint64_t seed);
std::vector<UserProfile> make_profiles(const TransactionConfig& config, const std::vector<Merchant>& merchants,
                                       std::uint64_t seed);

/// Rows ordered by user, then time. Deterministic per (config, seed).
GeneratedCorpus gen_transactions(const TransactionConfig& config, std::uint64_t seed);

struct PollutionConfig {
  std::size_t n_sites = 4;
  std::size_t rows_per_site = 3000;
  double ar_coefficient = 0.8;  // lag-1 weight of PM2.5 on itself
  std::string start_date = "2013-03-01";

  nlohmann::json to_json() const;
  static PollutionConfig from_json(const nlohmann::json& j);
};

inline const std::vector<std::string>& pollution_columns() {
  static const std::vector<std::string> cols = {"timestamp", "station", "SO2",  "NO2",   "CO",  "O3",
                                                "TEMP",      "PRES",    "DEWP", "PM2.5", "PM10"};
  return cols;
}

TypeHints pollution_hints();

/// Hourly readings per site; PM2.5/PM10 follow an AR(1) process driven by
/// the other columns.
GeneratedCorpus gen_pollution(const PollutionConfig& config, std::uint64_t seed);

/// Writes `<stem>.csv` and `<stem>.spec.json` into `dir`.
void write_corpus(const GeneratedCorpus& corpus, const std::filesystem::path& dir, const std::string& stem);

}  // namespace tabformer
