#include "tabformer/synthgen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "tabformer/hash.hpp"
#include "tabformer/json_util.hpp"
#include "tabformer/rng.hpp"

namespace tabformer {
namespace {

struct City {
  const char* name;
  const char* state;
  int zip_base;
};

constexpr City kCities[] = {
    {"Ashford", "CA", 90210},   {"Bellmont", "CA", 94016},  {"Cedar Falls", "IA", 50613},
    {"Dunmore", "PA", 18512},   {"Eastport", "ME", 4631},   {"Fairview", "TX", 75069},
    {"Glenwood", "IL", 60425},  {"Harborview", "WA", 98101}, {"Ironton", "OH", 45638},
    {"Jasper", "AL", 35501},    {"Kingsley", "MI", 49649},  {"Lakeside", "AZ", 85929},
    {"Millbrook", "NY", 12545}, {"Northfield", "MN", 55057}, {"Oakridge", "TN", 37830},
    {"Pinehurst", "NC", 28374}, {"Quincy", "MA", 2169},     {"Riverton", "WY", 82501},
    {"Springdale", "AR", 72762}, {"Troy", "NY", 12180},     {"Union City", "NJ", 7087},
    {"Vernon", "CT", 6066},     {"Westfield", "IN", 46074}, {"Yorktown", "VA", 23690},
};
constexpr std::size_t kNumCities = std::size(kCities);

constexpr const char* kStoreMcc[] = {"5411", "5812", "5814", "5541", "5912", "5311", "5300", "5999", "7011", "4121", "5732"};
constexpr const char* kOnlineMcc[] = {"4829", "5815", "5732", "4900", "5999"};
constexpr const char* kErrors[] = {"Insufficient Balance", "Bad PIN", "Technical Glitch"};

constexpr double kOnlineShare = 0.15;
constexpr double kSwipeShare = 0.2;
constexpr double kDayGapProbability = 0.15;

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

std::chrono::sys_days parse_date(const std::string& text) {
  int y = 0;
  unsigned m = 0, d = 0;
  if (std::sscanf(text.c_str(), "%d-%u-%u", &y, &m, &d) != 3) throw std::invalid_argument("bad date '" + text + "'");
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw std::invalid_argument("bad date '" + text + "'");
  return std::chrono::sys_days{ymd};
}

std::string format_time(std::chrono::sys_days day, int hour, int minute) {
  std::chrono::year_month_day ymd{day};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u %02d:%02d", int(ymd.year()), unsigned(ymd.month()),
                unsigned(ymd.day()), hour, minute);
  return buf;
}

bool is_online(const Merchant& m) { return m.use_chip == "Online Transaction"; }

std::string user_name(std::size_t index, std::size_t count) {
  const std::size_t width = std::to_string(count > 0 ? count - 1 : 0).size();
  std::string digits = std::to_string(index);
  return "u" + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

/// Picks `count` distinct entries of `pool`, falling back to `backup` when short.
std::vector<std::size_t> pick_distinct(std::vector<std::size_t> pool, const std::vector<std::size_t>& backup,
                                       std::size_t count, Rng& rng) {
  rng.shuffle(pool);
  std::vector<std::size_t> out;
  std::set<std::size_t> used;
  for (std::size_t m : pool) {
    if (out.size() == count) break;
    if (used.insert(m).second) out.push_back(m);
  }
  std::vector<std::size_t> rest = backup;
  rng.shuffle(rest);
  for (std::size_t m : rest) {
    if (out.size() == count) break;
    if (used.insert(m).second) out.push_back(m);
  }
  return out;
}

/// Distinct (hour, minute) pairs with hours from [lo, hi], sorted.
std::vector<std::pair<int, int>> pick_times(std::size_t count, int lo, int hi, Rng& rng) {
  std::set<std::pair<int, int>> times;
  while (times.size() < count) {
    int hour = lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1)));
    times.insert({hour, static_cast<int>(rng.index(60))});
  }
  return {times.begin(), times.end()};
}

double cents(double v) { return std::max(0.01, std::round(v * 100.0) / 100.0); }

nlohmann::json profile_json(const UserProfile& p, const std::vector<Merchant>& merchants) {
  nlohmann::json routine = nlohmann::json::array();
  for (const auto& s : p.routine) {
    routine.push_back({{"merchant", merchants[s.merchant].name},
                       {"hour", s.hour},
                       {"minute", s.minute},
                       {"amount", s.amount},
                       {"card", s.card}});
  }
  return {{"user_id", p.user_id},
          {"home_city", kCities[p.home_city].name},
          {"cards", p.cards},
          {"amount_lognormal", {{"location", p.amount_location}, {"scale", p.amount_scale}}},
          {"activity_pattern", p.activity_pattern()},
          {"fraud_rate", p.fraud_rate},
          {"routine", routine}};
}

}  // namespace

nlohmann::json TransactionConfig::to_json() const {
  return {{"n_users", n_users},
          {"rows_per_user", rows_per_user},
          {"fraud_rate", fraud_rate},
          {"n_merchants", n_merchants},
          {"deviation_rate", deviation_rate},
          {"min_routine", min_routine},
          {"max_routine", max_routine},
          {"min_burst", min_burst},
          {"max_burst", max_burst},
          {"fraud_amount_factor", fraud_amount_factor},
          {"error_rate", error_rate},
          {"start_date", start_date},
          {"contrast_users", contrast_users}};
}

TransactionConfig TransactionConfig::from_json(const nlohmann::json& j) {
  TransactionConfig c;
  check_keys(j, c.to_json(), "transactions config");
  read_key(j, "n_users", c.n_users);
  read_key(j, "rows_per_user", c.rows_per_user);
  read_key(j, "fraud_rate", c.fraud_rate);
  read_key(j, "n_merchants", c.n_merchants);
  read_key(j, "deviation_rate", c.deviation_rate);
  read_key(j, "min_routine", c.min_routine);
  read_key(j, "max_routine", c.max_routine);
  read_key(j, "min_burst", c.min_burst);
  read_key(j, "max_burst", c.max_burst);
  read_key(j, "fraud_amount_factor", c.fraud_amount_factor);
  read_key(j, "error_rate", c.error_rate);
  read_key(j, "start_date", c.start_date);
  read_key(j, "contrast_users", c.contrast_users);
  return c;
}

std::vector<double> UserProfile::merchant_preferences(std::size_t n_merchants, double deviation_rate) const {
  std::vector<double> p(n_merchants, deviation_rate / static_cast<double>(n_merchants));
  for (const auto& s : routine) p[s.merchant] += (1.0 - deviation_rate) / static_cast<double>(routine.size());
  return p;
}

std::vector<double> UserProfile::activity_pattern() const {
  std::vector<double> p(24, 0.0);
  for (const auto& s : routine) p[static_cast<std::size_t>(s.hour)] += 1.0 / static_cast<double>(routine.size());
  return p;
}

TypeHints transaction_hints() {
  TypeHints h;
  h.kinds = {{"timestamp", FieldKind::timestamp}, {"amount", FieldKind::continuous}, {"is_fraud", FieldKind::label}};
  h.entity = "user";
  return h;
}

std::vector<Merchant> make_merchants(std::size_t count, std::uint64_t seed) {
  Rng rng = Rng(seed).split("merchants");
  std::vector<Merchant> out;
  std::set<std::string> names;
  for (std::size_t i = 0; i < count; ++i) {
    Merchant m;
    do {
      m.name = "M" + std::to_string(100000 + rng.index(900000));
    } while (!names.insert(m.name).second);
    if (rng.bernoulli(kOnlineShare)) {
      m.city = "ONLINE";
      m.mcc = kOnlineMcc[rng.index(std::size(kOnlineMcc))];
      m.use_chip = "Online Transaction";
    } else {
      const City& c = kCities[rng.index(kNumCities)];
      m.city = c.name;
      m.state = c.state;
      char zip[16];
      std::snprintf(zip, sizeof(zip), "%05d", c.zip_base + static_cast<int>(rng.index(8)));
      m.zip = zip;
      m.mcc = kStoreMcc[rng.index(std::size(kStoreMcc))];
      m.use_chip = rng.bernoulli(kSwipeShare) ? "Swipe Transaction" : "Chip Transaction";
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<UserProfile> make_profiles(const TransactionConfig& config, const std::vector<Merchant>& merchants,
                                       std::uint64_t seed) {
  if (config.min_routine == 0 || config.min_routine > config.max_routine) {
    throw std::invalid_argument("transactions config: need 1 <= min_routine <= max_routine");
  }
  Rng root = Rng(seed).split("profiles");
  std::vector<std::size_t> all(merchants.size()), online;
  for (std::size_t i = 0; i < merchants.size(); ++i) {
    all[i] = i;
    if (is_online(merchants[i])) online.push_back(i);
  }
  auto with_mcc = [&](std::initializer_list<const char*> codes, bool allow_online) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < merchants.size(); ++i) {
      if (!allow_online && is_online(merchants[i])) continue;
      for (const char* c : codes) {
        if (merchants[i].mcc == c) out.push_back(i);
      }
    }
    return out;
  };

  std::vector<UserProfile> out;
  for (std::size_t u = 0; u < config.n_users; ++u) {
    Rng rng = root.split(u);
    UserProfile p;
    p.user_id = user_name(u, config.n_users);
    p.home_city = rng.index(kNumCities);
    p.cards = 1 + rng.index(3);
    p.fraud_rate = config.fraud_rate;
    const std::size_t length = config.min_routine + rng.index(config.max_routine - config.min_routine + 1);

    std::vector<std::size_t> candidates;
    int lo = 6, hi = 22;
    const bool contrast = config.contrast_users && u < 2;
    if (contrast && u == 0) {
      // Daytime, small-ticket, local food and grocery.
      candidates = with_mcc({"5411", "5812", "5814"}, false);
      lo = 8, hi = 16;
      p.amount_location = std::log(12.0), p.amount_scale = 0.3;
    } else if (contrast && u == 1) {
      // Evening, large-ticket, travel, electronics and online.
      candidates = with_mcc({"7011", "5732", "4829", "5815"}, true);
      lo = 18, hi = 23;
      p.amount_location = std::log(300.0), p.amount_scale = 0.5;
    } else {
      for (std::size_t i : all) {
        if (merchants[i].city == kCities[p.home_city].name) candidates.push_back(i);
      }
      candidates.insert(candidates.end(), online.begin(), online.end());
      switch (rng.index(3)) {
        case 0: lo = 6, hi = 17; break;
        case 1: lo = 10, hi = 23; break;
        default: lo = 0, hi = 23; break;
      }
      p.amount_location = std::log(rng.uniform(15.0, 120.0));
      p.amount_scale = rng.uniform(0.4, 0.9);
    }
    auto chosen = pick_distinct(candidates, all, length, rng);
    auto times = pick_times(length, lo, hi, rng);
    for (std::size_t s = 0; s < length; ++s) {
      p.routine.push_back({chosen[s], times[s].first, times[s].second,
                           cents(rng.lognormal(p.amount_location, p.amount_scale)), rng.index(p.cards)});
    }
    out.push_back(std::move(p));
  }
  return out;
}

GeneratedCorpus gen_transactions(const TransactionConfig& config, std::uint64_t seed) {
  if (config.n_users == 0 || config.rows_per_user == 0) throw std::invalid_argument("gen_transactions: sizes must be positive");
  if (config.n_merchants < config.max_routine) throw std::invalid_argument("gen_transactions: too few merchants");
  if (config.fraud_rate < 0.0 || config.fraud_rate >= 0.5) throw std::invalid_argument("gen_transactions: fraud_rate must be in [0, 0.5)");
  if (config.min_burst == 0 || config.min_burst > config.max_burst) {
    throw std::invalid_argument("gen_transactions: need 1 <= min_burst <= max_burst");
  }
  const auto merchants = make_merchants(config.n_merchants, seed);
  const auto profiles = make_profiles(config, merchants, seed);
  const auto start = parse_date(config.start_date);

  // Burst starts are drawn per non-burst row; solve for the start
  // probability that gives the configured fraction of fraud rows.
  const double mean_burst = 0.5 * double(config.min_burst + config.max_burst);
  const double f = config.fraud_rate;
  const double p_start = f <= 0.0 ? 0.0 : f / (f + mean_burst * (1.0 - f));

  GeneratedCorpus corpus;
  corpus.table.header = transaction_columns();
  Rng root = Rng(seed).split("rows");
  for (std::size_t u = 0; u < profiles.size(); ++u) {
    const UserProfile& p = profiles[u];
    Rng rng = root.split(u);
    auto day = start;
    std::size_t slot = 0, burst_left = 0;
    for (std::size_t r = 0; r < config.rows_per_user; ++r) {
      const RoutineSlot& s = p.routine[slot];
      std::size_t merchant = s.merchant, card = s.card;
      double amount = s.amount;
      bool fraud = false;
      if (burst_left == 0 && rng.bernoulli(p_start)) {
        burst_left = config.min_burst + rng.index(config.max_burst - config.min_burst + 1);
      }
      if (burst_left > 0) {
        fraud = true;
        --burst_left;
        merchant = rng.index(merchants.size());
        card = rng.index(p.cards);
        amount = cents(rng.lognormal(p.amount_location + std::log(config.fraud_amount_factor), p.amount_scale));
      } else if (rng.bernoulli(config.deviation_rate)) {
        merchant = rng.index(merchants.size());
        card = rng.index(p.cards);
        amount = cents(rng.lognormal(p.amount_location, p.amount_scale));
      }
      const Merchant& m = merchants[merchant];
      std::string errors = rng.bernoulli(config.error_rate) ? kErrors[rng.index(std::size(kErrors))] : "";
      corpus.table.rows.push_back({p.user_id, std::to_string(card), format_time(day, s.hour, s.minute),
                                   fmt("%.2f", amount), m.use_chip, m.name, m.city, m.state, m.zip, m.mcc,
                                   std::move(errors), fraud ? "Yes" : "No"});
      if (++slot == p.routine.size()) {
        slot = 0;
        day += std::chrono::days{rng.bernoulli(kDayGapProbability) ? 2 : 1};
      }
    }
  }

  nlohmann::json users = nlohmann::json::array();
  for (const auto& p : profiles) users.push_back(profile_json(p, merchants));
  nlohmann::json merchant_list = nlohmann::json::array();
  for (const auto& m : merchants) {
    merchant_list.push_back({{"name", m.name}, {"city", m.city}, {"state", m.state}, {"zip", m.zip}, {"mcc", m.mcc},
                             {"use_chip", m.use_chip}});
  }
  corpus.spec = {
      {"generator", "transactions"},
      {"seed", seed},
      {"config", config.to_json()},
      {"rules",
       {{"routine", "each user cycles through a fixed daily list of (merchant, time, amount, card) slots; "
                    "the day advances after the last slot, skipping one extra day with probability " +
                        fmt("%.2f", kDayGapProbability)},
        {"deviation", "with probability deviation_rate a slot uses a uniformly random merchant, random card and a "
                      "fresh log-normal amount"},
        {"fraud", "bursts of min_burst..max_burst consecutive slots start with probability " + fmt("%.6f", p_start) +
                      " per non-burst row; burst rows use uniformly random merchants and amounts drawn from the "
                      "user's log-normal shifted by log(fraud_amount_factor)"},
        {"errors", "independent of fraud, with probability error_rate"},
        {"merchants", "online share " + fmt("%.2f", kOnlineShare) + ", swipe share among stores " +
                          fmt("%.2f", kSwipeShare)},
        {"contrast_users", "first user: daytime food/grocery, small amounts; second user: evening "
                           "travel/electronics/online, large amounts"}}},
      {"merchants", merchant_list},
      {"users", users}};
  return corpus;
}

nlohmann::json PollutionConfig::to_json() const {
  return {{"n_sites", n_sites}, {"rows_per_site", rows_per_site}, {"ar_coefficient", ar_coefficient},
          {"start_date", start_date}};
}

PollutionConfig PollutionConfig::from_json(const nlohmann::json& j) {
  PollutionConfig c;
  check_keys(j, c.to_json(), "pollution config");
  read_key(j, "n_sites", c.n_sites);
  read_key(j, "rows_per_site", c.rows_per_site);
  read_key(j, "ar_coefficient", c.ar_coefficient);
  read_key(j, "start_date", c.start_date);
  return c;
}

TypeHints pollution_hints() {
  TypeHints h;
  for (const char* c : {"SO2", "NO2", "CO", "O3", "TEMP", "PRES", "DEWP"}) h.kinds[c] = FieldKind::continuous;
  h.kinds["timestamp"] = FieldKind::timestamp;
  h.kinds["PM2.5"] = FieldKind::target;
  h.kinds["PM10"] = FieldKind::target;
  h.entity = "station";
  return h;
}

GeneratedCorpus gen_pollution(const PollutionConfig& config, std::uint64_t seed) {
  if (config.n_sites == 0 || config.rows_per_site == 0) throw std::invalid_argument("gen_pollution: sizes must be positive");
  if (config.ar_coefficient < 0.0 || config.ar_coefficient >= 1.0) {
    throw std::invalid_argument("gen_pollution: ar_coefficient must be in [0, 1)");
  }
  const auto start = parse_date(config.start_date);
  const double a = config.ar_coefficient;
  const double two_pi = 2.0 * std::numbers::pi;

  GeneratedCorpus corpus;
  corpus.table.header = pollution_columns();
  nlohmann::json sites = nlohmann::json::array();
  Rng root = Rng(seed).split("sites");
  for (std::size_t s = 0; s < config.n_sites; ++s) {
    Rng rng = root.split(s);
    char name[32];
    std::snprintf(name, sizeof(name), "station_%02zu", s);
    const double level = rng.uniform(0.8, 1.3);
    const double warm = rng.uniform(-2.0, 2.0);
    sites.push_back({{"station", name}, {"pollution_level", level}, {"temperature_offset", warm}});

    double temp_noise = 0, pres_noise = 0, humidity = 0, stagnation = 0, pm10_noise = 0;
    double pm25 = level * 60.0;
    for (std::size_t t = 0; t < config.rows_per_site; ++t) {
      const int hour = static_cast<int>(t % 24);
      const auto day = start + std::chrono::days{static_cast<long>(t / 24)};
      const double doy = double((day - std::chrono::sys_days{std::chrono::year_month_day{
                                          std::chrono::year_month_day{day}.year(), std::chrono::January,
                                          std::chrono::day{1}}})
                                    .count());
      temp_noise = 0.95 * temp_noise + rng.normal(0.0, 0.8);
      pres_noise = 0.98 * pres_noise + rng.normal(0.0, 0.5);
      humidity = 0.9 * humidity + rng.normal(0.0, 1.0);
      stagnation = 0.9 * stagnation + rng.normal(0.0, 0.45);

      const double temp = 12.0 + warm + 14.0 * std::sin(two_pi * (doy - 110.0) / 365.0) +
                          5.0 * std::sin(two_pi * (hour - 9) / 24.0) + temp_noise;
      const double pres = 1015.0 - 0.6 * (temp - 12.0) + pres_noise;
      const double dewp = temp - 7.0 + humidity;
      const double traffic = 1.0 + 0.6 * std::exp(-(hour - 8) * (hour - 8) / 8.0) +
                             0.6 * std::exp(-(hour - 18) * (hour - 18) / 8.0);
      const double no2 = std::max(2.0, level * (30.0 * traffic + 12.0 * stagnation) + rng.normal(0.0, 4.0));
      const double co = std::max(100.0, level * (600.0 * traffic + 300.0 * stagnation) + rng.normal(0.0, 60.0));
      const double so2 = std::max(1.0, level * (8.0 + 4.0 * stagnation) + rng.normal(0.0, 1.5));
      const double o3 = std::max(1.0, 40.0 + 2.5 * (temp - 12.0) - 0.4 * (no2 - 30.0) + rng.normal(0.0, 5.0));
      const double drive = level * (60.0 + 1.2 * (no2 - 30.0) + 0.04 * (co - 600.0) + 25.0 * stagnation);
      pm25 = std::max(3.0, a * pm25 + (1.0 - a) * drive + rng.normal(0.0, 6.0));
      pm10_noise = 0.7 * pm10_noise + rng.normal(0.0, 6.0);
      const double pm10 = std::max(pm25, 1.35 * pm25 + 15.0 + pm10_noise);

      corpus.table.rows.push_back({format_time(day, hour, 0), name, fmt("%.1f", so2), fmt("%.1f", no2),
                                   fmt("%.1f", co), fmt("%.1f", o3), fmt("%.1f", temp), fmt("%.1f", pres),
                                   fmt("%.1f", dewp), fmt("%.1f", pm25), fmt("%.1f", pm10)});
    }
  }
  corpus.spec = {
      {"generator", "pollution"},
      {"seed", seed},
      {"config", config.to_json()},
      {"rules",
       {{"weather", "TEMP = seasonal + diurnal sinusoids + AR(0.95) noise; PRES falls 0.6 per degree plus AR(0.98) "
                    "noise; DEWP = TEMP - 7 + AR(0.9) humidity"},
        {"pollutants", "SO2, NO2, CO driven by rush-hour traffic and an AR(0.9) stagnation index; O3 rises with "
                       "TEMP and falls with NO2"},
        {"PM2.5", "PM2.5_t = a*PM2.5_{t-1} + (1-a)*level*(60 + 1.2*(NO2-30) + 0.04*(CO-600) + 25*stagnation) + "
                  "N(0, 6), floored at 3"},
        {"PM10", "1.35*PM2.5 + 15 + AR(0.7) noise, at least PM2.5"}}},
      {"sites", sites}};
  return corpus;
}

void write_corpus(const GeneratedCorpus& corpus, const std::filesystem::path& dir, const std::string& stem) {
  write_csv(dir / (stem + ".csv"), corpus.table);
  write_file(dir / (stem + ".spec.json"), corpus.spec.dump(2) + "\n");
}

}  // namespace tabformer
