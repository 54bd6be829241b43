#include <algorithm>
#include <charconv>
#include <chrono>
#include <set>

#include "tabformer/datapipe.hpp"

namespace tabformer {

std::string to_string(FieldKind kind) {
  switch (kind) {
    case FieldKind::categorical: return "categorical";
    case FieldKind::continuous: return "continuous";
    case FieldKind::timestamp: return "timestamp";
    case FieldKind::label: return "label";
    case FieldKind::target: return "target";
  }
  return "categorical";
}

FieldKind field_kind_from_string(const std::string& text) {
  if (text == "categorical") return FieldKind::categorical;
  if (text == "continuous") return FieldKind::continuous;
  if (text == "timestamp") return FieldKind::timestamp;
  if (text == "label") return FieldKind::label;
  if (text == "target") return FieldKind::target;
  throw SchemaError("unknown field kind '" + text + "'");
}

std::size_t TableSchema::column(const std::string& name) const {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].name == name) return i;
  }
  throw SchemaError("schema has no column '" + name + "'");
}

std::optional<std::size_t> TableSchema::label_column() const {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].kind == FieldKind::label) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> TableSchema::target_columns() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].kind == FieldKind::target) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> TableSchema::model_columns() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].include_in_model) out.push_back(i);
  }
  return out;
}

nlohmann::json TableSchema::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& f : fields) {
    cols.push_back({{"name", f.name}, {"kind", to_string(f.kind)}, {"include_in_model", f.include_in_model}});
  }
  nlohmann::json j = {{"fields", cols}, {"ordering_key", fields.at(ordering_key).name}};
  j["entity_key"] = entity_key ? nlohmann::json(fields.at(*entity_key).name) : nlohmann::json(nullptr);
  return j;
}

TableSchema TableSchema::from_json(const nlohmann::json& j) {
  TableSchema s;
  for (const auto& c : j.at("fields")) {
    s.fields.push_back({c.at("name").get<std::string>(), field_kind_from_string(c.at("kind").get<std::string>()),
                        c.at("include_in_model").get<bool>()});
  }
  s.ordering_key = s.column(j.at("ordering_key").get<std::string>());
  if (j.contains("entity_key") && !j.at("entity_key").is_null()) {
    s.entity_key = s.column(j.at("entity_key").get<std::string>());
  }
  return s;
}

TableSchema infer_schema(std::span<const std::string> header, const TypeHints& hints) {
  if (header.empty()) throw SchemaError("infer_schema: empty header");
  std::set<std::string> seen;
  for (const auto& name : header) {
    if (!seen.insert(name).second) throw SchemaError("infer_schema: duplicate column '" + name + "'");
  }
  for (const auto& [name, kind] : hints.kinds) {
    if (!seen.count(name)) throw SchemaError("infer_schema: hint for unknown column '" + name + "'");
  }
  for (const auto* named : {&hints.entity, &hints.row_index}) {
    if (*named && !seen.count(**named)) throw SchemaError("infer_schema: hint for unknown column '" + **named + "'");
  }

  TableSchema schema;
  std::vector<std::size_t> ordering;
  for (std::size_t i = 0; i < header.size(); ++i) {
    FieldSpec f{header[i], FieldKind::categorical, true};
    if (auto it = hints.kinds.find(header[i]); it != hints.kinds.end()) f.kind = it->second;
    if (f.kind == FieldKind::label || f.kind == FieldKind::target) f.include_in_model = false;
    if (f.kind == FieldKind::timestamp) ordering.push_back(i);
    if (hints.row_index && *hints.row_index == header[i]) {
      if (f.kind == FieldKind::timestamp) throw SchemaError("infer_schema: row index column cannot be a timestamp");
      f.include_in_model = false;
      ordering.push_back(i);
    }
    if (hints.entity && *hints.entity == header[i]) {
      if (f.kind != FieldKind::categorical) throw SchemaError("infer_schema: entity column must be categorical");
      schema.entity_key = i;
    }
    schema.fields.push_back(f);
  }
  if (ordering.size() != 1) {
    throw SchemaError("infer_schema: expected exactly one ordering key (timestamp or row index), found " +
                      std::to_string(ordering.size()));
  }
  schema.ordering_key = ordering[0];
  return schema;
}

std::vector<ModelField> model_fields(const TableSchema& schema) {
  std::vector<ModelField> out;
  for (std::size_t i = 0; i < schema.fields.size(); ++i) {
    const FieldSpec& f = schema.fields[i];
    if (!f.include_in_model) continue;
    switch (f.kind) {
      case FieldKind::categorical: out.push_back({f.name, i, ModelFieldKind::categorical}); break;
      case FieldKind::continuous: out.push_back({f.name, i, ModelFieldKind::continuous}); break;
      case FieldKind::timestamp:
        out.push_back({f.name + ".hour", i, ModelFieldKind::hour});
        out.push_back({f.name + ".dow", i, ModelFieldKind::day_of_week});
        break;
      case FieldKind::label:
      case FieldKind::target: break;
    }
  }
  return out;
}

namespace {

bool parse_int(std::string_view text, int& out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

std::optional<TimeParts> parse_time_parts(const std::string& text) {
  // YYYY-MM-DD[ T]HH:MM[:SS]
  if (text.size() < 16 || text[4] != '-' || text[7] != '-' || (text[10] != ' ' && text[10] != 'T') ||
      text[13] != ':') {
    return std::nullopt;
  }
  std::string_view s(text);
  int year = 0, month = 0, day = 0, hour = 0, minute = 0;
  if (!parse_int(s.substr(0, 4), year) || !parse_int(s.substr(5, 2), month) || !parse_int(s.substr(8, 2), day) ||
      !parse_int(s.substr(11, 2), hour) || !parse_int(s.substr(14, 2), minute)) {
    return std::nullopt;
  }
  if (hour < 0 || hour > 23 || minute < 0 || minute > 59) return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                                  std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) return std::nullopt;
  std::chrono::weekday wd{std::chrono::sys_days{ymd}};
  return TimeParts{hour, static_cast<int>(wd.c_encoding())};
}

bool parse_label(const std::string& text) {
  std::string lower;
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower == "1" || lower == "yes" || lower == "true";
}

}  // namespace tabformer
