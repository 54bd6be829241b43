#include <algorithm>
#include <charconv>
#include <map>

#include "tabformer/datapipe.hpp"

namespace tabformer {
namespace {

double parse_target(const std::string& text, const std::string& column) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw SchemaError("target column '" + column + "' has non-numeric value '" + text + "'");
  }
  return v;
}

}  // namespace

std::vector<EntityRows> encode_table(const Table& table, const Vocabulary& vocab) {
  const TableSchema& schema = vocab.schema();
  if (table.header.size() != schema.fields.size()) throw SchemaError("encode_table: header/schema arity mismatch");
  for (std::size_t i = 0; i < schema.fields.size(); ++i) {
    if (table.header[i] != schema.fields[i].name) {
      throw SchemaError("encode_table: column '" + table.header[i] + "' does not match schema");
    }
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    groups[schema.entity_key ? table.rows[r][*schema.entity_key] : std::string()].push_back(r);
  }

  const std::size_t key = schema.ordering_key;
  const bool numeric_key = schema.fields[key].kind != FieldKind::timestamp;
  auto key_less = [&](std::size_t a, std::size_t b) {
    const std::string& x = table.rows[a][key];
    const std::string& y = table.rows[b][key];
    if (numeric_key) return parse_target(x, schema.fields[key].name) < parse_target(y, schema.fields[key].name);
    return x < y;  // ISO timestamps order lexicographically
  };

  const auto label = schema.label_column();
  const auto targets = schema.target_columns();
  std::vector<EntityRows> out;
  for (auto& [entity, indices] : groups) {
    std::stable_sort(indices.begin(), indices.end(), key_less);
    EntityRows e;
    e.entity_id = entity;
    for (std::size_t r : indices) {
      const auto& row = table.rows[r];
      e.tokens.push_back(vocab.encode_row(row));
      if (label) e.labels.push_back(parse_label(row[*label]) ? 1 : 0);
      if (!targets.empty()) {
        std::vector<double> t;
        for (std::size_t c : targets) t.push_back(parse_target(row[c], schema.fields[c].name));
        e.targets.push_back(std::move(t));
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::size_t window_count(std::size_t rows, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw std::invalid_argument("window and stride must be >= 1");
  return rows < window ? 0 : (rows - window) / stride + 1;
}

std::vector<WindowSample> make_windows(const EntityRows& rows, std::size_t window, std::size_t stride) {
  const std::size_t count = window_count(rows.tokens.size(), window, stride);
  std::vector<WindowSample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    WindowSample w;
    w.entity_id = rows.entity_id;
    w.start_index = k * stride;
    w.rows = window;
    w.fields = rows.tokens[w.start_index].size();
    w.tokens.reserve(window * w.fields);
    for (std::size_t r = w.start_index; r < w.start_index + window; ++r) {
      if (rows.tokens[r].size() != w.fields) throw SchemaError("make_windows: ragged rows");
      w.tokens.insert(w.tokens.end(), rows.tokens[r].begin(), rows.tokens[r].end());
    }
    out.push_back(std::move(w));
  }
  return out;
}

void attach_labels(std::vector<WindowSample>& windows, const EntityRows& rows, const TableSchema& schema,
                   TargetAggregation aggregation) {
  const bool has_label = schema.label_column().has_value();
  const bool has_targets = !schema.target_columns().empty();
  if (!has_label && !has_targets) throw SchemaError("attach_labels: schema has no label or target column");
  for (auto& w : windows) {
    if (w.entity_id != rows.entity_id || w.start_index + w.rows > rows.tokens.size()) {
      throw SchemaError("attach_labels: window does not belong to these rows");
    }
    if (has_label) {
      int any = 0;
      for (std::size_t r = w.start_index; r < w.start_index + w.rows; ++r) any |= rows.labels.at(r);
      w.label = any;
    }
    if (has_targets) {
      if (aggregation == TargetAggregation::last_row) {
        w.targets = rows.targets.at(w.start_index + w.rows - 1);
      } else {
        std::vector<double> acc(rows.targets.at(w.start_index).size(), 0.0);
        for (std::size_t r = w.start_index; r < w.start_index + w.rows; ++r) {
          for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += rows.targets[r][j];
        }
        for (double& a : acc) a /= double(w.rows);
        w.targets = std::move(acc);
      }
    }
  }
}

std::vector<WindowSample> build_windows(const std::vector<EntityRows>& entities, const TableSchema& schema,
                                        std::size_t window, std::size_t stride, TargetAggregation aggregation) {
  const bool labeled = schema.label_column() || !schema.target_columns().empty();
  std::vector<WindowSample> out;
  for (const auto& e : entities) {
    auto ws = make_windows(e, window, stride);
    if (labeled) attach_labels(ws, e, schema, aggregation);
    out.insert(out.end(), std::make_move_iterator(ws.begin()), std::make_move_iterator(ws.end()));
  }
  return out;
}

bool validate_window(const WindowSample& window, const Vocabulary& vocab) {
  if (window.fields != vocab.field_count() || window.tokens.size() != window.rows * window.fields) return false;
  for (std::size_t r = 0; r < window.rows; ++r) {
    for (std::size_t f = 0; f < window.fields; ++f) {
      const std::int32_t id = window.at(r, f);
      if (id >= 0 && id < kNumSpecialTokens) continue;
      if (!vocab.field(f).owns(id)) return false;
    }
  }
  return true;
}

}  // namespace tabformer
