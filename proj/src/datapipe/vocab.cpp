#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "tabformer/datapipe.hpp"
#include "tabformer/hash.hpp"

namespace tabformer {
namespace {

constexpr const char* kSpecialNames[] = {"[PAD]", "[MASK]", "[UNK]", "[SEP]"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out.push_back(s[i]);
      continue;
    }
    char c = s[++i];
    out.push_back(c == 't' ? '\t' : c == 'n' ? '\n' : c == 'r' ? '\r' : c);
  }
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_double(const std::string& text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string header_line() {
  std::string line = "#tabformer-vocab\tv1";
  for (int i = 0; i < kNumSpecialTokens; ++i) line += "\t" + std::string(kSpecialNames[i]) + "=" + std::to_string(i);
  return line;
}

}  // namespace

std::int32_t FieldVocab::encode(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnkId : offset + it->second;
}

Vocabulary::Vocabulary(TableSchema schema, std::vector<FieldVocab> fields, std::map<std::string, QuantizerSpec> quantizers)
    : schema_(std::move(schema)), fields_(std::move(fields)), quantizers_(std::move(quantizers)) {
  index();
}

void Vocabulary::index() {
  model_fields_ = tabformer::model_fields(schema_);
  if (model_fields_.size() != fields_.size()) throw SchemaError("vocabulary: field count does not match schema");
  std::int32_t offset = kNumSpecialTokens;
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    FieldVocab& f = fields_[i];
    if (f.field_name != model_fields_[i].name) {
      throw SchemaError("vocabulary: field '" + f.field_name + "' does not match schema field '" +
                        model_fields_[i].name + "'");
    }
    if (f.tokens.empty()) throw SchemaError("vocabulary: field '" + f.field_name + "' has no tokens");
    f.kind = model_fields_[i].kind;
    f.offset = offset;
    f.token_to_id.clear();
    for (std::size_t t = 0; t < f.tokens.size(); ++t) {
      if (!f.token_to_id.emplace(f.tokens[t], static_cast<std::int32_t>(t)).second) {
        throw SchemaError("vocabulary: duplicate token '" + f.tokens[t] + "' in field '" + f.field_name + "'");
      }
    }
    if (f.kind == ModelFieldKind::continuous) {
      auto it = quantizers_.find(f.field_name);
      if (it == quantizers_.end()) throw SchemaError("vocabulary: no quantizer for '" + f.field_name + "'");
      if (it->second.bin_count != f.tokens.size()) {
        throw SchemaError("vocabulary: quantizer/vocab size mismatch for '" + f.field_name + "'");
      }
    }
    offset += f.size();
  }
}

std::int32_t Vocabulary::total_size() const {
  return fields_.empty() ? kNumSpecialTokens : fields_.back().offset + fields_.back().size();
}

std::vector<std::int32_t> Vocabulary::field_sizes() const {
  std::vector<std::int32_t> out;
  for (const auto& f : fields_) out.push_back(f.size());
  return out;
}

std::optional<std::size_t> Vocabulary::field_of(std::int32_t global_id) const {
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    if (fields_[i].owns(global_id)) return i;
  }
  return std::nullopt;
}

std::vector<std::int32_t> Vocabulary::encode_row(std::span<const std::string> row) const {
  if (row.size() != schema_.fields.size()) {
    throw SchemaError("encode_row: row has " + std::to_string(row.size()) + " cells, schema has " +
                      std::to_string(schema_.fields.size()));
  }
  std::vector<std::int32_t> ids;
  ids.reserve(fields_.size());
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    const FieldVocab& f = fields_[i];
    const std::string& cell = row[model_fields_[i].column];
    switch (f.kind) {
      case ModelFieldKind::categorical: ids.push_back(f.encode(cell)); break;
      case ModelFieldKind::continuous: {
        auto v = parse_double(cell);
        if (!v) {
          ids.push_back(kUnkId);
          break;
        }
        const QuantizerSpec& q = quantizers_.at(f.field_name);
        ids.push_back(f.offset + static_cast<std::int32_t>(q.quantize(*v)));
        break;
      }
      case ModelFieldKind::hour:
      case ModelFieldKind::day_of_week: {
        auto parts = parse_time_parts(cell);
        if (!parts) {
          ids.push_back(kUnkId);
          break;
        }
        int value = f.kind == ModelFieldKind::hour ? parts->hour : parts->day_of_week;
        ids.push_back(f.encode(std::to_string(value)));
        break;
      }
    }
  }
  return ids;
}

std::string Vocabulary::token_string(std::int32_t global_id) const {
  if (global_id >= 0 && global_id < kNumSpecialTokens) return kSpecialNames[global_id];
  auto field = field_of(global_id);
  if (!field) throw std::out_of_range("token_string: id " + std::to_string(global_id) + " outside vocabulary");
  const FieldVocab& f = fields_[*field];
  return f.tokens[static_cast<std::size_t>(global_id - f.offset)];
}

std::string Vocabulary::decode_value(std::size_t field_index, std::int32_t global_id) const {
  const FieldVocab& f = fields_.at(field_index);
  if (!f.owns(global_id)) return "";
  const auto local = static_cast<std::size_t>(global_id - f.offset);
  if (f.kind == ModelFieldKind::continuous) return format_double(quantizers_.at(f.field_name).decode_center(local));
  return f.tokens[local];
}

std::string Vocabulary::vocab_text() const {
  std::string out = header_line() + "\n";
  for (const auto& f : fields_) {
    for (std::size_t t = 0; t < f.tokens.size(); ++t) {
      out += escape(f.field_name) + "\t" + escape(f.tokens[t]) + "\t" + std::to_string(t) + "\t" +
             std::to_string(f.offset + static_cast<std::int32_t>(t)) + "\n";
    }
  }
  return out;
}

std::string Vocabulary::quantizer_text() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, q] : quantizers_) list.push_back(q.to_json());
  nlohmann::json j = {{"format_version", 1}, {"quantizers", list}};
  return j.dump(2) + "\n";
}

std::string Vocabulary::schema_text() const { return schema_.to_json().dump(2) + "\n"; }

std::string Vocabulary::fingerprint() const {
  return sha256_hex(schema_text() + "\x1e" + vocab_text() + "\x1e" + quantizer_text());
}

Vocabulary Vocabulary::from_texts(const std::string& schema_text, const std::string& vocab_text,
                                  const std::string& quantizer_text) {
  TableSchema schema = TableSchema::from_json(nlohmann::json::parse(schema_text));

  std::map<std::string, QuantizerSpec> quantizers;
  auto qj = nlohmann::json::parse(quantizer_text);
  for (const auto& q : qj.at("quantizers")) {
    QuantizerSpec spec = QuantizerSpec::from_json(q);
    quantizers.emplace(spec.field_name, spec);
  }

  std::istringstream in(vocab_text);
  std::string line;
  if (!std::getline(in, line) || line != header_line()) throw std::runtime_error("vocab file: bad header line");
  std::vector<FieldVocab> fields;
  std::int32_t expected_global = kNumSpecialTokens;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 4) throw std::runtime_error("vocab file: expected 4 columns in '" + line + "'");
    std::string field = unescape(cols[0]);
    if (fields.empty() || fields.back().field_name != field) {
      fields.push_back(FieldVocab{});
      fields.back().field_name = field;
      fields.back().offset = expected_global;
    }
    FieldVocab& f = fields.back();
    if (std::stol(cols[2]) != f.size() || std::stol(cols[3]) != expected_global) {
      throw std::runtime_error("vocab file: non-contiguous ids at '" + line + "'");
    }
    f.tokens.push_back(unescape(cols[1]));
    ++expected_global;
  }
  return Vocabulary(std::move(schema), std::move(fields), std::move(quantizers));
}

Vocabulary build_vocabulary(const Table& table, const TableSchema& schema, const VocabConfig& config) {
  if (table.header.size() != schema.fields.size()) throw SchemaError("build_vocabulary: header/schema arity mismatch");
  for (std::size_t i = 0; i < schema.fields.size(); ++i) {
    if (table.header[i] != schema.fields[i].name) {
      throw SchemaError("build_vocabulary: column '" + table.header[i] + "' does not match schema");
    }
  }
  std::vector<FieldVocab> fields;
  std::map<std::string, QuantizerSpec> quantizers;
  for (const ModelField& mf : tabformer::model_fields(schema)) {
    FieldVocab f;
    f.field_name = mf.name;
    switch (mf.kind) {
      case ModelFieldKind::categorical: {
        std::set<std::string> values;
        for (const auto& row : table.rows) values.insert(row[mf.column]);
        f.tokens.assign(values.begin(), values.end());
        break;
      }
      case ModelFieldKind::continuous: {
        std::vector<double> values;
        values.reserve(table.rows.size());
        for (const auto& row : table.rows) {
          if (auto v = parse_double(row[mf.column])) values.push_back(*v);
        }
        if (values.empty()) throw SchemaError("build_vocabulary: no numeric values in '" + mf.name + "'");
        auto bins_it = config.bins_per_field.find(mf.name);
        QuantizerSpec q = fit_quantizer(values, bins_it == config.bins_per_field.end() ? config.default_bins : bins_it->second);
        q.field_name = mf.name;
        for (std::size_t b = 0; b < q.bin_count; ++b) f.tokens.push_back(std::to_string(b));
        quantizers.emplace(mf.name, std::move(q));
        break;
      }
      case ModelFieldKind::hour:
        for (int h = 0; h < 24; ++h) f.tokens.push_back(std::to_string(h));
        break;
      case ModelFieldKind::day_of_week:
        for (int d = 0; d < 7; ++d) f.tokens.push_back(std::to_string(d));
        break;
    }
    fields.push_back(std::move(f));
  }
  return Vocabulary(schema, std::move(fields), std::move(quantizers));
}

void save_vocabulary(const Vocabulary& vocab, const std::string& dir) {
  std::filesystem::path d(dir);
  write_file(d / "schema.json", vocab.schema_text());
  write_file(d / "vocab.tsv", vocab.vocab_text());
  write_file(d / "quantizers.json", vocab.quantizer_text());
}

Vocabulary load_vocabulary(const std::string& dir) {
  std::filesystem::path d(dir);
  return Vocabulary::from_texts(read_file(d / "schema.json"), read_file(d / "vocab.tsv"),
                                read_file(d / "quantizers.json"));
}

}  // namespace tabformer
