#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tabformer/csv.hpp"

namespace tabformer {

// ---------------------------------------------------------------------------
// Schema

enum class FieldKind { categorical, continuous, timestamp, label, target };

std::string to_string(FieldKind kind);
FieldKind field_kind_from_string(const std::string& text);

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::categorical;
  bool include_in_model = true;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Column kinds for a CSV header. The ordering key is either the single
/// timestamp column or an explicit row-index column.
struct TableSchema {
  std::vector<FieldSpec> fields;
  std::size_t ordering_key = 0;
  /// Column grouping rows into entities (users, sites). Absent means the
  /// whole table is one entity.
  std::optional<std::size_t> entity_key;

  std::size_t column(const std::string& name) const;
  std::optional<std::size_t> label_column() const;
  std::vector<std::size_t> target_columns() const;
  /// Columns that feed the model, in header order.
  std::vector<std::size_t> model_columns() const;

  nlohmann::json to_json() const;
  static TableSchema from_json(const nlohmann::json& j);
};

struct TypeHints {
  std::map<std::string, FieldKind> kinds;
  /// Entity grouping column; it stays a categorical model field.
  std::optional<std::string> entity;
  /// Explicit integer row-index column used as the ordering key instead of
  /// a timestamp. It is excluded from the model.
  std::optional<std::string> row_index;
};

/// Unhinted columns default to categorical.
TableSchema infer_schema(std::span<const std::string> header, const TypeHints& hints);

/// Model fields after expanding timestamps into hour and day-of-week parts.
enum class ModelFieldKind { categorical, continuous, hour, day_of_week };

struct ModelField {
  std::string name;
  std::size_t column = 0;
  ModelFieldKind kind = ModelFieldKind::categorical;
};

std::vector<ModelField> model_fields(const TableSchema& schema);

/// "YYYY-MM-DD HH:MM[:SS]" (or 'T' separator). Returns hour and ISO-less
/// weekday (0 = Sunday) or nullopt when unparseable.
struct TimeParts {
  int hour = 0;
  int day_of_week = 0;
};
std::optional<TimeParts> parse_time_parts(const std::string& text);

// ---------------------------------------------------------------------------
// Quantization

/// Inner bucket edges for one continuous field: value v falls in bucket
/// b = #{edges <= v}. Edges are strictly ascending, so there are
/// edges.size() + 1 buckets. min/max record the fitted range so bucket
/// centers exist for the outer buckets.
struct QuantizerSpec {
  std::string field_name;
  std::vector<double> bin_edges;
  std::size_t bin_count = 1;
  double min_value = 0.0;
  double max_value = 0.0;

  std::size_t quantize(double value) const;
  double decode_center(std::size_t bucket) const;

  nlohmann::json to_json() const;
  static QuantizerSpec from_json(const nlohmann::json& j);
};

/// Equal-frequency binning. Edge k sits midway between the sorted values at
/// positions floor(k*n/bins)-1 and floor(k*n/bins); duplicates and edges at
/// the minimum are dropped, so constant data yields a single bucket.
QuantizerSpec fit_quantizer(std::span<const double> values, std::size_t bin_count);

// ---------------------------------------------------------------------------
// Vocabulary

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kMaskId = 1;
inline constexpr std::int32_t kUnkId = 2;
inline constexpr std::int32_t kSepId = 3;
inline constexpr std::int32_t kNumSpecialTokens = 4;

/// Local token set of one model field, placed at `offset` in the global id space.
struct FieldVocab {
  std::string field_name;
  ModelFieldKind kind = ModelFieldKind::categorical;
  std::vector<std::string> tokens;  // local id -> token string
  std::unordered_map<std::string, std::int32_t> token_to_id;
  std::int32_t offset = kNumSpecialTokens;

  std::int32_t size() const { return static_cast<std::int32_t>(tokens.size()); }
  bool owns(std::int32_t global_id) const { return global_id >= offset && global_id < offset + size(); }
  std::int32_t global_id(std::int32_t local_id) const { return offset + local_id; }
  /// Global id of a token string, or [UNK].
  std::int32_t encode(const std::string& token) const;
};

struct VocabConfig {
  std::size_t default_bins = 32;
  std::map<std::string, std::size_t> bins_per_field;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(TableSchema schema, std::vector<FieldVocab> fields, std::map<std::string, QuantizerSpec> quantizers);

  const TableSchema& schema() const { return schema_; }
  const std::vector<FieldVocab>& fields() const { return fields_; }
  const FieldVocab& field(std::size_t index) const { return fields_.at(index); }
  std::size_t field_count() const { return fields_.size(); }
  const std::map<std::string, QuantizerSpec>& quantizers() const { return quantizers_; }
  const std::vector<ModelField>& model_fields() const { return model_fields_; }
  /// Special tokens plus every field's range.
  std::int32_t total_size() const;
  std::vector<std::int32_t> field_sizes() const;

  /// Field index owning a global id, or nullopt for special tokens / out of range.
  std::optional<std::size_t> field_of(std::int32_t global_id) const;

  /// Raw CSV row -> one global id per model field.
  std::vector<std::int32_t> encode_row(std::span<const std::string> row) const;
  /// Token string (category, bucket index, hour, weekday) for a global id.
  std::string token_string(std::int32_t global_id) const;
  /// Value in source units: the category, or a bucket center for continuous fields.
  std::string decode_value(std::size_t field_index, std::int32_t global_id) const;

  /// Text vocab file (see write_vocab_file).
  std::string vocab_text() const;
  std::string quantizer_text() const;
  std::string schema_text() const;
  /// SHA-256 over the schema, vocab and quantizer texts.
  std::string fingerprint() const;

  static Vocabulary from_texts(const std::string& schema_text, const std::string& vocab_text,
                               const std::string& quantizer_text);

 private:
  void index();

  TableSchema schema_;
  std::vector<FieldVocab> fields_;
  std::map<std::string, QuantizerSpec> quantizers_;
  std::vector<ModelField> model_fields_;
};

/// Builds per-field vocabularies from (training) rows. Categorical tokens are
/// sorted lexicographically; hour and weekday fields always hold all values.
Vocabulary build_vocabulary(const Table& table, const TableSchema& schema, const VocabConfig& config = {});

/// Writes schema.json, vocab.tsv and quantizers.json into `dir`.
void save_vocabulary(const Vocabulary& vocab, const std::string& dir);
Vocabulary load_vocabulary(const std::string& dir);

// ---------------------------------------------------------------------------
// Windows

/// T x N grid of global ids for T contiguous rows of one entity.
struct WindowSample {
  std::string entity_id;
  std::size_t start_index = 0;
  std::size_t rows = 0;
  std::size_t fields = 0;
  std::vector<std::int32_t> tokens;  // row-major
  std::optional<int> label;
  std::vector<double> targets;

  std::int32_t at(std::size_t row, std::size_t field) const { return tokens[row * fields + field]; }
  std::int32_t& at(std::size_t row, std::size_t field) { return tokens[row * fields + field]; }
};

/// Encoded rows of one entity in chronological order.
struct EntityRows {
  std::string entity_id;
  std::vector<std::vector<std::int32_t>> tokens;
  std::vector<int> labels;                 // per row, when the schema has a label
  std::vector<std::vector<double>> targets;  // per row, one value per target column
};

/// Groups rows by entity (sorted by entity id) and orders each group by the
/// ordering key (stable). Label and target columns are parsed alongside.
std::vector<EntityRows> encode_table(const Table& table, const Vocabulary& vocab);

/// Window k covers rows [k*stride, k*stride + T). Count is
/// floor((M - T) / stride) + 1 when M >= T, else 0.
std::vector<WindowSample> make_windows(const EntityRows& rows, std::size_t window, std::size_t stride);
std::size_t window_count(std::size_t rows, std::size_t window, std::size_t stride);

enum class TargetAggregation { last_row, mean };

/// Label = 1 when any row in the window is labeled positive. Targets are the
/// last row's values or the window mean.
void attach_labels(std::vector<WindowSample>& windows, const EntityRows& rows, const TableSchema& schema,
                   TargetAggregation aggregation = TargetAggregation::last_row);

/// Windows of every entity, labels and targets attached when present.
std::vector<WindowSample> build_windows(const std::vector<EntityRows>& entities, const TableSchema& schema,
                                        std::size_t window, std::size_t stride,
                                        TargetAggregation aggregation = TargetAggregation::last_row);

/// True when every token lies in its column's field range or the special range.
bool validate_window(const WindowSample& window, const Vocabulary& vocab);

/// Parses "1", "yes", "true" (any case) as positive.
bool parse_label(const std::string& text);

}  // namespace tabformer
