#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tabformer/optim.hpp"
#include "tabformer/tensor.hpp"

namespace tabformer {

inline constexpr int kCheckpointFormatVersion = 1;

class FingerprintMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Named f32 arrays plus a JSON metadata block. The metadata carries
/// `format_version`, the model hyperparameters and `vocab_fingerprint`.
struct Checkpoint {
  nlohmann::json metadata;
  std::vector<NamedArray> arrays;

  const NamedArray& find(std::string_view name) const;
  std::string vocab_fingerprint() const;
};

/// Layout: "TABCKPT1", u64 metadata length, metadata JSON, u32 array count,
/// then per array: u32 name length, name, u32 rank, u64 dims, f32 values.
/// All integers and floats little-endian.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws FingerprintMismatch when `expected_fingerprint` is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::string> expected_fingerprint = std::nullopt);
void require_fingerprint(const Checkpoint& checkpoint, const std::string& expected);

template <typename T>
Checkpoint make_checkpoint(const NamedParams<T>& params, nlohmann::json metadata);

/// Copies checkpoint values into `params` by name; shapes must agree.
template <typename T>
void load_params(const Checkpoint& checkpoint, NamedParams<T>& params);

}  // namespace tabformer
