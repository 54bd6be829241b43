#include "tabformer/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "tabformer/hash.hpp"

namespace tabformer {
namespace {

constexpr std::string_view kMagic = "TABCKPT1";

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated file");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedArray& Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw std::runtime_error("checkpoint: no array named '" + std::string(name) + "'");
}

std::string Checkpoint::vocab_fingerprint() const {
  auto it = metadata.find("vocab_fingerprint");
  if (it == metadata.end() || !it->is_string()) return {};
  return it->get<std::string>();
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kMagic);
  nlohmann::json meta = checkpoint.metadata;
  meta["format_version"] = kCheckpointFormatVersion;
  const std::string text = meta.dump();
  put_le<std::uint64_t>(out, text.size());
  out += text;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.arrays.size()));
  for (const auto& a : checkpoint.arrays) {
    if (shape_numel(a.shape) != a.values.size()) throw std::runtime_error("checkpoint: array '" + a.name + "' shape mismatch");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) put_le<std::uint64_t>(out, d);
    for (float f : a.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw std::runtime_error("checkpoint: bad magic");
  Checkpoint ck;
  const auto meta_len = r.get<std::uint64_t>();
  ck.metadata = nlohmann::json::parse(r.take(meta_len));
  if (ck.metadata.value("format_version", -1) != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format version");
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = std::string(r.take(r.get<std::uint32_t>()));
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    a.values.resize(shape_numel(a.shape));
    for (float& f : a.values) f = std::bit_cast<float>(r.get<std::uint32_t>());
    ck.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file(path, serialize_checkpoint(checkpoint));
}

void require_fingerprint(const Checkpoint& checkpoint, const std::string& expected) {
  const std::string actual = checkpoint.vocab_fingerprint();
  if (actual != expected) {
    throw FingerprintMismatch("vocab fingerprint mismatch: checkpoint has '" + actual + "', expected '" + expected +
                              "'");
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::string> expected_fingerprint) {
  Checkpoint ck = deserialize_checkpoint(read_file(path));
  if (expected_fingerprint) require_fingerprint(ck, *expected_fingerprint);
  return ck;
}

template <typename T>
Checkpoint make_checkpoint(const NamedParams<T>& params, nlohmann::json metadata) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  for (const auto& [name, t] : params) {
    NamedArray a{name, t.shape(), {}};
    a.values.assign(t.data().begin(), t.data().end());
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

template <typename T>
void load_params(const Checkpoint& checkpoint, NamedParams<T>& params) {
  for (auto& [name, t] : params) {
    const NamedArray& a = checkpoint.find(name);
    if (a.shape != t.shape()) {
      throw std::runtime_error("checkpoint: array '" + name + "' has shape " + shape_str(a.shape) + ", model expects " +
                               shape_str(t.shape()));
    }
    auto dst = t.data_mut();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a.values[i]);
  }
}

template Checkpoint make_checkpoint(const NamedParams<float>&, nlohmann::json);
template Checkpoint make_checkpoint(const NamedParams<double>&, nlohmann::json);
template void load_params(const Checkpoint&, NamedParams<float>&);
template void load_params(const Checkpoint&, NamedParams<double>&);

}  // namespace tabformer
