#pragma once

// Checkpoint container. Self-describing binary file:
//
//   offset 0   magic "FSRCKPT1" (8 bytes)
//   offset 8   format version, u32 little-endian (currently 1)
//              config record: u32 entry count, then per entry two
//              length-prefixed strings (u32 length + bytes): key, value;
//              keys are sorted, so identical content encodes identically
//              tensor record: u64 tensor count, then per tensor a
//              length-prefixed name, u32 rank, u64 per-dimension sizes,
//              and the raw values as little-endian 64-bit floats
//   tail       u64 little-endian fnv-1a checksum of all preceding bytes
//
// Writes are atomic (temp file + rename). Loads verify magic, checksum, and
// version before parsing, so a corrupt file fails with a checksum error
// rather than garbage tensors.

#include <frontsr/model.hpp>
#include <frontsr/tensor.hpp>
#include <frontsr/util.hpp>

#include <bit>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace frontsr::ckpt {

inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kMaxRank = 8;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, std::uint32_t(s.size()));
  out.append(s);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::uint8_t(bytes_[pos_ + std::size_t(i)]);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | std::uint8_t(bytes_[pos_ + std::size_t(i)]);
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) {
    check_runtime(pos_ + n <= end_, "checkpoint file truncated");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace detail

class Checkpoint {
 public:
  void set(const std::string& key, const std::string& value) { config_[key] = value; }

  bool has(const std::string& key) const { return config_.find(key) != config_.end(); }

  const std::string& get(const std::string& key) const {
    auto it = config_.find(key);
    check_runtime(it != config_.end(), "checkpoint missing config entry: " + key);
    return it->second;
  }

  const std::map<std::string, std::string>& config() const { return config_; }

  void add_tensor(const std::string& name, Tensor value) {
    check_runtime(index_.find(name) == index_.end(), "duplicate checkpoint tensor: " + name);
    check_runtime(value.rank() <= kMaxRank, "checkpoint tensor rank too large: " + name);
    index_[name] = tensors_.size();
    tensors_.emplace_back(name, std::move(value));
  }

  bool has_tensor(const std::string& name) const { return index_.find(name) != index_.end(); }

  const Tensor& tensor(const std::string& name) const {
    auto it = index_.find(name);
    check_runtime(it != index_.end(), "checkpoint missing tensor: " + name);
    return tensors_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

 private:
  std::map<std::string, std::string> config_;
  std::vector<std::pair<std::string, Tensor>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::string encode(const Checkpoint& c) {
  std::string out = "FSRCKPT1";
  detail::put_u32(out, kVersion);
  detail::put_u32(out, std::uint32_t(c.config().size()));
  for (const auto& [k, v] : c.config()) {
    detail::put_str(out, k);
    detail::put_str(out, v);
  }
  detail::put_u64(out, c.tensors().size());
  for (const auto& [name, t] : c.tensors()) {
    detail::put_str(out, name);
    detail::put_u32(out, std::uint32_t(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) detail::put_u64(out, t.dim(d));
    for (std::size_t i = 0; i < t.size(); ++i) detail::put_f64(out, t[i]);
  }
  detail::put_u64(out, fnv1a(out.data(), out.size()));
  return out;
}

inline Checkpoint decode(const std::string& bytes) {
  check_runtime(bytes.size() >= 8 + 4 + 8, "checkpoint file truncated");
  check_runtime(bytes.compare(0, 8, "FSRCKPT1") == 0, "not a checkpoint file (bad magic)");
  std::uint64_t stored = 0;
  for (int i = 7; i >= 0; --i)
    stored = (stored << 8) | std::uint8_t(bytes[bytes.size() - 8 + std::size_t(i)]);
  check_runtime(stored == fnv1a(bytes.data(), bytes.size() - 8),
                "checkpoint checksum mismatch (file corrupt)");

  detail::Reader rd(bytes, bytes.size() - 8);
  rd.skip(8);  // magic, already verified
  const std::uint32_t version = rd.u32();
  check_runtime(version == kVersion,
                "unsupported checkpoint format version: " + std::to_string(version));

  Checkpoint c;
  const std::uint32_t n_config = rd.u32();
  for (std::uint32_t i = 0; i < n_config; ++i) {
    std::string k = rd.str();
    std::string v = rd.str();
    c.set(k, v);
  }
  const std::uint64_t n_tensors = rd.u64();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = rd.str();
    const std::uint32_t rank = rd.u32();
    check_runtime(rank <= kMaxRank, "checkpoint tensor rank too large: " + name);
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = rd.u64();
      check_runtime(dim >= 1 && dim <= (1ull << 32), "checkpoint tensor dimension invalid");
      shape[d] = std::size_t(dim);
      check_runtime(numel <= (std::size_t(1) << 40) / shape[d], "checkpoint tensor too large");
      numel *= shape[d];
    }
    Tensor t(std::move(shape));
    for (std::size_t j = 0; j < numel; ++j) t[j] = rd.f64();
    c.add_tensor(name, std::move(t));
  }
  check_runtime(rd.pos() == bytes.size() - 8, "checkpoint has trailing bytes");
  return c;
}

inline void save(const Checkpoint& c, const std::string& path) {
  write_file_atomic(path, encode(c));
}

inline Checkpoint load(const std::string& path) { return decode(read_file(path)); }

// Store every parameter of s under prefix+name.
inline void put_store(Checkpoint& c, const std::string& prefix, const model::ParamStore& s) {
  for (const std::string& n : s.names()) c.add_tensor(prefix + n, s.at(n).value);
}

// Overwrite every parameter of s from prefix+name; shapes must match.
inline void load_store(const Checkpoint& c, const std::string& prefix, model::ParamStore& s) {
  for (const std::string& n : s.names()) {
    const std::string key = prefix + n;
    check_runtime(c.has_tensor(key), "checkpoint missing parameter tensor: " + key);
    const Tensor& t = c.tensor(key);
    model::Parameter& p = s.at(n);
    check_runtime(t.same_shape(p.value), "checkpoint shape mismatch for " + key);
    p.value = t;
  }
}

}  // namespace frontsr::ckpt
