#pragma once

// Checkpoint file (all integers little-endian):
//
//   "CRVT"                      magic
//   u32   version               (1)
//   u64   config length, then that many bytes of model config text
//   u64   tensor count
//   per tensor:
//     u32 name length, name bytes
//     u32 rank, u64 dims[rank]
//     u64 byte offset of the tensor's data from the start of the payload
//   payload: float32 arrays in directory order
//
// Tensors appear in Parameters::visit order. Values are stored as float32,
// so a save/load/save cycle is byte-identical.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crossvit/config.hpp"
#include "crossvit/model.hpp"

namespace crossvit {

inline constexpr char kCheckpointMagic[4] = {'C', 'R', 'V', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void seek(std::size_t p) {
    if (p > bytes_.size()) throw FormatError("checkpoint truncated");
    pos_ = p;
  }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw FormatError("checkpoint truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> checkpoint_bytes(const Parameters& params, const ModelConfig& config) {
  const auto tensors = params.named();
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string text = to_text(config);
  w.u64(text.size());
  w.raw(text.data(), text.size());
  w.u64(tensors.size());
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    w.u64(offset);
    offset += 4 * t.numel();
  }
  for (const auto& [_, t] : tensors)
    for (double v : t.data()) w.f32(static_cast<float>(v));
  return std::move(w.bytes());
}

struct Checkpoint {
  Parameters params;
  ModelConfig config;
};

// The tensor directory is checked against a skeleton built from `expected`
// when given, otherwise from the embedded config.
inline Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes,
                                   const ModelConfig* expected_config = nullptr) {
  detail::ByteReader r(bytes);
  if (r.str(4) != std::string(kCheckpointMagic, 4)) throw FormatError("not a checkpoint: bad magic");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  const std::uint64_t text_len = r.u64();
  if (text_len > r.remaining()) throw FormatError("checkpoint truncated");
  ModelConfig config = parse_model_config(r.str(text_len));
  if (expected_config) config = *expected_config;

  Parameters params = build(config, 0);
  const auto expected = params.named();
  const std::uint64_t count = r.u64();
  if (count != expected.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(expected.size()));
  std::vector<std::uint64_t> offsets;
  std::uint64_t payload_bytes = 0;
  for (const auto& [name, tensor] : expected) {
    const std::uint32_t name_len = r.u32();
    if (name_len > r.remaining()) throw FormatError("checkpoint truncated");
    const std::string file_name = r.str(name_len);
    if (file_name != name)
      throw FormatError("tensor '" + file_name + "' found where '" + name + "' was expected");
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("tensor '" + name + "': implausible rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u64());
    if (shape != tensor.shape())
      throw FormatError("shape mismatch for tensor '" + name + "': file has " + shape_str(shape) +
                        ", config expects " + shape_str(tensor.shape()));
    const std::uint64_t offset = r.u64();
    if (offset != payload_bytes)
      throw FormatError("tensor '" + name + "': unexpected payload offset " + std::to_string(offset));
    offsets.push_back(offset);
    payload_bytes += 4 * tensor.numel();
  }
  if (r.remaining() < payload_bytes) throw FormatError("checkpoint truncated: payload incomplete");
  if (r.remaining() > payload_bytes) throw FormatError("checkpoint has trailing bytes");
  const std::size_t payload = r.position();
  for (std::size_t i = 0; i < expected.size(); ++i) {
    r.seek(payload + offsets[i]);
    Tensor t = expected[i].second;
    for (double& v : t.mutable_data()) v = static_cast<double>(r.f32());
  }
  return {std::move(params), std::move(config)};
}

inline void save_checkpoint(const Parameters& params, const ModelConfig& config,
                            const std::string& path) {
  const auto bytes = checkpoint_bytes(params, config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing '" + path + "'");
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file_bytes(path));
}

// Loads into the architecture of `expected`; any tensor whose stored shape
// differs is reported by name.
inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
  return parse_checkpoint(read_file_bytes(path), &expected);
}

}  // namespace crossvit
