#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evoada/tensor.hpp"

namespace evoada {

/// Little-endian byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f32(float v);
  void f64(double v);
  void raw(std::string_view bytes) { buf_.append(bytes); }
  /// u32 length prefix, then bytes.
  void blob(std::string_view bytes);
  /// u16 length prefix, then bytes.
  void short_string(std::string_view s);

  const std::string& bytes() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

/// Little-endian byte source; throws FormatError on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  float f32();
  double f64();
  std::string_view raw(std::size_t n);
  std::string blob();
  std::string short_string();

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::uint64_t get_le(int n);
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

/// Weight blob: "EVOW", u16 version, then per array: u16 name length, name,
/// u8 rank, u32 dims, little-endian float32 values.
inline constexpr std::uint16_t kWeightBlobVersion = 1;

std::string write_weight_blob(const std::vector<NamedTensor>& arrays);
std::vector<NamedTensor> read_weight_blob(std::string_view bytes);

/// 64-bit FNV-1a; the hex form (16 digits) is used for config digests.
std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a_hex(std::string_view bytes);

std::string read_file(const std::string& path);
/// Writes to path + ".tmp" then renames over path.
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace evoada
