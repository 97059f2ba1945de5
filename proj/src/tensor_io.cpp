#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "evoada/binary_io.hpp"
#include "evoada/errors.hpp"

namespace evoada {

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::blob(std::string_view bytes) {
  u32(static_cast<std::uint32_t>(bytes.size()));
  raw(bytes);
}

void ByteWriter::short_string(std::string_view s) {
  if (s.size() > 0xFFFF) throw std::length_error("string too long for u16 length prefix");
  u16(static_cast<std::uint16_t>(s.size()));
  raw(s);
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string_view ByteReader::raw(std::size_t n) {
  if (bytes_.size() - pos_ < n) throw FormatError("unexpected end of data");
  auto out = bytes_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::blob() {
  const auto n = u32();
  return std::string(raw(n));
}

std::string ByteReader::short_string() {
  const auto n = u16();
  return std::string(raw(n));
}

std::uint64_t ByteReader::get_le(int n) {
  auto b = raw(static_cast<std::size_t>(n));
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

std::string write_weight_blob(const std::vector<NamedTensor>& arrays) {
  ByteWriter w;
  w.raw("EVOW");
  w.u16(kWeightBlobVersion);
  for (const auto& a : arrays) {
    w.short_string(a.name);
    if (a.tensor.shape.size() > 255) throw std::length_error("tensor rank too large");
    w.u8(static_cast<std::uint8_t>(a.tensor.shape.size()));
    for (auto d : a.tensor.shape) w.u32(d);
    if (Tensor<float>::element_count(a.tensor.shape) != a.tensor.size())
      throw FormatError("tensor '" + a.name + "' data does not match its shape");
    for (float v : a.tensor.data) w.f32(v);
  }
  return w.take();
}

std::vector<NamedTensor> read_weight_blob(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.raw(4) != "EVOW") throw FormatError("weight blob: bad magic");
  const auto version = r.u16();
  if (version != kWeightBlobVersion)
    throw FormatError("weight blob: unsupported version " + std::to_string(version));
  std::vector<NamedTensor> out;
  while (!r.at_end()) {
    NamedTensor a;
    a.name = r.short_string();
    const auto rank = r.u8();
    for (int i = 0; i < rank; ++i) a.tensor.shape.push_back(r.u32());
    const auto n = Tensor<float>::element_count(a.tensor.shape);
    a.tensor.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.tensor.data[i] = r.f32();
    out.push_back(std::move(a));
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a_hex(std::string_view bytes) {
  const std::uint64_t h = fnv1a64(bytes);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace evoada
