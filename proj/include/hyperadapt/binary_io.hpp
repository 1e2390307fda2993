#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

using Bytes = std::vector<std::uint8_t>;

/// Little-endian serializer used by all on-disk formats.
class BinaryWriter {
 public:
  void magic(std::string_view tag);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void i32(std::int32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void str(std::string_view s);

  const Bytes& bytes() const noexcept { return buf_; }
  Bytes take() noexcept { return std::move(buf_); }

 private:
  Bytes buf_;
};

/// Bounds-checked little-endian reader. Short reads raise FormatError naming
/// the expected and available byte counts.
class BinaryReader {
 public:
  BinaryReader(std::span<const std::uint8_t> data, std::string context);

  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint32_t u32();
  std::int32_t i32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::vector<double> f64s(std::size_t count);
  std::string str();

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }
  void expect_end() const;
  /// Throws unless `count` more bytes are available.
  void require(std::size_t count) const;

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string context_;
};

Bytes read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

// TNS1: "TNS1", u32 order, u32 extents[order], f64 data (row-major).
void write_tensor(BinaryWriter& w, const Tensor& t);
Tensor read_tensor(BinaryReader& r);
Bytes encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& context = "TNS1");
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace hyperadapt
