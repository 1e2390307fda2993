#include "hyperadapt/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "hyperadapt/errors.hpp"

namespace hyperadapt {

namespace {

template <typename U>
void put_le(Bytes& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

constexpr std::uint32_t kMaxOrder = 16;

}  // namespace

void BinaryWriter::magic(std::string_view tag) { buf_.insert(buf_.end(), tag.begin(), tag.end()); }
void BinaryWriter::u8(std::uint8_t v) { buf_.push_back(v); }
void BinaryWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void BinaryWriter::i32(std::int32_t v) { put_le(buf_, static_cast<std::uint32_t>(v)); }
void BinaryWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void BinaryWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void BinaryWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }
void BinaryWriter::f64s(std::span<const double> values) {
  buf_.reserve(buf_.size() + 8 * values.size());
  for (double v : values) f64(v);
}
void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

BinaryReader::BinaryReader(std::span<const std::uint8_t> data, std::string context)
    : data_(data), context_(std::move(context)) {}

void BinaryReader::require(std::size_t count) const {
  if (remaining() < count) {
    throw FormatError(context_ + ": truncated input, expected " + std::to_string(pos_ + count) +
                      " bytes but only " + std::to_string(data_.size()) + " available");
  }
}

void BinaryReader::expect_magic(std::string_view tag) {
  require(tag.size());
  for (std::size_t i = 0; i < tag.size(); ++i) {
    if (data_[pos_ + i] != static_cast<std::uint8_t>(tag[i])) {
      throw FormatError(context_ + ": bad magic, expected \"" + std::string(tag) + "\"");
    }
  }
  pos_ += tag.size();
}

namespace {
template <typename U>
U get_le(std::span<const std::uint8_t> data, std::size_t pos) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(data[pos + i]) << (8 * i);
  return v;
}
}  // namespace

std::uint8_t BinaryReader::u8() {
  require(1);
  return data_[pos_++];
}
std::uint32_t BinaryReader::u32() {
  require(4);
  auto v = get_le<std::uint32_t>(data_, pos_);
  pos_ += 4;
  return v;
}
std::int32_t BinaryReader::i32() { return static_cast<std::int32_t>(u32()); }
std::uint64_t BinaryReader::u64() {
  require(8);
  auto v = get_le<std::uint64_t>(data_, pos_);
  pos_ += 8;
  return v;
}
float BinaryReader::f32() { return std::bit_cast<float>(u32()); }
double BinaryReader::f64() { return std::bit_cast<double>(u64()); }
std::vector<double> BinaryReader::f64s(std::size_t count) {
  require(8 * count);
  std::vector<double> out(count);
  for (auto& v : out) v = f64();
  return out;
}
std::string BinaryReader::str() {
  const auto n = u32();
  require(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

void BinaryReader::expect_end() const {
  if (remaining() != 0) {
    throw FormatError(context_ + ": " + std::to_string(remaining()) + " trailing bytes after payload");
  }
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_tensor(BinaryWriter& w, const Tensor& t) {
  w.magic("TNS1");
  w.u32(static_cast<std::uint32_t>(t.order()));
  for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
  w.f64s(t.data());
}

Tensor read_tensor(BinaryReader& r) {
  r.expect_magic("TNS1");
  const auto order = r.u32();
  if (order == 0 || order > kMaxOrder) throw FormatError("TNS1: unsupported order " + std::to_string(order));
  Shape shape(order);
  std::size_t count = 1;
  for (auto& e : shape) {
    e = r.u32();
    if (e == 0) throw FormatError("TNS1: zero extent");
    count *= e;
  }
  r.require(8 * count);
  return Tensor(std::move(shape), r.f64s(count));
}

Bytes encode_tensor(const Tensor& t) {
  BinaryWriter w;
  write_tensor(w, t);
  return w.take();
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& context) {
  BinaryReader r(bytes, context);
  auto t = read_tensor(r);
  r.expect_end();
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_atomic(path, encode_tensor(t)); }

Tensor load_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path), path.string()); }

}  // namespace hyperadapt
