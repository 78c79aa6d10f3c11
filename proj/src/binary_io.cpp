#include "wtal/binary_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "wtal/errors.hpp"

namespace wtal::io {

static_assert(std::endian::native == std::endian::little,
              "binary containers are written with native little-endian stores");

std::uint32_t crc32(std::span<const std::uint8_t> bytes) noexcept {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = ::crc32(crc, bytes.data() + pos, static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::bytes(std::span<const std::uint8_t> data) {
  buffer_.insert(buffer_.end(), data.begin(), data.end());
}

void ByteWriter::magic(std::string_view tag) {
  for (char c : tag) buffer_.push_back(static_cast<std::uint8_t>(c));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buffer_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buffer_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> values) {
  const std::size_t at = buffer_.size();
  buffer_.resize(at + values.size() * sizeof(double));
  if (!values.empty()) std::memcpy(buffer_.data() + at, values.data(), values.size_bytes());
}

void ByteWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  for (char c : s) buffer_.push_back(static_cast<std::uint8_t>(c));
}

void ByteWriter::crc_from(std::size_t from) {
  const auto crc = crc32(std::span(buffer_).subspan(from));
  u32(crc);
}

void ByteReader::need(std::size_t n, const char* what) const {
  if (remaining() < n) {
    throw FormatError(std::string("truncated input while reading ") + what, pos_);
  }
}

void ByteReader::expect_magic(std::string_view tag) {
  need(tag.size(), "magic");
  if (std::memcmp(data_.data() + pos_, tag.data(), tag.size()) != 0) {
    throw FormatError("bad magic, expected \"" + std::string(tag) + "\"", pos_);
  }
  pos_ += tag.size();
}

std::uint8_t ByteReader::u8() {
  need(1, "u8");
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::f64s(std::span<double> out) {
  need(out.size_bytes(), "float64 block");
  if (!out.empty()) std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

std::string ByteReader::string() {
  const std::uint32_t n = u32();
  need(n, "string body");
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  need(n, "byte block");
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::verify_crc_from(std::size_t from) {
  const std::size_t crc_at = pos_;
  const auto expected = crc32(data_.subspan(from, crc_at - from));
  const std::uint32_t stored = u32();
  if (stored != expected) throw FormatError("checksum mismatch", crc_at);
}

void ByteReader::expect_end() const {
  if (remaining() != 0) throw FormatError("trailing bytes after container", pos_);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace wtal::io
