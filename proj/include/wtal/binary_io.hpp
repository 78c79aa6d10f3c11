#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wtal::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) noexcept;

/// Little-endian append-only byte buffer.
class ByteWriter {
 public:
  void bytes(std::span<const std::uint8_t> data);
  void magic(std::string_view tag);
  void u8(std::uint8_t v) { buffer_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void string(std::string_view s);  // u32 length + UTF-8 bytes

  // Appends CRC32 over buffer[from, end).
  void crc_from(std::size_t from);

  std::size_t size() const noexcept { return buffer_.size(); }
  const std::vector<std::uint8_t>& buffer() const noexcept { return buffer_; }
  std::vector<std::uint8_t> take() noexcept { return std::move(buffer_); }

 private:
  std::vector<std::uint8_t> buffer_;
};

/// Bounds-checked little-endian reader; every failure reports its byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64s(std::span<double> out);
  std::string string();
  std::span<const std::uint8_t> bytes(std::size_t n);

  // Reads the trailing CRC32 and checks it against data[from, crc position).
  void verify_crc_from(std::size_t from);
  void expect_end() const;

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace wtal::io
