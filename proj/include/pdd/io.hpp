#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>

namespace pdd {

static_assert(std::endian::native == std::endian::little, "binary artifacts assume a little-endian host");

/// Appends little-endian fields to an in-memory buffer.
class ByteWriter {
 public:
  void bytes(std::string_view raw) { buffer_.append(raw); }
  void u32(std::uint32_t v) { append(v); }
  void u64(std::uint64_t v) { append(v); }
  void f64(double v) { append(v); }
  void name(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buffer_.append(s);
  }
  const std::string& buffer() const noexcept { return buffer_; }

 private:
  template <typename T>
  void append(T v) {
    buffer_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  std::string buffer_;
};

/// Bounds-checked reader; every read names the field it was decoding so a
/// truncated file reports where it ended.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

  std::string_view bytes(std::size_t n, std::string_view field);
  std::uint32_t u32(std::string_view field) { return read<std::uint32_t>(field); }
  std::uint64_t u64(std::string_view field) { return read<std::uint64_t>(field); }
  double f64(std::string_view field) { return read<double>(field); }
  std::string name(std::string_view field);
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  const std::string& source() const noexcept { return source_; }

 private:
  template <typename T>
  T read(std::string_view field) {
    T v;
    const auto raw = bytes(sizeof v, field);
    std::memcpy(&v, raw.data(), sizeof v);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string source_;
};

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Appends one line (a trailing newline is added).
void append_line(const std::filesystem::path& path, std::string_view line);

}  // namespace pdd
