#include "pdd/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "pdd/tensor.hpp"

namespace pdd {

std::string_view ByteReader::bytes(std::size_t n, std::string_view field) {
  if (n > remaining()) {
    throw FormatError(source_ + ": truncated while reading " + std::string(field) + " (need " + std::to_string(n) +
                      " bytes at offset " + std::to_string(pos_) + ", " + std::to_string(remaining()) + " left)");
  }
  const auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::name(std::string_view field) {
  const auto length = u32(field);
  return std::string(bytes(length, field));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  std::ostringstream contents;
  contents << in.rdbuf();
  if (in.bad()) throw Error("failed reading " + path.string());
  return contents.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto temp = path;
  temp += ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + temp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(temp, ignored);
      throw Error("failed writing " + temp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(temp, path, ec);
  if (ec) {
    std::filesystem::remove(temp, ec);
    throw Error("cannot move " + temp.string() + " to " + path.string());
  }
}

void append_line(const std::filesystem::path& path, std::string_view line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot open " + path.string() + " for appending");
  out << line << '\n';
  if (!out) throw Error("failed appending to " + path.string());
}

}  // namespace pdd
