#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include "resgen/binary.hpp"

namespace resgen {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

void ByteWriter::u32(std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf_.append(b, 4);
}

void ByteWriter::u64(std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf_.append(b, 8);
}

void ByteWriter::f64(double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf_.append(b, 8);
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw FormatError(context_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ", have " + std::to_string(remaining()) + ")");
  }
}

std::string ByteReader::bytes(std::size_t n) {
  need(n);
  std::string out = buf_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, buf_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

double ByteReader::f64() {
  need(8);
  double v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

std::vector<double> ByteReader::f64s(std::size_t n) {
  need(n * 8);
  std::vector<double> v(n);
  if (n) std::memcpy(v.data(), buf_.data() + pos_, n * 8);
  pos_ += n * 8;
  return v;
}

std::string ByteReader::str() {
  const std::uint64_t n = u64();
  return bytes(n);
}

void ByteReader::expect_magic(std::string_view magic) {
  if (remaining() < magic.size()) {
    throw FormatError(context_ + ": file too short for magic \"" + std::string(magic) + "\"");
  }
  std::string found = bytes(magic.size());
  if (found != magic) {
    throw FormatError(context_ + ": bad magic, expected \"" + std::string(magic) +
                      "\", found \"" + found + "\"");
  }
}

void ByteReader::expect_version(std::uint32_t expected) {
  const std::uint32_t found = u32();
  if (found != expected) {
    throw FormatError(context_ + ": unsupported format version, expected " +
                      std::to_string(expected) + ", found " + std::to_string(found));
  }
}

void ByteReader::expect_end() const {
  if (remaining() != 0) {
    throw FormatError(context_ + ": " + std::to_string(remaining()) + " trailing bytes");
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw std::runtime_error("read failed: " + path.string());
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw std::runtime_error("cannot move output into place at " + path.string());
  }
}

}  // namespace resgen
