#pragma once

// Little-endian binary encoding helpers and atomic file output.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace resgen {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(const std::vector<double>& v) {
    for (double x : v) f64(x);
  }
  // u64 length prefix followed by raw bytes.
  void str(std::string_view s) {
    u64(s.size());
    bytes(s);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string data, std::string context)
      : buf_(std::move(data)), context_(std::move(context)) {}

  // Reads exactly n bytes.
  std::string bytes(std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::vector<double> f64s(std::size_t n);
  std::string str();
  void expect_magic(std::string_view magic);
  void expect_version(std::uint32_t expected);
  std::size_t remaining() const { return buf_.size() - pos_; }
  void expect_end() const;
  const std::string& context() const { return context_; }

 private:
  void need(std::size_t n) const;
  std::string buf_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over `path`, so a failed
// write never leaves a partial file behind.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace resgen
