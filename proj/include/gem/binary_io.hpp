#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "gem/errors.hpp"

namespace gem::binary {

// Little-endian writer over an in-memory buffer; flushed to disk in one go.
class Writer {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put(bits, 4);
  }
  const std::vector<char>& bytes() const { return bytes_; }
  void write_file(const std::filesystem::path& path) const;

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::filesystem::path path);

  void expect_magic(std::string_view m);
  std::uint32_t u32();
  std::uint64_t u64();
  double f32();
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void expect_end() const;
  [[noreturn]] void fail(const std::string& what) const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::uint64_t take(int n);
  std::filesystem::path path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace gem::binary
