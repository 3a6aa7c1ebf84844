#include "gem/binary_io.hpp"

#include <iterator>

namespace gem::binary {

void Writer::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
  if (!out) throw Error("write failed: " + path.string());
}

Reader::Reader(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw FormatError(path_.string() + ": cannot open");
  bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void Reader::fail(const std::string& what) const {
  throw FormatError(path_.string() + ": " + what);
}

void Reader::expect_magic(std::string_view m) {
  if (remaining() < m.size() || std::string_view(bytes_.data() + pos_, m.size()) != m) {
    fail("bad magic, expected \"" + std::string(m) + "\"");
  }
  pos_ += m.size();
}

std::uint64_t Reader::take(int n) {
  if (remaining() < static_cast<std::size_t>(n)) fail("truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
  }
  pos_ += n;
  return v;
}

std::uint32_t Reader::u32() { return static_cast<std::uint32_t>(take(4)); }

std::uint64_t Reader::u64() { return take(8); }

double Reader::f32() {
  const auto bits = static_cast<std::uint32_t>(take(4));
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

void Reader::expect_end() const {
  if (remaining() != 0) fail(std::to_string(remaining()) + " trailing bytes");
}

}  // namespace gem::binary
