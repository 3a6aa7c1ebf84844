#include "gem/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace gem {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

[[noreturn]] void bad(const std::filesystem::path& path, const std::string& what) {
  throw FormatError(path.string() + ": " + what);
}

}  // namespace

Image quantize8(Image img) {
  for (double& v : img.pixels) v = to_byte(v) / 255.0;
  return img;
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open image");
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* field) {
    skip_space();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) {
      v = v * 10 + static_cast<std::size_t>(data[pos] - '0');
      if (v > (1u << 20)) bad(path, std::string("implausible ") + field);
      ++pos;
    }
    if (pos == start) bad(path, std::string("missing ") + field);
    return v;
  };
  if (data.size() < 2 || data[0] != 'P' || (data[1] != '5' && data[1] != '6')) {
    bad(path, "not a binary PGM/PPM file");
  }
  const std::size_t channels = data[1] == '5' ? 1 : 3;
  pos = 2;
  const std::size_t w = number("width");
  const std::size_t h = number("height");
  const std::size_t maxval = number("maxval");
  if (w == 0 || h == 0) bad(path, "zero image size");
  if (maxval != 255) bad(path, "only 8-bit images (maxval 255) are supported");
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) {
    bad(path, "malformed header");
  }
  ++pos;
  const std::size_t n = w * h * channels;
  if (data.size() - pos != n) {
    bad(path, "pixel payload is " + std::to_string(data.size() - pos) + " bytes, expected " +
                  std::to_string(n));
  }
  Image img(w, h, channels);
  for (std::size_t i = 0; i < n; ++i) {
    img.pixels[i] = static_cast<unsigned char>(data[pos + i]) / 255.0;
  }
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw InvalidArgument("write_pnm: images must have 1 or 3 channels");
  }
  std::string out = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (double v : img.pixels) out.push_back(static_cast<char>(to_byte(v)));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(path.string() + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError(path.string() + ": write failed");
}

}  // namespace gem
