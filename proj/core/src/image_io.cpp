#include "dcst/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcst/error.hpp"

namespace dcst {

namespace {

std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in, const std::filesystem::path& path) {
  std::string tok;
  while (true) {
    const int c = in.get();
    if (c == EOF) throw DataError(path.string() + ": truncated PNM header");
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
}

void write_pnm(const std::filesystem::path& path, const char* magic, std::int64_t channels,
               std::int64_t h, std::int64_t w, std::span<const float> planar) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << magic << '\n' << w << ' ' << h << "\n255\n";
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(channels * h * w));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < channels; ++c)
        bytes[(y * w + x) * channels + c] = quantize(planar[(c * h + y) * w + x]);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  const auto magic = header_token(in, path);
  std::int64_t channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw DataError(path.string() + ": unsupported image format '" + magic + "'");
  std::int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(header_token(in, path));
    h = std::stoll(header_token(in, path));
    maxval = std::stoll(header_token(in, path));
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": malformed PNM header");
  }
  if (w < 1 || h < 1 || maxval != 255) {
    throw DataError(path.string() + ": only 8-bit images with positive size are supported");
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(channels * h * w));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  std::vector<float> planar(bytes.size());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < channels; ++c)
        planar[(c * h + y) * w + x] = bytes[(y * w + x) * channels + c] / 255.0f;
  return Tensor::from({channels, h, w}, std::move(planar));
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_ppm: expected [3, H, W], got " + to_string(image.shape()));
  }
  write_pnm(path, "P6", 3, image.dim(1), image.dim(2), image.data());
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  const auto& s = map.shape();
  if (s.size() < 2 || s.size() > 4 ||
      !std::all_of(s.begin(), s.end() - 2, [](std::int64_t d) { return d == 1; })) {
    throw ShapeError("write_pgm: expected a single map, got " + to_string(s));
  }
  write_pnm(path, "P5", 1, s[s.size() - 2], s.back(), map.data());
}

}  // namespace dcst
