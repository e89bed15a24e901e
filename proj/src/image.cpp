#include "dpmface/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "dpmface/error.hpp"

namespace dpmface {

GrayImage::GrayImage(int width, int height, double fill)
    : GrayImage(width, height,
                std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                        static_cast<std::size_t>(std::max(height, 0)),
                                    fill)) {}

GrayImage::GrayImage(int width, int height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
  if (width <= 0 || height <= 0) {
    throw InvalidParameter("image dimensions must be positive");
  }
  if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw InvalidInput("image data length does not match width x height");
  }
}

double GrayImage::clamped(int x, int y) const {
  x = std::clamp(x, 0, width_ - 1);
  y = std::clamp(y, 0, height_ - 1);
  return at(x, y);
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  return token;
}

int parse_header_int(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = next_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw IoError("malformed PGM header in " + path.string());
  }
}

}  // namespace

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (next_token(in) != "P5") throw IoError("not a binary PGM (P5): " + path.string());

  PgmImage pgm;
  pgm.width = parse_header_int(in, path);
  pgm.height = parse_header_int(in, path);
  pgm.maxval = parse_header_int(in, path);
  if (pgm.width <= 0 || pgm.height <= 0 || pgm.maxval <= 0 || pgm.maxval > 65535) {
    throw IoError("invalid PGM header values in " + path.string());
  }
  // next_token consumed exactly one whitespace byte after maxval.

  const std::size_t n = static_cast<std::size_t>(pgm.width) * pgm.height;
  pgm.samples.resize(n);
  if (pgm.maxval <= 255) {
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw IoError("truncated PGM " + path.string());
    std::copy(buf.begin(), buf.end(), pgm.samples.begin());
  } else {
    std::vector<unsigned char> buf(2 * n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(2 * n));
    if (static_cast<std::size_t>(in.gcount()) != 2 * n) throw IoError("truncated PGM " + path.string());
    for (std::size_t i = 0; i < n; ++i) {
      pgm.samples[i] = static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    }
  }
  return pgm;
}

void write_pgm(const std::filesystem::path& path, const PgmImage& pgm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << pgm.width << ' ' << pgm.height << '\n' << pgm.maxval << '\n';
  if (pgm.maxval <= 255) {
    std::vector<unsigned char> buf(pgm.samples.begin(), pgm.samples.end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  } else {
    std::vector<unsigned char> buf(2 * pgm.samples.size());
    for (std::size_t i = 0; i < pgm.samples.size(); ++i) {
      buf[2 * i] = static_cast<unsigned char>(pgm.samples[i] >> 8);
      buf[2 * i + 1] = static_cast<unsigned char>(pgm.samples[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

GrayImage to_gray(const PgmImage& pgm) {
  std::vector<double> data(pgm.samples.size());
  const double scale = 1.0 / pgm.maxval;
  std::transform(pgm.samples.begin(), pgm.samples.end(), data.begin(),
                 [scale](std::uint16_t s) { return s * scale; });
  GrayImage img(pgm.width, pgm.height, std::move(data));
  img.set_bit_depth_origin(pgm.bit_depth());
  return img;
}

PgmImage quantize(const GrayImage& img, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw InvalidParameter("bit depth must be 8 or 16");
  PgmImage pgm;
  pgm.width = img.width();
  pgm.height = img.height();
  pgm.maxval = bit_depth == 8 ? 255 : 65535;
  pgm.samples.resize(img.size());
  const auto src = img.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = std::clamp(src[i], 0.0, 1.0) * pgm.maxval;
    pgm.samples[i] = static_cast<std::uint16_t>(std::lround(v));
  }
  return pgm;
}

void write_pgm_debug(const std::filesystem::path& path, const GrayImage& img) {
  const auto src = img.data();
  const auto [lo, hi] = std::minmax_element(src.begin(), src.end());
  const double range = *hi - *lo;
  GrayImage stretched(img.width(), img.height());
  auto dst = stretched.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = range > 0 ? (src[i] - *lo) / range : 0.0;
  }
  write_pgm(path, quantize(stretched, 8));
}

GrayImage load_gray(const std::filesystem::path& path) { return to_gray(read_pgm(path)); }

}  // namespace dpmface
