#include "dpmface/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dpmface/error.hpp"

namespace dpmface {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

BinaryWriter::BinaryWriter(const Magic& magic, std::uint32_t version) {
  raw(magic.data(), magic.size());
  u32(version);
}

void BinaryWriter::raw(const void* p, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  buf_.insert(buf_.end(), b, b + n);
}

void BinaryWriter::u32(std::uint32_t v) { raw(&v, sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { raw(&v, sizeof v); }
void BinaryWriter::i64(std::int64_t v) { raw(&v, sizeof v); }
void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(std::string_view s) {
  u64(s.size());
  raw(s.data(), s.size());
}

void BinaryWriter::vec(const Eigen::VectorXd& v) {
  u64(static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
}

void BinaryWriter::mat(const Eigen::MatrixXd& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  // Row-major on disk.
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
}

void BinaryWriter::dims(const std::vector<int>& d) {
  u64(d.size());
  for (int v : d) i64(v);
}

void BinaryWriter::save(const std::filesystem::path& path) const { write_file(path, buf_); }

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

BinaryReader::BinaryReader(const std::filesystem::path& path, const Magic& magic,
                           std::uint32_t version)
    : source_(path.string()), buf_(read_file(path)) {
  check_header(magic, version);
}

BinaryReader::BinaryReader(std::vector<unsigned char> bytes, const Magic& magic,
                           std::uint32_t version)
    : source_("<memory>"), buf_(std::move(bytes)) {
  check_header(magic, version);
}

void BinaryReader::check_header(const Magic& magic, std::uint32_t version) {
  Magic got{};
  raw(got.data(), got.size());
  if (got != magic) {
    throw IoError(source_ + ": wrong file type (expected " +
                  std::string(magic.data(), std::strlen(magic.data())) + ")");
  }
  const std::uint32_t v = u32();
  if (v != version) {
    throw IoError(source_ + ": unsupported format version " + std::to_string(v));
  }
}

void BinaryReader::raw(void* p, std::size_t n) {
  if (buf_.size() - pos_ < n) throw IoError(source_ + ": truncated file");
  std::memcpy(p, buf_.data() + pos_, n);
  pos_ += n;
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  raw(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  raw(&v, sizeof v);
  return v;
}

std::int64_t BinaryReader::i64() {
  std::int64_t v;
  raw(&v, sizeof v);
  return v;
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::str() {
  const std::uint64_t n = u64();
  if (buf_.size() - pos_ < n) throw IoError(source_ + ": truncated string");
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

Eigen::VectorXd BinaryReader::vec() {
  const std::uint64_t n = u64();
  if ((buf_.size() - pos_) / 8 < n) throw IoError(source_ + ": truncated vector");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = f64();
  return v;
}

Eigen::MatrixXd BinaryReader::mat() {
  const std::uint64_t rows = u64();
  const std::uint64_t cols = u64();
  if (cols != 0 && (buf_.size() - pos_) / 8 / cols < rows) {
    throw IoError(source_ + ": truncated matrix");
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
  }
  return m;
}

std::vector<int> BinaryReader::dims() {
  const std::uint64_t n = u64();
  if ((buf_.size() - pos_) / 8 < n) throw IoError(source_ + ": truncated dims");
  std::vector<int> d(n);
  for (auto& v : d) v = static_cast<int>(i64());
  return d;
}

void BinaryReader::expect_end() const {
  if (pos_ != buf_.size()) throw IoError(source_ + ": trailing bytes");
}

std::string content_id(const std::vector<unsigned char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kHex[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace dpmface
